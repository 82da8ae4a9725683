//! Deterministic IFS geometry: similitudes, words, composition points, gap
//! statistics and fixed points.
//!
//! Words are stored with zero-based symbols: the map `ψ_1` of the usual
//! one-based notation is symbol `0` here.

use std::fmt;

use crate::error::{check_cap, invalid, Error, Result};

/// Default cap on the number of enumerated composition points.
pub const DEFAULT_POINT_CAP: u128 = 10_000_000;

/// Relative tolerance (times the point-cloud diameter) under which two
/// composition points count as an exact overlap.
pub const COINCIDENCE_REL_TOL: f64 = 1e-13;

/// Relative tolerance for the collinearity test on fixed points.
pub const COLLINEAR_REL_TOL: f64 = 1e-10;

/// Ambient points the maps act on: the real line or the plane.
pub trait Point: Copy + fmt::Debug + PartialEq + Send + Sync {
    fn origin() -> Self;
    fn add(self, other: Self) -> Self;
    fn sub(self, other: Self) -> Self;
    fn scale(self, r: f64) -> Self;
    fn norm(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Point for f64 {
    fn origin() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn sub(self, other: Self) -> Self {
        self - other
    }
    fn scale(self, r: f64) -> Self {
        self * r
    }
    fn norm(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// A point of the plane.
pub type Point2 = [f64; 2];

impl Point for Point2 {
    fn origin() -> Self {
        [0.0, 0.0]
    }
    fn add(self, o: Self) -> Self {
        [self[0] + o[0], self[1] + o[1]]
    }
    fn sub(self, o: Self) -> Self {
        [self[0] - o[0], self[1] - o[1]]
    }
    fn scale(self, r: f64) -> Self {
        [self[0] * r, self[1] * r]
    }
    fn norm(self) -> f64 {
        self[0].hypot(self[1])
    }
    fn is_finite(self) -> bool {
        self[0].is_finite() && self[1].is_finite()
    }
}

/// The homothety `x ↦ ratio·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similitude<P> {
    ratio: f64,
    translation: P,
}

impl<P: Point> Similitude<P> {
    pub fn new(ratio: f64, translation: P) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return invalid(format!("contraction ratio {ratio} outside (0,1)"));
        }
        if !translation.is_finite() {
            return invalid("translation is not finite");
        }
        Ok(Similitude { ratio, translation })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn translation(&self) -> P {
        self.translation
    }

    pub fn apply(&self, x: P) -> P {
        x.scale(self.ratio).add(self.translation)
    }

    /// The unique fixed point `t / (1 − λ)`.
    pub fn fixed_point(&self) -> P {
        self.translation.scale(1.0 / (1.0 - self.ratio))
    }
}

/// A finite word over the alphabet `{0, …, m−1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn new(symbols: Vec<usize>) -> Self {
        Word(symbols)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    /// Decodes the `index`-th word of length `n` in lexicographic order.
    pub fn from_index(mut index: u64, n: usize, m: usize) -> Self {
        let mut symbols = vec![0; n];
        for slot in symbols.iter_mut().rev() {
            *slot = (index % m as u64) as usize;
            index /= m as u64;
        }
        Word(symbols)
    }
}

impl From<Vec<usize>> for Word {
    fn from(v: Vec<usize>) -> Self {
        Word(v)
    }
}

/// Serialised with one-based symbols, like [`fmt::Display`].
impl serde::Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|x| x + 1))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one-based, the way words are usually written
        let parts: Vec<String> = self.0.iter().map(|s| (s + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// An iterated function system of homotheties together with a probability
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Ifs<P> {
    maps: Vec<Similitude<P>>,
    weights: Vec<f64>,
}

/// A system on the real line.
pub type Ifs1 = Ifs<f64>;
/// A system of homotheties of the plane.
pub type PlanarIfs = Ifs<Point2>;

pub(crate) fn validate_probability(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return invalid("empty probability vector");
    }
    if let Some(bad) = p.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
        return invalid(format!("probability {bad} is not strictly positive"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return invalid(format!("probabilities sum to {total}, not 1"));
    }
    Ok(())
}

impl<P: Point> Ifs<P> {
    pub fn new(maps: Vec<Similitude<P>>, weights: Vec<f64>) -> Result<Self> {
        if maps.is_empty() {
            return invalid("an IFS needs at least one map");
        }
        if maps.len() != weights.len() {
            return invalid(format!("{} maps but {} weights", maps.len(), weights.len()));
        }
        validate_probability(&weights)?;
        Ok(Ifs { maps, weights })
    }

    /// Builds the system from parallel lists of ratios and translations.
    pub fn from_parts(ratios: &[f64], translations: &[P], weights: Vec<f64>) -> Result<Self> {
        if ratios.len() != translations.len() {
            return invalid("ratio and translation lists differ in length");
        }
        let maps = ratios
            .iter()
            .zip(translations)
            .map(|(&r, &t)| Similitude::new(r, t))
            .collect::<Result<Vec<_>>>()?;
        Ifs::new(maps, weights)
    }

    /// Uniform weights `1/m`.
    pub fn uniform(ratios: &[f64], translations: &[P]) -> Result<Self> {
        let m = ratios.len().max(1);
        Ifs::from_parts(ratios, translations, vec![1.0 / m as f64; ratios.len()])
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[Similitude<P>] {
        &self.maps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.maps.iter().map(|s| s.ratio).collect()
    }

    pub fn translations(&self) -> Vec<P> {
        self.maps.iter().map(|s| s.translation).collect()
    }

    pub fn ratio_max(&self) -> f64 {
        self.maps.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }

    pub fn translation_max(&self) -> f64 {
        self.maps.iter().map(|s| s.translation.norm()).fold(0.0, f64::max)
    }

    /// `t_max / (1 − λ_max)`: every composition point lies in this ball.
    pub fn attractor_radius(&self) -> f64 {
        self.translation_max() / (1.0 - self.ratio_max())
    }

    pub fn similarity_dimension(&self) -> Result<f64> {
        similarity_dimension(&self.ratios(), &self.weights)
    }

    fn check_word(&self, w: &Word) -> Result<()> {
        match w.0.iter().find(|&&s| s >= self.maps.len()) {
            Some(s) => invalid(format!("symbol {s} out of range for {} maps", self.maps.len())),
            None => Ok(()),
        }
    }

    /// `ψ_{w_1} ∘ ⋯ ∘ ψ_{w_n}(0)`.
    pub fn compose_at_zero(&self, w: &Word) -> Result<P> {
        self.check_word(w)?;
        let mut acc = P::origin();
        let mut scale = 1.0;
        for &s in &w.0 {
            let map = &self.maps[s];
            acc = acc.add(map.translation.scale(scale));
            scale *= map.ratio;
        }
        Ok(acc)
    }

    /// `Δ_{i,j} = ψ_i(0) − ψ_j(0)` for words of equal length.
    pub fn pairwise_delta(&self, i: &Word, j: &Word) -> Result<P> {
        if i.len() != j.len() {
            return invalid(format!("word lengths differ: {} vs {}", i.len(), j.len()));
        }
        Ok(self.compose_at_zero(i)?.sub(self.compose_at_zero(j)?))
    }

    /// Composition points of all `m^n` words of length `n`, in lexicographic
    /// word order.
    pub fn level_points(&self, n: usize, cap: u128) -> Result<Vec<P>> {
        let m = self.maps.len() as u128;
        let count = m
            .checked_pow(n as u32)
            .ok_or(Error::CapExceeded { what: "level points", needed: u128::MAX, cap, advice: None })?;
        check_cap("level points", count, cap)?;
        let mut points = vec![P::origin()];
        for _ in 0..n {
            let mut next = Vec::with_capacity(points.len() * self.maps.len());
            for map in &self.maps {
                next.extend(points.iter().map(|&x| map.apply(x)));
            }
            points = next;
        }
        Ok(points)
    }
}

/// `Σ p_j log p_j / Σ p_j log λ_j`.
pub fn similarity_dimension(lambdas: &[f64], p: &[f64]) -> Result<f64> {
    if lambdas.len() != p.len() {
        return invalid(format!("{} ratios but {} weights", lambdas.len(), p.len()));
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return invalid(format!("ratio {l} outside (0,1)"));
    }
    validate_probability(p)?;
    let num: f64 = p.iter().map(|&w| w * w.ln()).sum();
    let den: f64 = p.iter().zip(lambdas).map(|(&w, &l)| w * l.ln()).sum();
    Ok(num / den)
}

/// Minimal gap between distinct level-`n` composition points of a system on
/// the line. Exact overlaps (gaps below `1e−13·diameter`) give exactly `0`.
pub fn delta_n(ifs: &Ifs1, n: usize) -> Result<f64> {
    delta_n_with(ifs, n, DEFAULT_POINT_CAP, COINCIDENCE_REL_TOL)
}

pub fn delta_n_with(ifs: &Ifs1, n: usize, cap: u128, rel_tol: f64) -> Result<f64> {
    if n == 0 {
        return invalid("delta_n needs n ≥ 1");
    }
    if ifs.len() < 2 {
        return invalid("delta_n needs at least two maps");
    }
    let mut points = ifs.level_points(n, cap)?;
    points.sort_by(f64::total_cmp);
    let diameter = points[points.len() - 1] - points[0];
    let tol = rel_tol * diameter;
    let mut best = f64::INFINITY;
    for pair in points.windows(2) {
        let gap = pair[1] - pair[0];
        if gap <= tol {
            return Ok(0.0);
        }
        best = best.min(gap);
    }
    Ok(best)
}

/// Outcome of the collinearity test on the fixed points of a planar system.
#[derive(Debug, Clone, PartialEq)]
pub struct Collinearity {
    pub collinear: bool,
    /// Fewer than three maps: the test cannot fail.
    pub degenerate: bool,
    /// Indices of three maps with non-collinear fixed points.
    pub witness: Option<[usize; 3]>,
}

/// Decides whether the fixed points of all maps lie on one line, within
/// `1e−10` times the diameter of the fixed-point cloud.
pub fn fixed_points_collinear(ifs: &PlanarIfs) -> Collinearity {
    let fixed: Vec<Point2> = ifs.maps().iter().map(|m| m.fixed_point()).collect();
    collinear_with_witness(&fixed, COLLINEAR_REL_TOL)
}

pub(crate) fn collinear_with_witness(points: &[Point2], rel_tol: f64) -> Collinearity {
    if points.len() < 3 {
        return Collinearity { collinear: true, degenerate: true, witness: None };
    }
    // the line through the two farthest points is the reference line
    let (mut a, mut b, mut diam) = (0, 0, 0.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].sub(points[j]).norm();
            if d > diam {
                (a, b, diam) = (i, j, d);
            }
        }
    }
    if diam == 0.0 {
        return Collinearity { collinear: true, degenerate: false, witness: None };
    }
    let dir = points[b].sub(points[a]).scale(1.0 / diam);
    let (mut c, mut far) = (0, 0.0);
    for (k, p) in points.iter().enumerate() {
        let v = p.sub(points[a]);
        let dist = (v[0] * dir[1] - v[1] * dir[0]).abs();
        if dist > far {
            (c, far) = (k, dist);
        }
    }
    if far <= rel_tol * diam {
        Collinearity { collinear: true, degenerate: false, witness: None }
    } else {
        let mut w = [a, b, c];
        w.sort_unstable();
        Collinearity { collinear: false, degenerate: false, witness: Some(w) }
    }
}

/// Twice the signed area of the triangle `(a, b, c)`.
pub fn cross(a: Point2, b: Point2, c: Point2) -> f64 {
    let u = b.sub(a);
    let v = c.sub(a);
    u[0] * v[1] - u[1] * v[0]
}
