//! Fourier transforms of atomic measures and of the random products `η^ω`,
//! decay-exponent estimation, and the three-phase quantities `ζ` and `α(ρ)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::random_model::{prefix_scalings, FactorFilter, OmegaPrefix, Truncation};
use crate::type_model::{AtomicMeasure, RandomModel, TypedSystem};

/// Value of a Fourier transform together with a bound on its truncation
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourierSample {
    pub xi: f64,
    #[serde(serialize_with = "ser_complex")]
    pub value: Complex64,
    pub tail_error: f64,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

impl FourierSample {
    pub fn exact(xi: f64, value: Complex64) -> Self {
        FourierSample { xi, value, tail_error: 0.0 }
    }

    /// `|value| + tail_error`, an upper bound on the true modulus.
    pub fn envelope(&self) -> f64 {
        self.value.norm() + self.tail_error
    }
}

/// `Σ w_k exp(−2πi x_k ξ)`.
pub fn ft_atomic(m: &AtomicMeasure, xi: f64) -> Complex64 {
    m.atoms()
        .iter()
        .map(|&(x, w)| {
            let (s, c) = (-2.0 * PI * x * xi).sin_cos();
            Complex64::new(w * c, w * s)
        })
        .sum()
}

/// `Σ_{n>D} 2π λ_sup^{n−1} t_sup |ξ|`.
pub fn tail_bound(model: &impl RandomModel, depth: usize, xi: f64) -> f64 {
    let l = model.max_contraction();
    2.0 * PI * model.translation_bound() * xi.abs() * l.powi(depth as i32) / (1.0 - l)
}

/// Smallest depth whose tail bound is at most `tol`.
pub fn certified_depth(model: &impl RandomModel, xi: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return invalid("tail tolerance must be positive");
    }
    let mut d = 0;
    while tail_bound(model, d, xi) > tol {
        d += 1;
        if d > crate::random_model::MAX_SAMPLE_DEPTH {
            return Err(Error::CapExceeded {
                what: "Fourier product depth",
                needed: d as u128,
                cap: crate::random_model::MAX_SAMPLE_DEPTH as u128,
                advice: None,
            });
        }
    }
    Ok(d)
}

/// `Π_n η̂(ω_n)(λ(ω|_{n−1}) ξ)` over the factors selected by `filter`.
///
/// With [`Truncation::Tail`] the product runs to the certified depth,
/// extending `ω` from its stream when needed, and `tail_error` is the
/// geometric tail bound at that depth. With [`Truncation::Prefix`] the
/// product is exact for the finite prefix.
pub fn ft_product(
    model: &impl RandomModel,
    omega: &OmegaPrefix,
    xi: f64,
    trunc: Truncation,
    filter: FactorFilter,
) -> Result<FourierSample> {
    let (omega, tail_error) = match trunc {
        Truncation::Prefix => (omega.clone(), 0.0),
        Truncation::Tail(tol) => {
            let d = certified_depth(model, xi, tol)?;
            (omega.prefix(model, d)?, tail_bound(model, d, xi))
        }
    };
    let scalings = prefix_scalings(model, omega.blocks());
    let mut value = Complex64::new(1.0, 0.0);
    for (n, (&b, &scale)) in omega.blocks().iter().zip(&scalings).enumerate() {
        if filter.includes(n + 1) {
            value *= ft_atomic(&model.eta(b)?, scale * xi);
        }
    }
    Ok(FourierSample { xi, value, tail_error })
}

/// [`ft_product`] at many frequencies, in parallel, in input order.
pub fn ft_product_many(
    model: &impl RandomModel,
    omega: &OmegaPrefix,
    xis: &[f64],
    trunc: Truncation,
    filter: FactorFilter,
) -> Result<Vec<FourierSample>> {
    // extend once so every frequency reads the same blocks
    let omega = match trunc {
        Truncation::Tail(tol) => {
            let far = xis.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            omega.prefix(model, certified_depth(model, far, tol)?.max(omega.len()))?
        }
        Truncation::Prefix => omega.clone(),
    };
    xis.par_iter().map(|&xi| ft_product(model, &omega, xi, trunc, filter)).collect()
}

/// `‖x‖`, the distance to the nearest integer.
pub fn dist_to_int(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// `|1 + exp(−2πi λ f₁ ξ) + exp(−2πi λ f₂ ξ)|`.
pub fn zeta(lambda_prefix: f64, f1: f64, f2: f64, xi: f64) -> f64 {
    let a = -2.0 * PI * lambda_prefix * xi;
    let z = Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, a * f1) + Complex64::from_polar(1.0, a * f2);
    z.norm()
}

/// The product bound `Π_{ω_n = τ₀} [ζ(n, ξ)/m(τ₀) + 1 − 3/m(τ₀)]`, using the
/// translations `picks` of the multiset `Ψ(τ₀)` as the three designated
/// maps.
pub fn three_map_bound(sys: &TypedSystem, omega: &OmegaPrefix, xi: f64, tau0: usize, picks: [usize; 3]) -> Result<f64> {
    let m = sys.map_count(tau0);
    if m < 3.0 {
        return invalid(format!("type has only {m} maps, three are needed"));
    }
    let t = sys.translations(tau0)?;
    if picks.iter().any(|&p| p >= t.len()) || picks[0] == picks[1] || picks[1] == picks[2] || picks[0] == picks[2] {
        return invalid("three distinct map indices are needed");
    }
    let (f1, f2) = (t[picks[1]] - t[picks[0]], t[picks[2]] - t[picks[0]]);
    let scalings = prefix_scalings(sys, omega.blocks());
    Ok(omega
        .blocks()
        .iter()
        .zip(&scalings)
        .filter(|(&b, _)| b == tau0)
        .map(|(_, &lam)| zeta(lam, f1, f2, xi) / m + (1.0 - 3.0 / m))
        .product())
}

/// Certified bounds on `α(ρ) = 3 − sup{ζ(x, y) : max(‖x‖, ‖y‖) ≥ ρ}`,
/// where `ζ(x, y) = |1 + e^{−2πix} + e^{−2πiy}|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBound {
    pub rho: f64,
    /// Certified: `ζ ≤ 3 − lower` on the constraint set.
    pub lower: f64,
    /// Attained: some admissible point has `ζ = 3 − upper`.
    pub upper: f64,
    pub cells: usize,
}

fn h(x: f64, y: f64) -> f64 {
    let t = 2.0 * PI;
    3.0 + 2.0 * (t * x).cos() + 2.0 * (t * y).cos() + 2.0 * (t * (x - y)).cos()
}

fn h_grad(x: f64, y: f64) -> (f64, f64) {
    let t = 2.0 * PI;
    let d = (t * (x - y)).sin();
    (-2.0 * t * ((t * x).sin() + d), -2.0 * t * ((t * y).sin() - d))
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    bound: f64,
}

impl Cell {
    fn new(cx: f64, cy: f64, a: f64, b: f64) -> (Cell, f64) {
        let v = h(cx, cy);
        let (gx, gy) = h_grad(cx, cy);
        // second derivatives of h are bounded by 16π², 16π² and 8π²
        let curv = 8.0 * PI * PI * (a * a + a * b + b * b);
        (Cell { cx, cy, a, b, bound: v + gx.abs() * a + gy.abs() * b + curv }, v)
    }
}

impl PartialEq for Cell {
    fn eq(&self, o: &Self) -> bool {
        self.bound == o.bound
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cell {
    fn cmp(&self, o: &Self) -> Ordering {
        self.bound.total_cmp(&o.bound)
    }
}

/// Branch-and-bound for `α(ρ)` on `[ρ, 1/2] × [−1/2, 1/2]`, which covers the
/// constraint set up to the symmetries `ζ(x,y) = ζ(y,x) = ζ(−x,−y)`.
/// Stops once the certified and attained values of `α` differ by at most
/// `tol`.
pub fn alpha_of_rho(rho: f64, tol: f64) -> Result<AlphaBound> {
    if !(rho > 0.0 && rho <= 0.5) {
        return invalid(format!("rho = {rho} outside (0, 1/2]"));
    }
    if !(tol > 0.0) {
        return invalid("alpha tolerance must be positive");
    }
    const MAX_CELLS: usize = 4_000_000;
    let (a0, b0) = ((0.5 - rho) / 2.0, 0.5);
    let (root, v) = Cell::new(rho + a0, 0.0, a0, b0);
    let mut best = v.max(h(rho, 0.5)).max(h(0.5, 0.5));
    let mut heap = BinaryHeap::new();
    heap.push(root);
    let mut cells = 1;
    let upper_h = loop {
        let Some(top) = heap.pop() else { break best };
        let gap = 3.0 - best.max(0.0).sqrt() - (3.0 - top.bound.max(0.0).sqrt());
        if gap <= tol || cells >= MAX_CELLS {
            break top.bound;
        }
        let children = if top.a >= top.b {
            let a = top.a / 2.0;
            [(top.cx - a, top.cy, a, top.b), (top.cx + a, top.cy, a, top.b)]
        } else {
            let b = top.b / 2.0;
            [(top.cx, top.cy - b, top.a, b), (top.cx, top.cy + b, top.a, b)]
        };
        for (cx, cy, a, b) in children {
            let (c, v) = Cell::new(cx, cy, a, b);
            best = best.max(v);
            cells += 1;
            if c.bound > best {
                heap.push(c);
            }
        }
    };
    let lower = 3.0 - upper_h.max(best).max(0.0).sqrt();
    let upper = 3.0 - best.max(0.0).sqrt();
    if lower <= 0.0 {
        return Err(Error::Insufficient(format!(
            "certified alpha({rho}) is not positive after {cells} cells; tighten the tolerance"
        )));
    }
    Ok(AlphaBound { rho, lower, upper, cells })
}

/// Estimated decay `|ν̂(ξ)| ≤ C |ξ|^{−s/2}` on a finite frequency range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub exponent: f64,
    pub constant: f64,
    pub xi_range: (f64, f64),
    pub slope: f64,
    pub bins: usize,
}

/// Least-squares fit of the dyadic-bin envelope `max(|ν̂| + tail)` against
/// `|ξ|` on log-log axes; the exponent is `−2·slope`, clamped at zero.
pub fn decay_exponent(samples: &[FourierSample]) -> Result<DecayEstimate> {
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.xi != 0.0).map(|s| (s.xi.abs(), s.envelope())).collect();
    if pts.len() < 20 {
        return Err(Error::Insufficient(format!("{} nonzero frequencies, need at least 20", pts.len())));
    }
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if (hi / lo).log10() < 3.0 {
        return Err(Error::Insufficient(format!(
            "frequencies span {:.2} decades, need at least 3",
            (hi / lo).log10()
        )));
    }
    let mut bins: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for &(xi, env) in &pts {
        let k = xi.log2().floor() as i64;
        let e = bins.entry(k).or_insert((xi, env));
        if env > e.1 {
            *e = (xi, env);
        }
    }
    if bins.len() < 2 {
        return Err(Error::Insufficient("fewer than two dyadic bins".into()));
    }
    let xs: Vec<f64> = bins.values().map(|b| b.0.ln()).collect();
    let ys: Vec<f64> = bins.values().map(|b| b.1.max(1e-300).ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    let exponent = (-2.0 * slope).max(0.0);
    let constant = pts.iter().map(|&(xi, env)| env * xi.powf(exponent / 2.0)).fold(0.0, f64::max);
    Ok(DecayEstimate { exponent, constant, xi_range: (lo, hi), slope, bins: bins.len() })
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `n` log-spaced frequencies on `[lo, hi]`.
pub fn log_frequencies(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n.max(2) - 1) as f64).exp()).collect()
}
