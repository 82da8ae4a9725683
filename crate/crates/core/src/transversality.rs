//! Transversality certificates for parameter families, the gap-rate
//! diagnostic for `Δ_n`, non-collinearity witnesses, and covering counts for
//! sublevel sets of `|Δ_{i,j}|`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_cap, invalid, Error, Result};
use crate::fourier::least_squares_slope;
use crate::ifs_core::{cross, delta_n_with, Ifs1, PlanarIfs, Point, Point2, Word, COINCIDENCE_REL_TOL};
use crate::param_family::{delta_jet_from, family_delta_jet, ParamIfs1};

/// Default cap on the number of word pairs checked by [`check_order_k`].
pub const DEFAULT_PAIR_CAP: u128 = 10_000_000;

/// Working value of the projection constant, safely below `1/√2`.
pub const PROJECTION_DELTA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Violated { u: f64, i: Word, j: Word },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPair {
    pub u: f64,
    pub i: Word,
    pub j: Word,
    pub value: f64,
}

/// Outcome of a grid check of `max_{k ≤ K} |Δ^{(k)}_{i,j}(u)| ≥ c^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalityCertificate {
    pub n: usize,
    pub order: usize,
    pub c: f64,
    pub threshold: f64,
    /// Grid minimum of `max_k |Δ^{(k)}|` minus `c^n`.
    pub margin: f64,
    pub grid_step: f64,
    pub grid_points: usize,
    pub pairs: usize,
    /// Grid maximum of `|Δ^{(k)}|` for `1 ≤ k ≤ K + 1`, used as a Lipschitz
    /// constant for the max-of-derivatives function.
    pub lipschitz_slack: f64,
    pub domain: (f64, f64),
    pub worst: WorstPair,
    pub verdict: Verdict,
}

fn all_words(m: usize, n: usize, cap: u128) -> Result<Vec<Word>> {
    let count = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    check_cap("words", count, cap)?;
    Ok((0..count as u64).map(|k| Word::from_index(k, n, m)).collect())
}

struct GridResult {
    best: f64,
    worst: usize,
    pair: (usize, usize),
    slack: f64,
}

/// Checks order-`K` transversality for all unordered pairs of distinct
/// length-`n` words on a grid of step at most `grid_step` including both
/// endpoints of the domain.
pub fn check_order_k(fam: &ParamIfs1, n: usize, order: usize, c: f64, grid_step: f64) -> Result<TransversalityCertificate> {
    check_order_k_with(fam, n, order, c, grid_step, DEFAULT_PAIR_CAP)
}

pub fn check_order_k_with(
    fam: &ParamIfs1,
    n: usize,
    order: usize,
    c: f64,
    grid_step: f64,
    pair_cap: u128,
) -> Result<TransversalityCertificate> {
    if n == 0 {
        return invalid("word length n must be at least 1");
    }
    if !(c > 0.0) || !(grid_step > 0.0) {
        return invalid("c and grid_step must be positive");
    }
    let m = fam.len();
    let words_count = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    let pairs = words_count.saturating_mul(words_count.saturating_sub(1)) / 2;
    check_cap("word pairs", pairs, pair_cap)?;
    if pairs == 0 {
        return invalid("transversality needs at least two words");
    }
    let words = all_words(m, n, pair_cap)?;
    let domain = fam.domain();
    let cells = (domain.len() / grid_step).ceil().max(1.0) as usize;
    let grid = domain.grid(cells);
    let threshold = c.powi(n as i32);

    let per_point: Vec<Result<GridResult>> = grid
        .par_iter()
        .enumerate()
        .map(|(g, &u)| {
            let jets = fam.translation_jets(u, order + 1)?;
            let mut out = GridResult { best: f64::INFINITY, worst: g, pair: (0, 1), slack: 0.0 };
            for a in 0..words.len() {
                for b in a + 1..words.len() {
                    let d = delta_jet_from(&jets, fam.lambdas(), &words[a], &words[b])?;
                    let ds = d.derivatives();
                    let v = ds[..=order].iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
                    let s = ds[1..].iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
                    out.slack = out.slack.max(s);
                    if v < out.best {
                        out.best = v;
                        out.pair = (a, b);
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut slack = 0.0f64;
    let mut worst: Option<GridResult> = None;
    for r in per_point {
        let r = r?;
        slack = slack.max(r.slack);
        // first grid point wins ties, so the reduction is order independent
        if worst.as_ref().is_none_or(|w| r.best < w.best) {
            worst = Some(r);
        }
    }
    let worst = worst.expect("grid is nonempty");
    let margin = worst.best - threshold;
    let step = domain.len() / cells as f64;
    let (wi, wj) = (words[worst.pair.0].clone(), words[worst.pair.1].clone());
    let u = grid[worst.worst];
    let verdict = if margin < 0.0 {
        Verdict::Violated { u, i: wi.clone(), j: wj.clone() }
    } else if margin > slack * step / 2.0 {
        Verdict::Certified
    } else {
        Verdict::Inconclusive
    };
    Ok(TransversalityCertificate {
        n,
        order,
        c,
        threshold,
        margin,
        grid_step: step,
        grid_points: grid.len(),
        pairs: pairs as usize,
        lipschitz_slack: slack,
        domain: (domain.lo, domain.hi),
        worst: WorstPair { u, i: wi, j: wj, value: worst.best },
        verdict,
    })
}

/// Certified lower bound for `inf max(|π_u x|, |∂_u π_u x|)` over unit `x`.
///
/// For unit `x` at angle `θ` the two quantities are `|cos φ|` and `|sin φ|`
/// with `φ = θ − u`, so a grid over `φ ∈ [0, π/2]` with the 1-Lipschitz
/// slack `h/2` suffices.
pub fn projection_transversality_constant(grid: usize) -> f64 {
    let grid = grid.max(1);
    let h = std::f64::consts::FRAC_PI_2 / grid as f64;
    let min = (0..=grid)
        .map(|k| {
            let phi = k as f64 * h;
            phi.cos().abs().max(phi.sin().abs())
        })
        .fold(f64::INFINITY, f64::min);
    min - h / 2.0
}

/// The sequence `log Δ_n / n` for `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRates {
    /// `(n, Δ_n, log Δ_n / n)`; the rate is absent when `Δ_n = 0`.
    pub rates: Vec<(usize, f64, Option<f64>)>,
    pub first_overlap: Option<usize>,
    /// Largest observed rate, a proxy for `log c` in `Δ_n ≥ c^n`.
    pub best_rate: Option<f64>,
}

pub fn p1_estimate(ifs: &Ifs1, n_max: usize, cap: u128) -> Result<GapRates> {
    if n_max == 0 {
        return invalid("n_max must be at least 1");
    }
    let mut rates = Vec::with_capacity(n_max);
    let mut first_overlap = None;
    for n in 1..=n_max {
        let d = delta_n_with(ifs, n, cap, COINCIDENCE_REL_TOL)?;
        if d == 0.0 && first_overlap.is_none() {
            first_overlap = Some(n);
        }
        rates.push((n, d, (d > 0.0).then(|| d.ln() / n as f64)));
    }
    let best_rate = rates.iter().filter_map(|r| r.2).reduce(f64::max);
    Ok(GapRates { rates, first_overlap, best_rate })
}

/// Three words whose composition points span a triangle of maximal area.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleWitness {
    pub words: [Word; 3],
    pub points: [Point2; 3],
    /// Twice the signed triangle area.
    pub cross: f64,
}

fn hull_indices(points: &[Point2]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1])));
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> =
            if pass == 0 { Box::new(idx.iter()) } else { Box::new(idx.iter().rev()) };
        for &k in iter {
            while hull.len() >= start + 2
                && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[k]) <= 0.0
            {
                hull.pop();
            }
            hull.push(k);
        }
        hull.pop();
    }
    hull.sort_unstable();
    hull
}

/// Robust non-collinearity witness at depth `M`, or `None` when all
/// composition points lie on a line (within `1e−10·diam²`).
pub fn a2_witness(ifs: &PlanarIfs, depth: usize, cap: u128) -> Result<Option<TripleWitness>> {
    let points = ifs.level_points(depth, cap)?;
    let mut diam2 = 0.0f64;
    let hull = if points.len() <= 256 { (0..points.len()).collect() } else { hull_indices(&points) };
    check_cap("hull triples", (hull.len() as u128).pow(3) / 6, 50_000_000)?;
    for &a in &hull {
        for &b in &hull {
            diam2 = diam2.max(points[a].sub(points[b]).norm().powi(2));
        }
    }
    let mut best: Option<(f64, [usize; 3])> = None;
    for x in 0..hull.len() {
        for y in x + 1..hull.len() {
            for z in y + 1..hull.len() {
                let (a, b, c) = (hull[x], hull[y], hull[z]);
                let area = cross(points[a], points[b], points[c]).abs();
                if best.is_none_or(|(v, _)| area > v) {
                    best = Some((area, [a, b, c]));
                }
            }
        }
    }
    let Some((area, tri)) = best else { return Ok(None) };
    if area <= 1e-10 * diam2 {
        return Ok(None);
    }
    let m = ifs.len();
    let words = tri.map(|k| Word::from_index(k as u64, depth, m));
    let pts = tri.map(|k| points[k]);
    Ok(Some(TripleWitness { cross: cross(pts[0], pts[1], pts[2]), words, points: pts }))
}

/// Whether `u ↦ Δ_{j,i}(u)/Δ_{k,i}(u)` takes distinct values at `u1` and `u2`.
pub fn ratio_nonconstancy(fam: &ParamIfs1, i: &Word, j: &Word, k: &Word, u1: f64, u2: f64) -> Result<bool> {
    let ratio = |u: f64| -> Result<f64> {
        let num = family_delta_jet(fam, j, i, u, 0)?.value();
        let den = family_delta_jet(fam, k, i, u, 0)?.value();
        let scale = fam.freeze(u)?.attractor_radius().max(1e-300);
        if den.abs() <= 1e-12 * scale {
            return invalid(format!("denominator vanishes at u = {u}; choose other sample points"));
        }
        Ok(num / den)
    };
    let (z1, z2) = (ratio(u1)?, ratio(u2)?);
    Ok((z1 - z2).abs() > 1e-9 * (1.0 + z1.abs()))
}

/// Number of intervals of length `r` needed to cover
/// `{u ∈ U : |Δ_{i,j}(u)| < threshold}`, estimated from a grid of step
/// `r/4` whose flagged runs are widened by `r/4` on each side.
pub fn sublevel_cover_count(fam: &ParamIfs1, i: &Word, j: &Word, threshold: f64, r: f64) -> Result<usize> {
    if !(r > 0.0) {
        return invalid("cover radius r must be positive");
    }
    let domain = fam.domain();
    let h = r / 4.0;
    let cells = (domain.len() / h).ceil() as usize;
    if cells > 100_000_000 {
        return Err(Error::CapExceeded { what: "sublevel grid", needed: cells as u128, cap: 100_000_000, advice: None });
    }
    let grid = domain.grid(cells);
    let step = domain.len() / cells as f64;
    let flags = grid
        .par_iter()
        .map(|&u| family_delta_jet(fam, i, j, u, 0).map(|d| d.value().abs() < threshold))
        .collect::<Result<Vec<bool>>>()?;
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < flags.len() {
        if !flags[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < flags.len() && flags[k + 1] {
            k += 1;
        }
        let lo = (grid[start] - step).max(domain.lo);
        let hi = (grid[k] + step).min(domain.hi);
        match runs.last_mut() {
            Some(last) if lo <= last.1 => last.1 = hi,
            _ => runs.push((lo, hi)),
        }
        k += 1;
    }
    if runs.is_empty() {
        return Ok(0);
    }
    // a run through both endpoints of a periodic domain is one run
    if domain.periodic && runs.len() > 1 && runs[0].0 <= domain.lo && runs[runs.len() - 1].1 >= domain.hi {
        let last = runs.pop().expect("nonempty");
        runs[0].0 = last.0 - domain.len();
    }
    let mut count = 0;
    for (lo, hi) in runs {
        count += ((hi - lo) / r - 1e-12).ceil().max(1.0) as usize;
    }
    Ok(count)
}

/// Least-squares slope of `log N(r)` against `−log r`.
pub fn box_dim_estimate(cover_counts: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<&(f64, f64)> = cover_counts.iter().filter(|(r, n)| *r > 0.0 && *n >= 1.0).collect();
    if pts.len() < 3 {
        return Err(Error::Insufficient(format!("{} usable scales, need at least 3", pts.len())));
    }
    let rmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let rmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if (rmax / rmin).log10() < 2.0 {
        return Err(Error::Insufficient("scales span less than 2 decades".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| -p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    Ok(least_squares_slope(&xs, &ys))
}
