//! Orthogonal projections of planar self-similar measures onto lines.
//!
//! A planar system `{λ_j x + t_j}` projects along the direction
//! `(cos u, sin u)` to the line system `{λ_j x + ⟨t_j, (cos u, sin u)⟩}`.
//! [`angle_scan`] runs the one-dimensional diagnostics for each angle and
//! combines them into a heuristic verdict.
//!
//! The verdicts are labelled "-consistent" on purpose. Absolute continuity
//! holds outside an exceptional set of directions of dimension zero, and no
//! finite computation decides it for a given direction.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fourier::{decay_exponent, ft_product_many, log_frequencies};
use crate::ifs_core::{Ifs1, PlanarIfs, Point2};
use crate::measure_numerics::{boxdim_of_samples, l2_curve, l2_exponent, sample_ssm};
use crate::param_family::{Domain, Expr, Func, ParamIfs1};
use crate::random_model::{sample_points, sample_types, FactorFilter, StreamKey, Truncation};
use crate::transversality::p1_estimate;
use crate::type_model::{AtomicMeasure, TypedSystem, DEFAULT_WORD_CAP};

/// `⟨x, (cos u, sin u)⟩`.
pub fn project_point(x: Point2, u: f64) -> f64 {
    x[0] * u.cos() + x[1] * u.sin()
}

/// The line system at angle `u`: same ratios and weights, projected
/// translations.
pub fn project(planar: &PlanarIfs, u: f64) -> Result<Ifs1> {
    let t: Vec<f64> = planar.translations().iter().map(|&p| project_point(p, u)).collect();
    Ifs1::from_parts(&planar.ratios(), &t, planar.weights().to_vec())
}

fn projection_expr(p: Point2) -> Expr {
    let term = |c: f64, f: Func| Expr::Mul(Box::new(Expr::Num(c)), Box::new(Expr::Call(f, Box::new(Expr::Param))));
    Expr::Add(Box::new(term(p[0], Func::Cos)), Box::new(term(p[1], Func::Sin)))
}

/// The projected family `u ↦ Ψ_u` on `[0, π]`, periodic since `Ψ_{u+π}`
/// is the mirror image of `Ψ_u`.
pub fn project_family(planar: &PlanarIfs) -> Result<ParamIfs1> {
    let t = planar.translations().into_iter().map(projection_expr).collect();
    ParamIfs1::new(planar.ratios(), t, planar.weights().to_vec(), Domain::new(0.0, PI, true)?)
}

/// The eight maps `x/3 + t/3` with `t ∈ {0,1,2}² ∖ {(1,1)}`, uniform weights,
/// listed in x-major order.
pub fn carpet() -> PlanarIfs {
    let mut t = Vec::with_capacity(8);
    for a in 0..3 {
        for b in 0..3 {
            if (a, b) != (1, 1) {
                t.push([a as f64 / 3.0, b as f64 / 3.0]);
            }
        }
    }
    PlanarIfs::uniform(&[1.0 / 3.0; 8], &t).expect("carpet preset is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanVerdict {
    AcConsistent,
    SingularConsistent,
    Inconclusive,
}

impl std::fmt::Display for ScanVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScanVerdict::AcConsistent => "a.c.-consistent",
            ScanVerdict::SingularConsistent => "singular-consistent",
            ScanVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    /// Block length for the typed model.
    pub block: usize,
    /// Every `split`-th factor goes to `η_small`.
    pub split: usize,
    /// Largest word length for the gap rates.
    pub n_max: usize,
    /// Number of `ω` shared by every angle.
    pub ensemble: usize,
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub xi_count: usize,
    /// Sample points for the dimension and L² diagnostics.
    pub points: usize,
    pub seed: u64,
    /// Smallest Fourier exponent counted as decay.
    pub fourier_threshold: f64,
    /// `η_big` counts as full-dimensional above `1 − dim_tol`.
    pub dim_tol: f64,
    /// L² exponents above this are read as divergence.
    pub l2_threshold: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            block: 2,
            split: 2,
            n_max: 4,
            ensemble: 4,
            xi_lo: 1.0,
            xi_hi: 1e4,
            xi_count: 48,
            points: 20_000,
            seed: 0,
            fourier_threshold: 0.01,
            dim_tol: 0.05,
            l2_threshold: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleScanRow {
    pub u: f64,
    pub simdim: f64,
    /// Best observed `log Δ_n(u) / n` for `n ≤ n_max`.
    pub delta_rate: Option<f64>,
    pub overlap_flag: bool,
    /// Median Fourier exponent of `η_small` over the ensemble.
    pub fourier_exponent: Option<f64>,
    pub bigdim: Option<f64>,
    /// Growth exponent of the L² indicator of `μ_u` as bins shrink.
    pub l2_exponent: Option<f64>,
    pub verdict: ScanVerdict,
    pub error: Option<String>,
}

impl AngleScanRow {
    pub const CSV_HEADER: &'static str =
        "u,simdim,delta_rate,overlap_flag,fourier_exponent,bigdim,l2_exponent,verdict,error";

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.u,
            self.simdim,
            opt(self.delta_rate),
            self.overlap_flag,
            opt(self.fourier_exponent),
            opt(self.bigdim),
            opt(self.l2_exponent),
            self.verdict,
            self.error.as_deref().unwrap_or("").replace(',', ";")
        )
    }
}

/// Combines the diagnostics of a row.
pub fn verdict_for(row: &AngleScanRow, cfg: &ScanConfig) -> ScanVerdict {
    if row.simdim < 1.0 || row.l2_exponent.is_some_and(|a| a > cfg.l2_threshold) {
        return ScanVerdict::SingularConsistent;
    }
    let decays = row.fourier_exponent.is_some_and(|e| e > cfg.fourier_threshold);
    let full = row.bigdim.is_some_and(|d| d > 1.0 - cfg.dim_tol);
    if decays && full && !row.overlap_flag {
        ScanVerdict::AcConsistent
    } else {
        ScanVerdict::Inconclusive
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn box_scales(points: &[f64]) -> Vec<f64> {
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-300);
    (1..=10).map(|j| span * 2f64.powi(-j)).collect()
}

fn scan_one(planar: &PlanarIfs, u: f64, simdim: f64, cfg: &ScanConfig) -> AngleScanRow {
    let mut row = AngleScanRow {
        u,
        simdim,
        delta_rate: None,
        overlap_flag: false,
        fourier_exponent: None,
        bigdim: None,
        l2_exponent: None,
        verdict: ScanVerdict::Inconclusive,
        error: None,
    };
    if let Err(e) = fill_row(planar, cfg, &mut row) {
        row.error = Some(e.to_string());
    }
    row.verdict = verdict_for(&row, cfg);
    row
}

fn fill_row(planar: &PlanarIfs, cfg: &ScanConfig, row: &mut AngleScanRow) -> Result<()> {
    let ifs = project(planar, row.u)?;
    let gaps = p1_estimate(&ifs, cfg.n_max, DEFAULT_WORD_CAP)?;
    row.delta_rate = gaps.best_rate;
    row.overlap_flag = gaps.first_overlap.is_some();

    let depth = (1e-12f64.ln() / ifs.ratio_max().ln()).ceil() as usize;
    let mu_points = sample_ssm(&ifs, depth, 0.0, cfg.points, cfg.seed);
    let lo = mu_points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu_points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let mu = AtomicMeasure::uniform(&mu_points)?;
        let bins: Vec<usize> = (3..=9).map(|j| 1usize << j).collect();
        row.l2_exponent = Some(l2_exponent(&l2_curve(&mu, lo, hi, &bins)?)?);
    }

    let sys = TypedSystem::new(&ifs, cfg.block)?;
    let xis = log_frequencies(cfg.xi_lo, cfg.xi_hi, cfg.xi_count);
    let tol = 1e-6;
    let mut exponents = Vec::with_capacity(cfg.ensemble);
    let mut dims = Vec::with_capacity(cfg.ensemble);
    for e in 0..cfg.ensemble as u64 {
        let omega = sample_types(&sys, StreamKey::new(cfg.seed, "scan-omega", e), 1)?;
        let samples = ft_product_many(&sys, &omega, &xis, Truncation::Tail(tol), FactorFilter::Small(cfg.split))?;
        exponents.push(decay_exponent(&samples)?.exponent);
        let big = sample_points(
            &sys,
            &omega,
            Truncation::Tail(tol),
            FactorFilter::Big(cfg.split),
            cfg.points,
            cfg.seed.wrapping_add(e),
        )?;
        dims.push(boxdim_of_samples(&big, &box_scales(&big))?);
    }
    row.fourier_exponent = median(exponents);
    row.bigdim = median(dims);
    Ok(())
}

/// One row per angle, in input order. Failures inside a row are recorded
/// in its `error` field and the scan continues.
pub fn angle_scan(planar: &PlanarIfs, angles: &[f64], cfg: &ScanConfig) -> Result<Vec<AngleScanRow>> {
    if cfg.ensemble == 0 || cfg.points < 1000 || cfg.xi_count < 20 {
        return invalid("scan needs a nonempty ensemble, at least 1000 points and 20 frequencies");
    }
    let simdim = planar.similarity_dimension()?;
    Ok(angles.par_iter().map(|&u| scan_one(planar, u, simdim, cfg)).collect())
}

/// `count` equally spaced angles in `[0, π)`.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|k| PI * k as f64 / count as f64).collect()
}
