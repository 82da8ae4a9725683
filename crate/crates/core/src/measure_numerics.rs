//! Finite approximations of self-similar measures, the disintegration check
//! `μ = ∫ η^ω dℙ(ω)`, histograms, and dimension diagnostics.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_cap, invalid, Error, Result};
use crate::fourier::ft_atomic;
use crate::ifs_core::Ifs1;
use crate::random_model::{eta_omega_atoms, sample_types, OmegaPrefix, StreamKey, DEFAULT_ATOM_CAP};
use crate::transversality::box_dim_estimate;
use crate::type_model::{AtomicMeasure, RandomModel, TypedSystem, DEFAULT_WORD_CAP};

/// `μ_n = Σ_{|w|=n} p_w δ_{ψ_w(0)}`, built one self-similarity step at a time.
pub fn level_n_ssm(ifs: &Ifs1, n: usize) -> Result<AtomicMeasure> {
    level_n_ssm_with(ifs, n, DEFAULT_WORD_CAP)
}

pub fn level_n_ssm_with(ifs: &Ifs1, n: usize, cap: u128) -> Result<AtomicMeasure> {
    let words = (ifs.len() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    check_cap("level-n words", words, cap)?;
    let mut mu = AtomicMeasure::dirac(0.0);
    for _ in 0..n {
        mu = self_similarity_step(ifs, &mu)?;
    }
    Ok(mu)
}

/// `Σ_j p_j ψ_{j♯} ν`.
pub fn self_similarity_step(ifs: &Ifs1, nu: &AtomicMeasure) -> Result<AtomicMeasure> {
    let mut atoms = Vec::with_capacity(nu.len() * ifs.len());
    for (map, &p) in ifs.maps().iter().zip(ifs.weights()) {
        atoms.extend(nu.atoms().iter().map(|&(x, w)| (map.apply(x), p * w)));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    AtomicMeasure::new(atoms)
}

pub fn convolve_atomic(a: &AtomicMeasure, b: &AtomicMeasure) -> Result<AtomicMeasure> {
    a.convolve(b, DEFAULT_ATOM_CAP)
}

pub fn scale_push(a: &AtomicMeasure, r: f64) -> Result<AtomicMeasure> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("dilation factor {r} must be positive"));
    }
    Ok(a.scale_push(r))
}

/// How [`verify_disintegration`] compares the two sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DisintegrationMode {
    /// Enumerate every `ω ∈ 𝒯^k` and compare atoms.
    Exact,
    /// Average `S` sampled transforms at the given frequencies.
    MonteCarlo { samples: usize, frequencies: Vec<f64>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisintegrationReport {
    pub block_len: usize,
    pub blocks: usize,
    /// Largest atom-weight difference (exact) or transform difference (Monte Carlo).
    pub max_error: f64,
    /// Atoms present on one side only (exact mode).
    pub unmatched: usize,
    /// Sequences enumerated or sampled.
    pub sequences: usize,
    /// `3/√S` in Monte Carlo mode.
    pub tolerance: Option<f64>,
}

fn tuple_of(mut index: usize, types: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    for slot in out.iter_mut().rev() {
        *slot = index % types;
        index /= types;
    }
    out
}

/// Compares `Σ_ω q(ω_1)⋯q(ω_k) η^ω` (exact) or its sampled transform
/// (Monte Carlo) with `μ_{kN}`.
pub fn verify_disintegration(sys: &TypedSystem, k: usize, mode: &DisintegrationMode) -> Result<DisintegrationReport> {
    if k == 0 {
        return invalid("at least one block is required");
    }
    let mu = level_n_ssm(sys.base(), k * sys.block_len())?;
    match mode {
        DisintegrationMode::Exact => {
            let types = sys.type_count();
            let count = (types as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
            check_cap("type sequences", count, DEFAULT_WORD_CAP)?;
            let parts: Vec<(f64, AtomicMeasure)> = (0..count as usize)
                .into_par_iter()
                .map(|i| {
                    let omega = tuple_of(i, types, k);
                    let weight: f64 = omega.iter().map(|&t| sys.probability(t)).product();
                    Ok((weight, eta_omega_atoms(sys, &OmegaPrefix::from_blocks(omega))?))
                })
                .collect::<Result<_>>()?;
            let refs: Vec<(f64, &AtomicMeasure)> = parts.iter().map(|(w, m)| (*w, m)).collect();
            let total: f64 = refs.iter().map(|r| r.0).sum();
            let normalised: Vec<(f64, &AtomicMeasure)> = refs.iter().map(|&(w, m)| (w / total, m)).collect();
            let mixed = AtomicMeasure::mixture(&normalised)?;
            let cmp = mixed.compare(&mu, 1e-12 * mu.diameter().max(1.0));
            Ok(DisintegrationReport {
                block_len: sys.block_len(),
                blocks: k,
                max_error: cmp.max_weight_diff,
                unmatched: cmp.unmatched,
                sequences: count as usize,
                tolerance: None,
            })
        }
        DisintegrationMode::MonteCarlo { samples, frequencies, seed } => {
            if *samples < 100 {
                return invalid(format!("Monte Carlo mode needs at least 100 samples, got {samples}"));
            }
            if frequencies.is_empty() {
                return invalid("no frequencies given");
            }
            let draws: Vec<Vec<Complex64>> = (0..*samples as u64)
                .into_par_iter()
                .map(|s| {
                    let omega = sample_types(sys, StreamKey::new(*seed, "disintegration", s), k)?;
                    let eta = eta_omega_atoms(sys, &omega)?;
                    Ok(frequencies.iter().map(|&xi| ft_atomic(&eta, xi)).collect())
                })
                .collect::<Result<_>>()?;
            let mut max_error: f64 = 0.0;
            for (f, &xi) in frequencies.iter().enumerate() {
                let mean = draws.iter().map(|d| d[f]).sum::<Complex64>() / *samples as f64;
                max_error = max_error.max((mean - ft_atomic(&mu, xi)).norm());
            }
            Ok(DisintegrationReport {
                block_len: sys.block_len(),
                blocks: k,
                max_error,
                unmatched: 0,
                sequences: *samples,
                tolerance: Some(3.0 / (*samples as f64).sqrt()),
            })
        }
    }
}

/// Masses on `bins` equal-width cells of `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
}

impl Histogram {
    fn empty(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return invalid(format!("need at least 2 bins, got {bins}"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("bad histogram range [{lo}, {hi}]"));
        }
        Ok(Histogram { lo, hi, masses: vec![0.0; bins] })
    }

    fn add(&mut self, x: f64, w: f64) -> bool {
        if x < self.lo || x > self.hi {
            return false;
        }
        let bins = self.masses.len();
        let i = (((x - self.lo) / self.width()) as usize).min(bins - 1);
        self.masses[i] += w;
        true
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.masses.len() as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] / self.width()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// CSV with columns `edge,mass,density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge,mass,density\n");
        for i in 0..self.bins() {
            out.push_str(&format!("{},{},{}\n", self.edge(i), self.masses[i], self.density(i)));
        }
        out
    }
}

/// Bins the atoms of `m`; atoms outside `[lo, hi]` are dropped.
pub fn density_histogram(m: &AtomicMeasure, lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    let mut h = Histogram::empty(lo, hi, bins)?;
    for &(x, w) in m.atoms() {
        h.add(x, w);
    }
    Ok(h)
}

/// Bins sample points, each of mass `1/len`.
pub fn sample_histogram(points: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if points.is_empty() {
        return Err(Error::Insufficient("no points to bin".into()));
    }
    let mut h = Histogram::empty(lo, hi, bins)?;
    let w = 1.0 / points.len() as f64;
    for &x in points {
        h.add(x, w);
    }
    Ok(h)
}

/// `Σ (mass_i / width)² · width`, the squared L² norm of the histogram density.
pub fn l2_indicator(h: &Histogram) -> f64 {
    h.masses.iter().map(|m| m * m).sum::<f64>() / h.width()
}

/// `(width, l2_indicator)` for each bin count.
pub fn l2_curve(m: &AtomicMeasure, lo: f64, hi: f64, bin_counts: &[usize]) -> Result<Vec<(f64, f64)>> {
    bin_counts
        .iter()
        .map(|&b| density_histogram(m, lo, hi, b).map(|h| (h.width(), l2_indicator(&h))))
        .collect()
}

/// Exponent `a` in `l2_indicator ≈ C·width^{−a}`; near zero for bounded
/// densities, positive when the indicator diverges.
pub fn l2_exponent(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::Insufficient(format!("{} widths, need at least 3", curve.len())));
    }
    let xs: Vec<f64> = curve.iter().map(|p| -p.0.ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.1.ln()).collect();
    Ok(crate::fourier::least_squares_slope(&xs, &ys))
}

/// Box-counting dimension from occupied cells `⌊x/r⌋` at each scale.
pub fn boxdim_of_samples(points: &[f64], scales: &[f64]) -> Result<f64> {
    if points.len() < 1000 {
        return Err(Error::Insufficient(format!("{} points, need at least 1000", points.len())));
    }
    let counts: Vec<(f64, f64)> = scales
        .iter()
        .map(|&r| {
            let mut cells: Vec<i64> = points.iter().map(|x| (x / r).floor() as i64).collect();
            cells.sort_unstable();
            cells.dedup();
            (r, cells.len() as f64)
        })
        .collect();
    box_dim_estimate(&counts)
}

/// Points `ψ_w(anchor)` for random words of length `depth` drawn with the
/// system's weights; draw `d` uses stream `(seed, "ssm", d)`.
pub fn sample_ssm(ifs: &Ifs1, depth: usize, anchor: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(ifs.len());
    let mut acc = 0.0;
    for &p in ifs.weights() {
        acc += p;
        cumulative.push(acc);
    }
    let maps = ifs.maps();
    (0..count as u64)
        .into_par_iter()
        .map(|d| {
            let us = StreamKey::new(seed, "ssm", d).uniforms(0, depth);
            let mut x = anchor;
            for &u in us.iter().rev() {
                let j = cumulative.partition_point(|&c| c <= u).min(maps.len() - 1);
                x = maps[j].apply(x);
            }
            x
        })
        .collect()
}
