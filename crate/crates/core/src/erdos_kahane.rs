//! Erdős–Kahane counting at a marked type `τ₀`.
//!
//! A type sequence `ω` is cut into blocks `W_1 W_2 ⋯` each ending in `τ₀`.
//! For a frequency scale `ν` and two weights `z₁, z₂` the numbers
//! `Θ_m z_j ν` are split into integer digits and remainders; the recursion
//! between consecutive digits bounds how many digit sequences (hence how
//! many ratios `z₁/z₂`) can keep most remainders small.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::random_model::{OmegaPrefix, StreamKey, MAX_SAMPLE_DEPTH};
use crate::type_model::RandomModel;

/// Largest magnitude at which every double is still an exact integer.
pub const EXACT_INTEGER_LIMIT: f64 = 9_007_199_254_740_992.0;

/// Largest `M` accepted by [`enumerate_sequence_count`].
pub const MAX_ENUMERATION_M: usize = 20;

/// Largest `M` accepted by [`brute_force_e`].
pub const MAX_BRUTE_FORCE_M: usize = 8;

/// Default base constant in the digit recursion bound.
pub const DEFAULT_RECURSION_CONSTANT: f64 = 2.0;

/// A type sequence cut greedily after every occurrence of `τ₀`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockDecomposition {
    tau0: usize,
    words: Vec<Vec<usize>>,
}

impl BlockDecomposition {
    pub fn tau0(&self) -> usize {
        self.tau0
    }

    pub fn words(&self) -> &[Vec<usize>] {
        &self.words
    }

    /// `W_m`, one-based.
    pub fn word(&self, m: usize) -> &[usize] {
        &self.words[m - 1]
    }

    /// `|W_m|`, one-based.
    pub fn word_len(&self, m: usize) -> usize {
        self.words[m - 1].len()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn concat(&self) -> Vec<usize> {
        self.words.concat()
    }

    /// Keeps only `W_1, …, W_count`.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        self.require(count)?;
        Ok(BlockDecomposition { tau0: self.tau0, words: self.words[..count].to_vec() })
    }

    fn require(&self, count: usize) -> Result<()> {
        if self.words.len() < count {
            return Err(Error::Insufficient(format!(
                "{count} blocks ending in type {} needed, only {} available",
                self.tau0,
                self.words.len()
            )));
        }
        Ok(())
    }
}

/// Splits `ω` after each occurrence of `τ₀`. Symbols after the last
/// occurrence are dropped.
pub fn split_words(omega: &OmegaPrefix, tau0: usize) -> Result<BlockDecomposition> {
    let mut words = Vec::new();
    let mut current = Vec::new();
    for &t in omega.blocks() {
        current.push(t);
        if t == tau0 {
            words.push(std::mem::take(&mut current));
        }
    }
    if words.is_empty() {
        return Err(Error::Insufficient(format!("type {tau0} does not occur in the prefix")));
    }
    Ok(BlockDecomposition { tau0, words })
}

/// Draws `ω` from the model until it contains `count` blocks.
pub fn split_sampled(model: &impl RandomModel, key: StreamKey, tau0: usize, count: usize) -> Result<BlockDecomposition> {
    if tau0 >= model.type_count() {
        return invalid(format!("marked type {tau0} out of range"));
    }
    if count == 0 {
        return invalid("at least one block is required");
    }
    let mut len = 4 * count;
    loop {
        let omega = crate::random_model::sample_types(model, key, len)?;
        if let Ok(blocks) = split_words(&omega, tau0) {
            if blocks.len() >= count {
                return blocks.truncated(count);
            }
        }
        if len >= MAX_SAMPLE_DEPTH {
            return Err(Error::Insufficient(format!(
                "fewer than {count} occurrences of type {tau0} in {MAX_SAMPLE_DEPTH} draws"
            )));
        }
        len = (2 * len).min(MAX_SAMPLE_DEPTH);
    }
}

/// `θ(τ) = 1/λ(τ)` for every type of the model.
pub fn thetas_of(model: &impl RandomModel) -> Vec<f64> {
    (0..model.type_count()).map(|t| 1.0 / model.contraction(t)).collect()
}

/// The scale sequence `Θ_m = θ(τ₀) θ(W_{M−m+1} ⋯ W_M)` together with the
/// per-type data it is built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaData {
    pub tau0: usize,
    /// `θ(τ)` per type.
    pub theta: Vec<f64>,
    /// `β(τ) = log θ(τ) / log θ(τ₀)` per type.
    pub beta: Vec<f64>,
    /// `Θ_1, …, Θ_M`; infinite entries when `overflow` is set.
    pub scales: Vec<f64>,
    /// `log Θ_1, …, log Θ_M`.
    pub log_scales: Vec<f64>,
    pub overflow: bool,
    /// `β(W_m)` for the blocks `W_1, …, W_{M+1}` that are present.
    pub word_beta: Vec<f64>,
    /// `θ(W_m)` for the same blocks.
    pub word_theta: Vec<f64>,
    /// `|W_m|` for the same blocks.
    pub word_len: Vec<usize>,
}

impl ThetaData {
    /// `M`.
    pub fn depth(&self) -> usize {
        self.scales.len()
    }

    pub fn theta_min(&self) -> f64 {
        self.theta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn theta_max(&self) -> f64 {
        self.theta.iter().copied().fold(0.0, f64::max)
    }

    pub fn beta_max(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }

    /// `Θ_m`, one-based.
    pub fn scale(&self, m: usize) -> f64 {
        self.scales[m - 1]
    }

    /// `θ(W_{M+1})`, the range of admissible `ν`, when that block exists.
    pub fn nu_range(&self) -> Option<f64> {
        let m = self.depth();
        self.word_theta.get(m).copied()
    }
}

fn theta_of_word(theta: &[f64], w: &[usize]) -> f64 {
    w.iter().map(|&t| theta[t]).product()
}

/// Builds `Θ_1, …, Θ_M` for the first `M + 1` blocks (or `M` when only
/// those exist; the last block is needed only for the range of `ν`).
pub fn theta_sequence(blocks: &BlockDecomposition, theta: &[f64], depth: usize) -> Result<ThetaData> {
    if depth == 0 {
        return invalid("M must be at least 1");
    }
    blocks.require(depth)?;
    let tau0 = blocks.tau0();
    if tau0 >= theta.len() {
        return invalid(format!("marked type {tau0} has no θ value"));
    }
    if let Some(t) = theta.iter().position(|&v| !(v > 1.0 && v.is_finite())) {
        return invalid(format!("θ of type {t} is {}, expected a finite value above 1", theta[t]));
    }
    for w in blocks.words() {
        if let Some(&t) = w.iter().find(|&&t| t >= theta.len()) {
            return invalid(format!("type {t} in ω has no θ value"));
        }
    }
    let log_theta: Vec<f64> = theta.iter().map(|v| v.ln()).collect();
    let beta: Vec<f64> = log_theta.iter().map(|l| l / log_theta[tau0]).collect();
    let present = blocks.len().min(depth + 1);
    let word_beta: Vec<f64> = blocks.words()[..present].iter().map(|w| w.iter().map(|&t| beta[t]).sum()).collect();
    let word_theta: Vec<f64> = blocks.words()[..present].iter().map(|w| theta_of_word(theta, w)).collect();
    let word_len: Vec<usize> = blocks.words()[..present].iter().map(Vec::len).collect();

    let mut log_scales = Vec::with_capacity(depth);
    let mut scales = Vec::with_capacity(depth);
    let mut log_acc = log_theta[tau0];
    let mut acc = theta[tau0];
    for m in 1..=depth {
        let w = blocks.word(depth - m + 1);
        log_acc += w.iter().map(|&t| log_theta[t]).sum::<f64>();
        acc *= theta_of_word(theta, w);
        log_scales.push(log_acc);
        scales.push(acc);
    }
    debug_assert!(log_scales.windows(2).all(|p| p[0] <= p[1]));
    let overflow = scales.iter().any(|s| !s.is_finite());
    if overflow {
        scales.iter_mut().for_each(|s| *s = f64::INFINITY);
    }
    Ok(ThetaData { tau0, theta: theta.to_vec(), beta, scales, log_scales, overflow, word_beta, word_theta, word_len })
}

/// Integer parts `K_m` and remainders `ε_m ∈ [−1/2, 1/2)` with
/// `Θ_m z ν = K_m + ε_m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigitSequence {
    pub k: Vec<i64>,
    pub eps: Vec<f64>,
}

impl DigitSequence {
    /// `K_m`, one-based.
    pub fn digit(&self, m: usize) -> i64 {
        self.k[m - 1]
    }

    /// `ε_m`, one-based.
    pub fn remainder(&self, m: usize) -> f64 {
        self.eps[m - 1]
    }
}

/// Nearest integer with ties rounded up, and the exact remainder.
fn split_nearest(x: f64) -> (f64, f64) {
    let fl = x.floor();
    let k = if x - fl >= 0.5 { fl + 1.0 } else { fl };
    (k, x - k)
}

pub fn digits(z: f64, nu: f64, theta: &ThetaData) -> Result<DigitSequence> {
    if !z.is_finite() || !(nu.is_finite() && nu > 0.0) {
        return invalid(format!("z = {z} and ν = {nu} must be finite with ν > 0"));
    }
    let top = theta.scales.last().copied().unwrap_or(0.0) * z.abs() * nu;
    if theta.overflow || !(top < EXACT_INTEGER_LIMIT) {
        return Err(Error::Overflow(format!(
            "Θ_M·|z|·ν = {top:e} is not below 2^53, digits would lose integrality"
        )));
    }
    let (k, eps) = theta
        .scales
        .iter()
        .map(|s| {
            let (k, e) = split_nearest(s * z * nu);
            (k as i64, e)
        })
        .unzip();
    Ok(DigitSequence { k, eps })
}

/// `|K_{m+2} − K_{m+1}(K_{m+1}/K_m)^{b₁/b₀}|` with `beta_pair = (b₁, b₀)`,
/// `b₁ = β(W_{M−(m+1)})` and `b₀ = β(W_{M−m})`.
pub fn recursion_residual(k_m: i64, k_m1: i64, k_m2: i64, beta_pair: (f64, f64)) -> Result<f64> {
    Ok((k_m2 as f64 - predicted_digit(k_m, k_m1, beta_pair)?).abs())
}

/// `K_{m+1}(K_{m+1}/K_m)^{b₁/b₀}`.
pub fn predicted_digit(k_m: i64, k_m1: i64, beta_pair: (f64, f64)) -> Result<f64> {
    if k_m < 1 || k_m1 < 1 {
        return invalid(format!("digits must be positive, got K_m = {k_m}, K_m+1 = {k_m1}"));
    }
    let (b1, b0) = beta_pair;
    if !(b1 > 0.0 && b0 > 0.0) {
        return invalid(format!("β values must be positive, got ({b1}, {b0})"));
    }
    let (k0, k1) = (k_m as f64, k_m1 as f64);
    Ok(k1 * (k1 / k0).powf(b1 / b0))
}

/// Constants in the recursion bound `B_m = (C θ_max^{k+2})^{β_max(|W|+|W'|)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub c: f64,
    /// Smallest `k ≥ 1` with `e^{1/k} ≤ θ_min`.
    pub k: u32,
    pub theta_max: f64,
    pub beta_max: f64,
}

impl Growth {
    pub fn new(theta: &ThetaData) -> Self {
        Self::with_constant(theta, DEFAULT_RECURSION_CONSTANT)
    }

    pub fn with_constant(theta: &ThetaData, c: f64) -> Self {
        let k = (1.0 / theta.theta_min().ln()).ceil().max(1.0) as u32;
        Growth { c, k, theta_max: theta.theta_max(), beta_max: theta.beta_max() }
    }

    /// `log(C θ_max^{k+2})`.
    fn log_base(&self) -> f64 {
        self.c.ln() + (self.k as f64 + 2.0) * self.theta_max.ln()
    }

    /// `log B` for adjacent block lengths summing to `len`.
    pub fn log_b(&self, len: usize) -> f64 {
        self.beta_max * len as f64 * self.log_base()
    }
}

/// `|W_{M−m}| + |W_{M−m−1}|`, for `1 ≤ m ≤ M − 2`.
fn adjacent_len(theta: &ThetaData, m: usize) -> usize {
    let depth = theta.depth();
    theta.word_len[depth - m - 1] + theta.word_len[depth - m - 2]
}

fn check_window(theta: &ThetaData, m: usize) -> Result<()> {
    let depth = theta.depth();
    if m == 0 || m + 2 > depth {
        return invalid(format!("window index m = {m} outside 1..={}", depth.saturating_sub(2)));
    }
    Ok(())
}

/// `log B_m`.
pub fn log_b_m(theta: &ThetaData, growth: &Growth, m: usize) -> Result<f64> {
    check_window(theta, m)?;
    Ok(growth.log_b(adjacent_len(theta, m)))
}

/// `ρ_m = 1/(2B_m)`; may underflow to zero for long blocks.
pub fn rho_m(theta: &ThetaData, growth: &Growth, m: usize) -> Result<f64> {
    Ok((-(log_b_m(theta, growth, m)? + std::f64::consts::LN_2)).exp())
}

/// `log (2B + 1)²` from `log B`.
fn log_branch(log_b: f64) -> f64 {
    if log_b > 40.0 {
        2.0 * (log_b + std::f64::consts::LN_2)
    } else {
        2.0 * (2.0 * log_b.exp() + 1.0).ln()
    }
}

/// Counting condition: at most `δM` of the `M` indices are bad.
pub fn few_bad(bad: usize, depth: usize, delta: f64) -> bool {
    bad as f64 <= delta * depth as f64 + 1e-9
}

/// Summary of the branching count `A₀ · Π_{m∈𝒥} (2B_m + 1)²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceCount {
    pub depth: usize,
    pub delta: f64,
    pub rho: f64,
    /// Number of initial quadruples `(K_1, L_1, K_2, L_2)`.
    pub a0: f64,
    /// `log B₀` with `B₀ = θ_max^{|W_{M−1} W_M W_{M+1}|}`.
    pub log_b0: f64,
    /// `A₀ / B₀⁴`, the fitted constant of the initial count.
    pub a0_over_b0_pow4: f64,
    /// `log (2B_m + 1)²` for `m = 1, …, M − 2`.
    pub log_factors: Vec<f64>,
    /// Indices with `ρ ≥ ρ_m`.
    pub forced: Vec<usize>,
    /// Largest admissible `|𝒥|`.
    pub j_cap: usize,
    pub index_sets: u128,
    pub log_max_bound: f64,
    /// Log of the bound summed over all admissible index sets.
    pub log_total: f64,
    /// Whether `|{m : ρ ≥ ρ_m}| ≤ δM`, so that `|𝒥| ≤ 4δM` suffices.
    pub sparse_forced: bool,
}

impl SequenceCount {
    pub fn log_a0(&self) -> f64 {
        self.a0.ln()
    }
}

/// Number of integers `round(x)` for `x ∈ [lo, hi)`.
fn rounding_count(lo: f64, hi: f64) -> f64 {
    ((hi + 0.5).floor() - (lo + 0.5).floor() + 1.0).max(1.0)
}

#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum { max: f64::NEG_INFINITY, scaled: 0.0 };

    fn push(&mut self, x: f64) {
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        } else {
            self.scaled += other.scaled * (other.max - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.scaled.ln()
    }
}

/// Enumerates every `𝒥 ⊆ {1, …, M−2}` of admissible size and reports the
/// largest and the summed branching bound.
///
/// Any realised exceptional index set lies in `{m : ρ ≥ ρ_m}` together with
/// the at most `3⌊δM⌋` windows touching a bad index, so the admissible size
/// is `max(⌊4δM⌋, |forced| + 3⌊δM⌋)`, capped at `M − 2`.
pub fn enumerate_sequence_count(
    theta: &ThetaData,
    growth: &Growth,
    delta: f64,
    rho: f64,
    c: f64,
) -> Result<SequenceCount> {
    let depth = theta.depth();
    if depth > MAX_ENUMERATION_M {
        return Err(Error::CapExceeded {
            what: "M for index-set enumeration",
            needed: depth as u128,
            cap: MAX_ENUMERATION_M as u128,
            advice: None,
        });
    }
    if depth < 2 {
        return invalid("M must be at least 2");
    }
    if !(delta > 0.0 && delta < 1.0) || !(rho > 0.0) || !(c > 0.0) {
        return invalid(format!("need δ ∈ (0,1), ρ > 0, c > 0; got δ = {delta}, ρ = {rho}, c = {c}"));
    }
    let nu_range = theta
        .nu_range()
        .ok_or_else(|| Error::Insufficient(format!("block W_{} is needed for the range of ν", depth + 1)))?;

    let count_j = |j: usize| rounding_count(c * theta.scale(j), 2.0 * c * theta.scale(j) * nu_range);
    let a0 = (count_j(1) * count_j(2)).powi(2);
    let tail_len = theta.word_len[depth - 2] + theta.word_len[depth - 1] + theta.word_len[depth];
    let log_b0 = tail_len as f64 * growth.theta_max.ln();
    let a0_over_b0_pow4 = (a0.ln() - 4.0 * log_b0).exp();

    let windows = depth - 2;
    let log_bs: Vec<f64> = (1..=windows).map(|m| growth.log_b(adjacent_len(theta, m))).collect();
    let log_factors: Vec<f64> = log_bs.iter().map(|&lb| log_branch(lb)).collect();
    let log_rho = rho.ln();
    let forced: Vec<usize> = (1..=windows)
        .filter(|&m| log_rho >= -(log_bs[m - 1] + std::f64::consts::LN_2))
        .collect();
    let bad = (delta * depth as f64 + 1e-9).floor() as usize;
    let base_cap = (4.0 * delta * depth as f64 + 1e-9).floor() as usize;
    let j_cap = base_cap.max(forced.len() + 3 * bad).min(windows);
    let sparse_forced = forced.len() as f64 <= delta * depth as f64 + 1e-9;

    const CHUNK: u64 = 4096;
    let total_masks = 1u64 << windows;
    let chunks = total_masks.div_ceil(CHUNK);
    let partial: Vec<(f64, u128, LogSum)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut best = f64::NEG_INFINITY;
            let mut sets = 0u128;
            let mut sum = LogSum::EMPTY;
            for mask in ci * CHUNK..((ci + 1) * CHUNK).min(total_masks) {
                if mask.count_ones() as usize > j_cap {
                    continue;
                }
                let log_prod: f64 = (0..windows).filter(|b| mask >> b & 1 == 1).map(|b| log_factors[b]).sum();
                best = best.max(log_prod);
                sets += 1;
                sum.push(log_prod);
            }
            (best, sets, sum)
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut index_sets = 0u128;
    let mut sum = LogSum::EMPTY;
    for (b, s, l) in partial {
        best = best.max(b);
        index_sets += s;
        sum.merge(l);
    }
    let log_a0 = a0.ln();
    Ok(SequenceCount {
        depth,
        delta,
        rho,
        a0,
        log_b0,
        a0_over_b0_pow4,
        log_factors,
        forced,
        j_cap,
        index_sets,
        log_max_bound: log_a0 + best,
        log_total: log_a0 + sum.value(),
        sparse_forced,
    })
}

/// Smallest `H` with `log(bound / A₀) ≤ H · log(1/δ) · δM` on every row of
/// `(δ, M, log(bound / A₀))`.
pub fn fit_h(rows: &[(f64, usize, f64)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Insufficient("no rows to fit H".into()));
    }
    let mut h: f64 = 0.0;
    for &(delta, depth, excess) in rows {
        let scale = (1.0 / delta).ln() * delta * depth as f64;
        if excess > 1e-12 {
            if !(scale > 0.0) {
                return Err(Error::Insufficient(format!("row δ = {delta}, M = {depth} has no room for growth")));
            }
            h = h.max(excess / scale);
        }
    }
    Ok(h)
}

/// Grid for [`brute_force_e`]: `z_steps + 1` points on `[c, 2c]` per weight
/// (both ends included) and `nu_steps` points `1 + i·(θ(W_{M+1}) − 1)/nu_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EGrid {
    pub z_steps: usize,
    pub nu_steps: usize,
}

impl EGrid {
    fn z(&self, c: f64, i: usize) -> f64 {
        c * (1.0 + i as f64 / self.z_steps as f64)
    }

    fn nu(&self, range: f64, i: usize) -> f64 {
        1.0 + (range - 1.0) * i as f64 / self.nu_steps as f64
    }
}

/// Whether `(z₁, z₂, ν)` keeps `‖Θ_m z_j ν‖ < ρ` for at least `(1 − δ)M`
/// indices, computed from distances to the nearest integer.
pub fn is_member(theta: &ThetaData, z1: f64, z2: f64, nu: f64, rho: f64, delta: f64) -> bool {
    let bad = theta
        .scales
        .iter()
        .filter(|s| {
            let a = crate::fourier::dist_to_int(*s * z1 * nu);
            let b = crate::fourier::dist_to_int(*s * z2 * nu);
            a.max(b) >= rho
        })
        .count();
    few_bad(bad, theta.depth(), delta)
}

/// The same condition phrased through the remainders `ε_m`, `δ_m`.
pub fn is_member_by_digits(k: &DigitSequence, l: &DigitSequence, rho: f64, delta: f64) -> bool {
    let bad = k.eps.iter().zip(&l.eps).filter(|(e, d)| e.abs().max(d.abs()) >= rho).count();
    few_bad(bad, k.eps.len(), delta)
}

/// Ratios `z₁/z₂` found on the grid, merged into intervals of length `Λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalSet {
    pub intervals: Vec<(f64, f64)>,
    pub members: usize,
    pub instances: usize,
    /// `Λ = 2 C_c λ_max^M` with `C_c = max(1, 3/c)`.
    pub interval_len: f64,
    /// Largest distance from an interval to the nearest `K_M/L_M` of its members.
    pub max_center_distance: f64,
}

/// Scans the grid for `(z₁, z₂, ν)` satisfying the membership condition.
pub fn brute_force_e(theta: &ThetaData, delta: f64, rho: f64, c: f64, grid: EGrid) -> Result<ExceptionalSet> {
    let depth = theta.depth();
    if depth > MAX_BRUTE_FORCE_M {
        return Err(Error::CapExceeded {
            what: "M for brute-force scan",
            needed: depth as u128,
            cap: MAX_BRUTE_FORCE_M as u128,
            advice: Some("use enumerate_sequence_count for larger M"),
        });
    }
    if !(delta > 0.0 && delta < 1.0) || !(rho > 0.0) || !(c > 0.0) {
        return invalid(format!("need δ ∈ (0,1), ρ > 0, c > 0; got δ = {delta}, ρ = {rho}, c = {c}"));
    }
    if grid.z_steps == 0 || grid.nu_steps == 0 {
        return invalid("grid needs at least one step per axis");
    }
    let nu_range = theta
        .nu_range()
        .ok_or_else(|| Error::Insufficient(format!("block W_{} is needed for the range of ν", depth + 1)))?;
    if c * theta.scale(depth) < 1.0 {
        return invalid(format!("c·Θ_M = {} is below 1, so L_M may vanish", c * theta.scale(depth)));
    }
    let lambda_max = 1.0 / theta.theta_min();
    let cc = (3.0 / c).max(1.0);
    let interval_len = 2.0 * cc * lambda_max.powi(depth as i32);
    let ratio_step = 2.0 / grid.z_steps as f64;
    if ratio_step > interval_len {
        return Err(Error::Insufficient(format!(
            "ratio resolution {ratio_step:e} is coarser than Λ = {interval_len:e}; use at least {} z steps",
            (2.0 / interval_len).ceil()
        )));
    }

    let slices: Vec<Vec<(f64, f64)>> = (0..=grid.z_steps)
        .into_par_iter()
        .map(|i| {
            let z1 = grid.z(c, i);
            let mut found = Vec::new();
            for j in 0..=grid.z_steps {
                let z2 = grid.z(c, j);
                for n in 0..grid.nu_steps {
                    let nu = grid.nu(nu_range, n);
                    if is_member(theta, z1, z2, nu, rho, delta) {
                        let km = split_nearest(theta.scale(depth) * z1 * nu).0;
                        let lm = split_nearest(theta.scale(depth) * z2 * nu).0;
                        found.push((z1 / z2, km / lm));
                    }
                }
            }
            found
        })
        .collect();
    let mut found: Vec<(f64, f64)> = slices.into_iter().flatten().collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut nearest: Vec<f64> = Vec::new();
    for &(r, q) in &found {
        match intervals.last() {
            Some(&(a, b)) if r <= b => {
                let d = (a - q).max(q - b).max(0.0);
                let last = nearest.last_mut().expect("paired with intervals");
                *last = last.min(d);
            }
            _ => {
                let (a, b) = (r, r + interval_len);
                intervals.push((a, b));
                nearest.push((a - q).max(q - b).max(0.0));
            }
        }
    }
    let instances = (grid.z_steps + 1) * (grid.z_steps + 1) * grid.nu_steps;
    Ok(ExceptionalSet {
        members: found.len(),
        instances,
        interval_len,
        max_center_distance: nearest.iter().copied().fold(0.0, f64::max),
        intervals,
    })
}

/// Exhaustive check that a small window of remainders pins down the next
/// digit pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub instances: usize,
    /// Windows where all six remainders were below `ρ_m`.
    pub checks: usize,
    pub violations: usize,
    /// Largest `|K_{m+2} − prediction|` over checked windows.
    pub max_residual: f64,
}

/// For every grid instance and every window `m` with all of
/// `|ε_m|, |ε_{m+1}|, |ε_{m+2}|, |δ_m|, |δ_{m+1}|, |δ_{m+2}|` below `ρ_m`,
/// checks that `K_{m+2}` and `L_{m+2}` are the unique integers within `1/2`
/// of their predictions.
pub fn uniqueness_sweep(theta: &ThetaData, growth: &Growth, c: f64, grid: EGrid) -> Result<UniquenessReport> {
    let depth = theta.depth();
    if depth < 3 {
        return invalid("M must be at least 3 for a digit window");
    }
    if grid.z_steps == 0 || grid.nu_steps == 0 {
        return invalid("grid needs at least one step per axis");
    }
    let nu_range = theta
        .nu_range()
        .ok_or_else(|| Error::Insufficient(format!("block W_{} is needed for the range of ν", depth + 1)))?;
    let rhos: Vec<f64> = (1..=depth - 2).map(|m| rho_m(theta, growth, m)).collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = (1..=depth - 2)
        .map(|m| (theta.word_beta[depth - m - 2], theta.word_beta[depth - m - 1]))
        .collect();

    let zs: Vec<f64> = (0..=grid.z_steps).map(|i| grid.z(c, i)).collect();
    let nus: Vec<f64> = (0..grid.nu_steps).map(|n| grid.nu(nu_range, n)).collect();
    let digit_table: Vec<Vec<DigitSequence>> = zs
        .par_iter()
        .map(|&z| nus.iter().map(|&nu| digits(z, nu, theta)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let per_slice: Vec<Result<(usize, usize, f64)>> = (0..zs.len())
        .into_par_iter()
        .map(|i| {
            let mut checks = 0;
            let mut violations = 0;
            let mut worst: f64 = 0.0;
            for j in 0..zs.len() {
                for (k, l) in digit_table[i].iter().zip(&digit_table[j]) {
                    for m in 1..=depth - 2 {
                        let window = (m - 1..m + 2).map(|x| k.eps[x].abs().max(l.eps[x].abs())).fold(0.0, f64::max);
                        if window >= rhos[m - 1] {
                            continue;
                        }
                        checks += 1;
                        for d in [k, l] {
                            let pred = predicted_digit(d.digit(m), d.digit(m + 1), pairs[m - 1])?;
                            let r = (d.digit(m + 2) as f64 - pred).abs();
                            worst = worst.max(r);
                            if r >= 0.5 {
                                violations += 1;
                            }
                        }
                    }
                }
            }
            Ok((checks, violations, worst))
        })
        .collect();
    let mut report = UniquenessReport {
        instances: zs.len() * zs.len() * nus.len(),
        checks: 0,
        violations: 0,
        max_residual: 0.0,
    };
    for r in per_slice {
        let (c, v, w) = r?;
        report.checks += c;
        report.violations += v;
        report.max_residual = report.max_residual.max(w);
    }
    Ok(report)
}

/// Largest `Σ_{m∈ℐ} (|W_{M−m}| + |W_{M−m−1}|)` over `ℐ ⊆ {0, …, M−2}` with
/// `|ℐ| ≤ 4δM`.
pub fn wordlen_tail_stat(blocks: &BlockDecomposition, depth: usize, delta: f64) -> Result<f64> {
    if depth < 2 {
        return invalid("M must be at least 2");
    }
    blocks.require(depth)?;
    let mut sums: Vec<usize> =
        (0..=depth - 2).map(|m| blocks.word_len(depth - m) + blocks.word_len(depth - m - 1)).collect();
    sums.sort_unstable_by(|a, b| b.cmp(a));
    let take = ((4.0 * delta * depth as f64 + 1e-9).floor() as usize).min(sums.len());
    Ok(sums[..take].iter().sum::<usize>() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs_core::Ifs1;
    use crate::type_model::TypedSystem;
    use proptest::prelude::*;

    fn blocks_of(omega: &[usize], tau0: usize) -> BlockDecomposition {
        split_words(&OmegaPrefix::from_blocks(omega.to_vec()), tau0).unwrap()
    }

    #[test]
    fn split_examples() {
        let b = blocks_of(&[0, 0, 0], 0);
        assert_eq!(b.len(), 3);
        assert!(b.words().iter().all(|w| w.len() == 1));
        let b = blocks_of(&[1, 0, 1, 1, 0], 0);
        assert_eq!(b.words(), &[vec![1, 0], vec![1, 1, 0]]);
        assert_eq!(b.concat(), vec![1, 0, 1, 1, 0]);
        assert!(split_words(&OmegaPrefix::from_blocks(vec![1, 1]), 0).is_err());
        assert!(matches!(b.truncated(3), Err(Error::Insufficient(_))));
    }

    #[test]
    fn theta_powers_of_three() {
        let b = blocks_of(&[0; 6], 0);
        let th = theta_sequence(&b, &[3.0], 5).unwrap();
        for m in 1..=5 {
            assert_eq!(th.scale(m), 3f64.powi(m as i32 + 1));
        }
        assert_eq!(th.beta, vec![1.0]);
        assert!(!th.overflow);
    }

    #[test]
    fn first_scale_uses_last_block() {
        let b = blocks_of(&[1, 0, 1, 1, 0, 0, 1, 0], 0);
        let theta = [3.0, 5.0];
        let th = theta_sequence(&b, &theta, 3).unwrap();
        assert_eq!(th.scale(1), 3.0 * 3.0);
        assert_eq!(th.scale(2), th.scale(1) * 5.0 * 5.0 * 3.0);
        assert_eq!(th.nu_range(), Some(15.0));
        let short = theta_sequence(&b.truncated(3).unwrap(), &theta, 3).unwrap();
        assert_eq!(short.nu_range(), None);
    }

    #[test]
    fn theta_overflow_is_flagged() {
        let b = blocks_of(&[1; 700].iter().copied().chain([0, 0]).collect::<Vec<_>>(), 0);
        let th = theta_sequence(&b, &[3.0, 10.0], 2).unwrap();
        assert!(th.overflow);
        assert!(th.log_scales[1] > 700.0 * 10f64.ln());
        assert!(matches!(digits(1.0, 1.0, &th), Err(Error::Overflow(_))));
    }

    fn fixed_theta(scales: &[f64]) -> ThetaData {
        ThetaData {
            tau0: 0,
            theta: vec![3.0],
            beta: vec![1.0],
            scales: scales.to_vec(),
            log_scales: scales.iter().map(|s| s.ln()).collect(),
            overflow: false,
            word_beta: vec![1.0; scales.len() + 1],
            word_theta: vec![3.0; scales.len() + 1],
            word_len: vec![1; scales.len() + 1],
        }
    }

    #[test]
    fn digit_example() {
        let d = digits(1.0, 1.1, &fixed_theta(&[3.0, 9.0, 27.0])).unwrap();
        assert_eq!(d.k, vec![3, 10, 30]);
        for (e, want) in d.eps.iter().zip([0.3, -0.1, -0.3]) {
            assert!((e - want).abs() < 1e-12);
        }
        let d = digits(2.0, 1.0, &fixed_theta(&[3.0, 9.0, 27.0])).unwrap();
        assert!(d.eps.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn ties_round_up() {
        assert_eq!(split_nearest(2.5), (3.0, -0.5));
        assert_eq!(split_nearest(-2.5), (-2.0, -0.5));
    }

    #[test]
    fn digits_refuse_past_exact_range() {
        let th = fixed_theta(&[3.0, 2f64.powi(52)]);
        assert!(digits(1.0, 1.5, &th).is_ok());
        assert!(matches!(digits(2.0, 1.0, &th), Err(Error::Overflow(_))));
    }

    #[test]
    fn residual_examples() {
        assert_eq!(recursion_residual(9, 27, 81, (1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(recursion_residual(9, 27, 82, (1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(recursion_residual(3, 9, 81, (2.0, 1.0)).unwrap(), 0.0);
        assert!(recursion_residual(0, 3, 9, (1.0, 1.0)).is_err());
    }

    #[test]
    fn rho_m_depends_on_adjacent_lengths() {
        let b = blocks_of(&[0; 8], 0);
        let th = theta_sequence(&b, &[3.0], 7).unwrap();
        let g = Growth::new(&th);
        assert!(std::f64::consts::E.powf(1.0 / g.k as f64) <= 3.0);
        let r: Vec<f64> = (1..=5).map(|m| rho_m(&th, &g, m).unwrap()).collect();
        assert!(r.windows(2).all(|p| p[0] == p[1]));
        assert!(rho_m(&th, &g, 6).is_err());

        // W_4 is long; only m = 2 and m = 3 see it.
        let b = blocks_of(&[0, 0, 0, 1, 1, 0, 0, 0, 0, 0], 0);
        let th2 = theta_sequence(&b, &[3.0, 3.5], 7).unwrap();
        let g2 = Growth::new(&th2);
        let r2: Vec<f64> = (1..=5).map(|m| rho_m(&th2, &g2, m).unwrap()).collect();
        assert!(r2[1] < r2[0] && r2[2] < r2[3]);
        assert_eq!(r2[1], r2[2]);
    }

    #[test]
    fn k_for_small_theta() {
        let b = blocks_of(&[0; 4], 0);
        let th = theta_sequence(&b, &[1.2], 3).unwrap();
        let g = Growth::new(&th);
        assert!((1.0 / g.k as f64).exp() <= 1.2);
        assert!((1.0 / (g.k - 1) as f64).exp() > 1.2);
    }

    #[test]
    fn deterministic_when_no_room() {
        let b = blocks_of(&[0; 7], 0);
        let th = theta_sequence(&b, &[3.0], 6).unwrap();
        let g = Growth::new(&th);
        let s = enumerate_sequence_count(&th, &g, 0.04, 1e-9, 1.0).unwrap();
        assert_eq!(s.j_cap, 0);
        assert_eq!(s.index_sets, 1);
        assert!((s.log_max_bound - s.log_a0()).abs() < 1e-12);
        assert!(s.sparse_forced);
    }

    #[test]
    fn single_type_closed_form() {
        let depth = 8;
        let b = blocks_of(&[0; 9], 0);
        let th = theta_sequence(&b, &[3.0], depth).unwrap();
        let g = Growth::new(&th);
        let delta = 0.1;
        let rho = 1e-6;
        let s = enumerate_sequence_count(&th, &g, delta, rho, 1.0).unwrap();
        let big = (g.c * 3f64.powi(g.k as i32 + 2)).powi(2);
        assert!(s.forced.is_empty());
        assert_eq!(s.j_cap, 3);
        let factor = 2.0 * (2.0 * big + 1.0).ln();
        assert!((s.log_max_bound - (s.log_a0() + 3.0 * factor)).abs() < 1e-9);
        let choose = [1.0, 6.0, 15.0, 20.0];
        assert_eq!(s.index_sets, 42);
        let total: f64 = (0..=3).map(|j| choose[j] * (j as f64 * factor).exp()).sum();
        assert!((s.log_total - (s.log_a0() + total.ln())).abs() < 1e-9);
        assert!(s.a0 >= 1.0);
    }

    #[test]
    fn enumeration_guard() {
        let b = blocks_of(&[0; 23], 0);
        let th = theta_sequence(&b, &[3.0], 21).unwrap();
        assert!(matches!(
            enumerate_sequence_count(&th, &Growth::new(&th), 0.1, 1e-3, 1.0),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn fitted_h_makes_bound_hold() {
        let b = blocks_of(&[0; 20], 0);
        let mut rows = Vec::new();
        for depth in [6, 10, 14] {
            let th = theta_sequence(&b, &[3.0], depth).unwrap();
            let g = Growth::new(&th);
            for delta in [0.05, 0.1, 0.2] {
                let s = enumerate_sequence_count(&th, &g, delta, 1e-12, 1.0).unwrap();
                rows.push((delta, depth, s.log_max_bound - s.log_a0()));
            }
        }
        let h = fit_h(&rows).unwrap();
        assert!(h.is_finite() && h > 0.0);
        for (delta, depth, excess) in rows {
            assert!(excess <= h * (1.0 / delta).ln() * delta * depth as f64 + 1e-9);
        }
    }

    #[test]
    fn brute_force_full_when_rho_is_half() {
        let b = blocks_of(&[0; 5], 0);
        let th = theta_sequence(&b, &[3.0], 3).unwrap();
        let e = brute_force_e(&th, 0.2, 0.51, 1.0, EGrid { z_steps: 40, nu_steps: 3 }).unwrap();
        assert_eq!(e.members, e.instances);
        // Exact half-integers have distance 1/2, which is not below ρ = 1/2.
        let strict = brute_force_e(&th, 0.2, 0.5, 1.0, EGrid { z_steps: 40, nu_steps: 3 }).unwrap();
        assert!(strict.members < strict.instances);
        assert!((e.intervals[0].0 - 0.5).abs() < 1e-12);
        assert!(e.intervals.last().unwrap().1 >= 2.0);
        assert!(e.intervals.windows(2).all(|p| p[1].0 - p[0].1 <= 2.0 / 40.0));
    }

    #[test]
    fn brute_force_empty_for_tiny_rho() {
        let b = blocks_of(&[0, 1, 0, 0, 1, 1, 0, 0], 0);
        let th = theta_sequence(&b, &[3.0, 2.0f64.sqrt() + 1.0], 4).unwrap();
        let e = brute_force_e(&th, 0.2, 1e-9, 1.0, EGrid { z_steps: 60, nu_steps: 7 }).unwrap();
        assert!(e.intervals.is_empty());
    }

    #[test]
    fn brute_force_intervals_near_centres() {
        let b = blocks_of(&[0, 1, 0, 0, 1, 0, 0, 0], 0);
        let th = theta_sequence(&b, &[3.0, 4.0], 4).unwrap();
        let e = brute_force_e(&th, 0.25, 0.2, 1.0, EGrid { z_steps: 150, nu_steps: 9 }).unwrap();
        assert!(e.members > 0);
        assert!(e.max_center_distance <= e.interval_len);
    }

    #[test]
    fn brute_force_rejects_coarse_grid() {
        let b = blocks_of(&[0; 8], 0);
        let th = theta_sequence(&b, &[3.0], 6).unwrap();
        assert!(matches!(
            brute_force_e(&th, 0.2, 0.1, 1.0, EGrid { z_steps: 10, nu_steps: 2 }),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn uniqueness_holds_on_small_grid() {
        let b = blocks_of(&[0, 1, 0, 0, 0, 1, 0, 0], 0);
        let th = theta_sequence(&b, &[3.0, 9.0], 5).unwrap();
        let g = Growth::new(&th);
        let r = uniqueness_sweep(&th, &g, 1.0, EGrid { z_steps: 30, nu_steps: 10 }).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.instances, 31 * 31 * 10);
    }

    #[test]
    fn tail_stat_examples() {
        let b = blocks_of(&[0; 11], 0);
        assert_eq!(wordlen_tail_stat(&b, 10, 0.1).unwrap(), 8.0);
        let mut omega = vec![0; 10];
        omega.splice(5..5, vec![1; 20]);
        let b = blocks_of(&omega, 0);
        // W_6 has length 21; the sums (|W_7|+|W_6|) and (|W_6|+|W_5|) lead.
        assert_eq!(wordlen_tail_stat(&b, 10, 0.025).unwrap(), 22.0);
        assert_eq!(wordlen_tail_stat(&b, 10, 0.05).unwrap(), 44.0);
    }

    #[test]
    fn tail_stat_bounded_for_sampled_omega() {
        let ifs = Ifs1::from_parts(&[1.0 / 3.0, 1.0 / 3.0], &[0.0, 2.0 / 3.0], vec![0.5, 0.5]).unwrap();
        let sys = TypedSystem::new(&ifs, 1).unwrap();
        let depth = 50;
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let b = split_sampled(&sys, StreamKey::new(seed, "ek-tail", 0), 0, depth + 1).unwrap();
            for delta in [0.05, 0.1, 0.2] {
                let s = wordlen_tail_stat(&b, depth, delta).unwrap();
                worst = worst.max(s / (delta * depth as f64) / (1.0 / (4.0 * delta)).ln());
            }
        }
        assert!(worst.is_finite() && worst > 0.0, "fitted constant {worst}");
    }

    #[test]
    fn reindexing_identity() {
        let theta = [3.0, 4.5, 2.5];
        for seed in 0..20u64 {
            let key = StreamKey::new(seed, "ek-reindex", 0);
            let omega: Vec<usize> = key.uniforms(0, 40).iter().map(|u| (u * 3.0) as usize).collect();
            let Ok(b) = split_words(&OmegaPrefix::from_blocks(omega.clone()), 0) else { continue };
            if b.len() < 4 {
                continue;
            }
            let depth = b.len() - 1;
            let th = theta_sequence(&b, &theta, depth).unwrap();
            let positions: Vec<usize> = omega.iter().enumerate().filter(|(_, &t)| t == 0).map(|(i, _)| i + 1).collect();
            let lambda_prefix = |k: usize| omega[..k].iter().map(|&t| 1.0 / theta[t]).product::<f64>();
            let theta_prefix = |k: usize| omega[..k].iter().map(|&t| theta[t]).product::<f64>();
            let f = 0.37 + key.uniform_at(50);
            let nu = 1.0 + key.uniform_at(51);
            let xi = nu * theta_prefix(positions[depth - 1]);
            for m in 1..depth {
                let lhs = th.scale(m) * f * nu;
                let rhs = lambda_prefix(positions[depth - m - 1] - 1) * f * xi;
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs(), "m = {m}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn residual_within_recursion_bound() {
        let b = blocks_of(&[0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0], 0);
        let th = theta_sequence(&b, &[3.0, 3.7], 5).unwrap();
        let g = Growth::new(&th);
        let depth = th.depth();
        for i in 0..40 {
            let z = 1.0 + i as f64 / 40.0;
            for n in 0..10 {
                let nu = 1.0 + n as f64 / 10.0;
                let d = digits(z, nu, &th).unwrap();
                for m in 1..=depth - 2 {
                    let pair = (th.word_beta[depth - m - 2], th.word_beta[depth - m - 1]);
                    let r = recursion_residual(d.digit(m), d.digit(m + 1), d.digit(m + 2), pair).unwrap();
                    let e = d.eps[m - 1].abs().max(d.eps[m].abs()).max(d.eps[m + 1].abs());
                    let bound = log_b_m(&th, &g, m).unwrap().exp() * e;
                    assert!(r <= bound + 1e-9, "m = {m}: {r} > {bound}");
                }
            }
        }
    }

    #[test]
    fn lower_bound_on_last_digit() {
        let b = blocks_of(&[0, 1, 0, 1, 1, 0, 0, 1, 0, 0], 0);
        let th = theta_sequence(&b, &[3.0, 4.0], 4).unwrap();
        let lambda_max = 1.0 / th.theta_min();
        let c = 0.7;
        for i in 0..20 {
            let z = c * (1.0 + i as f64 / 20.0);
            let d = digits(z, 1.0 + 0.1 * i as f64, &th).unwrap();
            assert!(d.digit(4) as f64 >= 0.5 * c * lambda_max.powi(-4));
        }
    }

    proptest! {
        #[test]
        fn reconstruction_is_exact(z in 0.5f64..4.0, nu in 1.0f64..3.0, pattern in proptest::collection::vec(0usize..3, 12)) {
            let mut omega = pattern;
            omega.extend([0, 0, 0, 0, 0]);
            let b = blocks_of(&omega, 0);
            let depth = b.len() - 1;
            let th = theta_sequence(&b, &[3.0, 2.2, 5.0], depth).unwrap();
            let d = digits(z, nu, &th).unwrap();
            for m in 1..=depth {
                let x = th.scale(m) * z * nu;
                prop_assert_eq!(d.digit(m) as f64 + d.remainder(m), x);
                prop_assert!((-0.5..0.5).contains(&d.remainder(m)));
            }
            prop_assert!(th.scales.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn split_round_trips(omega in proptest::collection::vec(0usize..3, 1..40)) {
            let mut omega = omega;
            omega.push(1);
            let b = blocks_of(&omega, 1);
            let cut = omega.iter().rposition(|&t| t == 1).unwrap() + 1;
            prop_assert_eq!(b.concat(), omega[..cut].to_vec());
            prop_assert!(b.words().iter().all(|w| *w.last().unwrap() == 1));
            prop_assert!(b.words().iter().all(|w| w[..w.len() - 1].iter().all(|&t| t != 1)));
        }

        #[test]
        fn two_counting_forms_agree(z1 in 1.0f64..2.0, z2 in 1.0f64..2.0, nu in 1.0f64..3.0, rho in 0.01f64..0.5, delta in 0.05f64..0.9) {
            let b = blocks_of(&[0, 1, 0, 0, 1, 1, 0, 0, 0], 0);
            let th = theta_sequence(&b, &[3.0, 4.0], 5).unwrap();
            let k = digits(z1, nu, &th).unwrap();
            let l = digits(z2, nu, &th).unwrap();
            prop_assert_eq!(is_member(&th, z1, z2, nu, rho, delta), is_member_by_digits(&k, &l, rho, delta));
        }
    }
}
