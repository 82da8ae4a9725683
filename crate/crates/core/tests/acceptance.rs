//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use serde_json::{json, Value};

use selfsim::erdos_kahane::{
    brute_force_e, digits, enumerate_sequence_count, fit_h, split_sampled, split_words, theta_sequence, thetas_of,
    uniqueness_sweep, EGrid, Growth,
};
use selfsim::fourier::{alpha_of_rho, certified_depth, ft_atomic, ft_product, three_map_bound};
use selfsim::ifs_core::{delta_n, Ifs1};
use selfsim::measure_numerics::{
    boxdim_of_samples, l2_curve, l2_exponent, level_n_ssm, verify_disintegration, DisintegrationMode,
};
use selfsim::param_family::{parse_expr, Domain, ParamIfs1};
use selfsim::projection_app::{carpet, project, project_family};
use selfsim::random_model::{sample_types, FactorFilter, OmegaPrefix, StreamKey, Truncation};
use selfsim::transversality::{check_order_k, projection_transversality_constant, Verdict};
use selfsim::type_model::{
    binomial, enumerate_types, multiplicity, similarity_dimension_of, type_probability, AtomicMeasure, RandomModel,
    RetypeKind, RetypedSystem, TypedSystem,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || {
        format!("took {:.1} s, limit {limit_secs} s", elapsed.as_secs_f64())
    })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Two maps with ratios 1/2 and 1/3 and weights drawn from `key`.
fn half_third(key: StreamKey) -> Ifs1 {
    let p = 0.1 + 0.8 * key.uniform_at(0);
    Ifs1::from_parts(&[0.5, 1.0 / 3.0], &[0.0, 0.5], vec![p, 1.0 - p]).unwrap()
}

fn exact_disintegration() -> Outcome {
    let start = Instant::now();
    let ifs = half_third(StreamKey::new(1, "acceptance-p", 0));
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        let sys = TypedSystem::new(&ifs, n).map_err(e)?;
        for k in 1..=3 {
            let r = verify_disintegration(&sys, k, &DisintegrationMode::Exact).map_err(e)?;
            ensure(r.unmatched == 0, || format!("N = {n}, k = {k}: {} unmatched atoms", r.unmatched))?;
            ensure(r.max_error < 1e-12, || format!("N = {n}, k = {k}: discrepancy {:e}", r.max_error))?;
            worst = worst.max(r.max_error);
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("max discrepancy {worst:.1e} over 9 (N, k) pairs"))
}

fn monte_carlo_disintegration() -> Outcome {
    let start = Instant::now();
    let ifs = half_third(StreamKey::new(1, "acceptance-p", 0));
    let xis: Vec<f64> = (0..10).map(|i| 1.0 + 99.0 * i as f64 / 9.0).collect();
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        let sys = TypedSystem::new(&ifs, n).map_err(e)?;
        for k in 1..=3 {
            let mode = DisintegrationMode::MonteCarlo { samples: 20_000, frequencies: xis.clone(), seed: 11 };
            let r = verify_disintegration(&sys, k, &mode).map_err(e)?;
            ensure(r.max_error <= 0.021, || format!("N = {n}, k = {k}: error {}", r.max_error))?;
            worst = worst.max(r.max_error);
        }
    }
    within(start.elapsed(), 60)?;
    Ok(format!("max |avg − exact| {worst:.4} ≤ 0.021"))
}

fn product_formula() -> Outcome {
    let fam = ParamIfs1::new(
        vec![0.4, 0.3, 0.25],
        vec![parse_expr("0").unwrap(), parse_expr("0.5 + 0.2*sin(u)").unwrap(), parse_expr("1 - 0.1*u^2").unwrap()],
        vec![0.3, 0.3, 0.4],
        Domain::new(0.0, 1.0, false).unwrap(),
    )
    .map_err(e)?;
    let key = StreamKey::new(5, "acceptance-formula", 0);
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let draw = key.uniforms(case * 8, 8);
        let u = draw[0];
        let n = 1 + (draw[1] * 2.0) as usize;
        let len = 1 + (draw[2] * 5.0) as usize;
        let xi = 200.0 * draw[3] - 100.0;
        let sys = TypedSystem::new(&fam.freeze(u).map_err(e)?, n).map_err(e)?;
        let omega = sample_types(&sys, StreamKey::new(case, "acceptance-omega", 0), len).map_err(e)?;
        // explicit convolution of the scaled block measures
        let mut conv = AtomicMeasure::dirac(0.0);
        let mut scale = 1.0;
        for &b in omega.blocks() {
            conv = conv.convolve(&sys.eta(b).map_err(e)?.scale_push(scale), 1 << 24).map_err(e)?;
            scale *= sys.contraction(b);
        }
        let direct = ft_atomic(&conv, xi);
        let product = ft_product(&sys, &omega, xi, Truncation::Prefix, FactorFilter::All).map_err(e)?.value;
        let diff = (direct - product).norm();
        ensure(diff <= 1e-12, || format!("case {case}: |Δ| = {diff:e}"))?;
        worst = worst.max(diff);
    }

    let mut tails = 0;
    for case in 0..100u64 {
        let draw = key.uniforms(100_000 + case * 4, 4);
        let sys = TypedSystem::new(&fam.freeze(draw[0]).map_err(e)?, 1 + (draw[1] * 2.0) as usize).map_err(e)?;
        let xi = 1.0 + 1e4 * draw[2];
        let tol = 10f64.powf(-3.0 - 5.0 * draw[3]);
        let omega = sample_types(&sys, StreamKey::new(case, "acceptance-tail", 0), 1).map_err(e)?;
        let tail = ft_product(&sys, &omega, xi, Truncation::Tail(tol), FactorFilter::All).map_err(e)?;
        let depth = certified_depth(&sys, xi, tol).map_err(e)?;
        let doubled = omega.prefix(&sys, 2 * depth).map_err(e)?;
        let deeper = ft_product(&sys, &doubled, xi, Truncation::Prefix, FactorFilter::All).map_err(e)?;
        let gap = (tail.value - deeper.value).norm();
        ensure(gap <= tail.tail_error, || format!("tail case {case}: {gap:e} > {:e}", tail.tail_error))?;
        tails += 1;
    }
    Ok(format!("1000 prefix cases, max |Δ| {worst:.1e}; {tails} tail bounds hold under depth doubling"))
}

fn type_combinatorics() -> Outcome {
    let key = StreamKey::new(2, "acceptance-types", 0);
    let mut checked = 0;
    for m in 1..=4usize {
        for n in 1..=10usize {
            let types = enumerate_types(m, n);
            let want = binomial(n + m - 1, m - 1);
            ensure(BigUint::from(types.len()) == want, || format!("m = {m}, N = {n}: {} types vs {want}", types.len()))?;
            let total: BigUint = types.iter().map(multiplicity).sum();
            ensure(total == BigUint::from(m).pow(n as u32), || format!("m = {m}, N = {n}: Σm(τ) = {total}"))?;
            let raw: Vec<f64> = key.uniforms((m * 100 + n) as u64 * 4, m).iter().map(|u| 0.05 + u).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|w| w / s).collect();
            let q: f64 = types.iter().map(|t| type_probability(t, &p).unwrap()).sum();
            ensure((q - 1.0).abs() < 1e-12, || format!("m = {m}, N = {n}: Σq = {q}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (m, N) pairs exact"))
}

fn similarity_dimensions() -> Outcome {
    let carpet_dim = carpet().similarity_dimension().map_err(e)?;
    let want = 8f64.ln() / 3f64.ln();
    ensure((carpet_dim - want).abs() < 1e-9, || format!("carpet {carpet_dim} vs {want}"))?;
    let key = StreamKey::new(3, "acceptance-simdim", 0);
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let d = key.uniforms(case * 16, 16);
        let m = 2 + (d[0] * 2.0) as usize;
        let ratios: Vec<f64> = (0..m).map(|j| 0.1 + 0.5 * d[1 + j]).collect();
        let trans: Vec<f64> = (0..m).map(|j| d[5 + j] * 2.0).collect();
        let raw: Vec<f64> = (0..m).map(|j| 0.05 + d[9 + j]).collect();
        let s: f64 = raw.iter().sum();
        let ifs = Ifs1::from_parts(&ratios, &trans, raw.iter().map(|w| w / s).collect()).map_err(e)?;
        let sys = TypedSystem::new(&ifs, 2).map_err(e)?;
        let base = sys.simdim().map_err(e)?;
        for split in [2usize, 3, 5] {
            let big = RetypedSystem::new(&sys, split, RetypeKind::Big).map_err(e)?;
            let got = similarity_dimension_of(&big, 10_000_000).map_err(e)?;
            let want = (1.0 - 1.0 / split as f64) * base;
            ensure((got - want).abs() < 1e-10, || format!("case {case}, s = {split}: {got} vs {want}"))?;
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!("carpet {carpet_dim:.12}; retyped identity max error {worst:.1e} over 60 cases"))
}

fn alpha_machinery() -> Outcome {
    let half = alpha_of_rho(0.5, 1e-7).map_err(e)?;
    ensure((half.lower - 2.0).abs() < 1e-6 && (half.upper - 2.0).abs() < 1e-6, || {
        format!("α(1/2) ∈ [{}, {}]", half.lower, half.upper)
    })?;
    let mut certified = Vec::new();
    for rho in [0.05, 0.1, 0.25] {
        let a = alpha_of_rho(rho, 1e-4).map_err(e)?;
        ensure(a.lower > 0.0, || format!("α({rho}) lower bound {}", a.lower))?;
        certified.push(format!("α({rho}) ≥ {:.4}", a.lower));
    }

    // two maps at N = 3: the types (2,1) and (1,2) carry three maps each
    let ifs = Ifs1::from_parts(&[0.45, 0.3], &[0.0, 1.0], vec![0.4, 0.6]).unwrap();
    let sys = TypedSystem::new(&ifs, 3).map_err(e)?;
    let rich: Vec<usize> = (0..sys.type_count()).filter(|&t| sys.map_count(t) >= 3.0).collect();
    ensure(!rich.is_empty(), || "no type with three maps".into())?;
    let key = StreamKey::new(4, "acceptance-form9", 0);
    for case in 0..1000u64 {
        let d = key.uniforms(case * 4, 4);
        let tau0 = rich[(d[0] * rich.len() as f64) as usize];
        let len = 1 + (d[1] * 12.0) as usize;
        let xi = 1.0 + 1e5 * d[2];
        let omega = sample_types(&sys, StreamKey::new(case, "acceptance-form9-omega", 0), len).map_err(e)?;
        let modulus = ft_product(&sys, &omega, xi, Truncation::Prefix, FactorFilter::All).map_err(e)?.value.norm();
        let m = sys.map_count(tau0) as usize;
        let picks = [0, 1 + (d[3] * (m - 2) as f64) as usize, m - 1];
        let picks = if picks[1] == m - 1 { [0, 1, m - 1] } else { picks };
        let bound = three_map_bound(&sys, &omega, xi, tau0, picks).map_err(e)?;
        // equality is attained when ω has τ₀ only at three-map positions
        ensure(modulus <= bound * (1.0 + 1e-9), || format!("case {case}: |η̂| = {modulus} > {bound}"))?;
    }
    Ok(format!("α(1/2) = {:.8}; {}; product bound on 1000 instances", half.lower, certified.join(", ")))
}

fn erdos_kahane() -> Outcome {
    let start = Instant::now();
    // digit reconstruction
    let sys = TypedSystem::new(&Ifs1::from_parts(&[1.0 / 3.0, 0.2], &[0.0, 0.7], vec![0.5, 0.5]).unwrap(), 1)
        .map_err(e)?;
    let thetas = thetas_of(&sys);
    let blocks = split_sampled(&sys, StreamKey::new(8, "acceptance-ek", 0), 0, 8).map_err(e)?;
    let mut checked = 0;
    for depth in 2..=6 {
        let th = theta_sequence(&blocks, &thetas, depth).map_err(e)?;
        for i in 0..200 {
            let z = 1.0 + i as f64 / 200.0;
            let nu = 1.0 + (i % 17) as f64 / 17.0;
            let Ok(d) = digits(z, nu, &th) else { continue };
            for m in 1..=depth {
                let x = th.scale(m) * z * nu;
                let back = d.digit(m) as f64 + d.remainder(m);
                let ulp = f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
                ensure((back - x).abs() <= ulp, || format!("M = {depth}, m = {m}: {back} vs {x}"))?;
                checked += 1;
            }
        }
    }

    // uniqueness sweep, one-type and two-type θ sequences
    let single = split_words(&OmegaPrefix::from_blocks(vec![0; 8]), 0).map_err(e)?;
    let grid = EGrid { z_steps: 60, nu_steps: 30 };
    let mut instances = 0;
    let mut sweeps = 0;
    for (b, th) in [(&single, vec![3.0]), (&blocks, thetas.clone())] {
        for depth in 3..=6 {
            let t = theta_sequence(b, &th, depth).map_err(e)?;
            let r = uniqueness_sweep(&t, &Growth::new(&t), 1.0, grid).map_err(e)?;
            ensure(r.violations == 0, || format!("M = {depth}: {} violations", r.violations))?;
            ensure(r.instances >= 100_000, || format!("only {} instances", r.instances))?;
            instances += r.instances;
            sweeps += 1;
        }
    }

    // brute force against the branching bound
    let mut rows = Vec::new();
    let mut configs = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut most = 0;
    for depth in 3..=6 {
        let th = theta_sequence(&blocks, &thetas, depth).map_err(e)?;
        let g = Growth::new(&th);
        for delta in [0.2, 0.35] {
            for rho in [0.05, 0.1, 0.2] {
                let count = enumerate_sequence_count(&th, &g, delta, rho, 1.0).map_err(e)?;
                let set = brute_force_e(&th, delta, rho, 1.0, EGrid { z_steps: 600, nu_steps: 6 }).map_err(e)?;
                let bound = 8.0 * count.log_total.exp();
                let n = set.intervals.len() as f64;
                ensure(n <= bound, || format!("M = {depth}, δ = {delta}, ρ = {rho}: {n} intervals > {bound}"))?;
                worst_ratio = worst_ratio.max(n / count.log_total.exp());
                most = most.max(set.intervals.len());
                rows.push((delta, depth, count.log_max_bound - count.log_a0()));
                configs += 1;
            }
        }
    }
    let h = fit_h(&rows).map_err(e)?;
    ensure(h.is_finite(), || format!("fitted H = {h}"))?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "{checked} digits exact; {sweeps} sweeps, {instances} instances, 0 violations; {configs} configs, up to {most} intervals, max intervals/bound {worst_ratio:.2e}; H = {h:.4}"
    ))
}

#[allow(clippy::approx_constant)]
fn transversality() -> Outcome {
    let constant = projection_transversality_constant(2_000_000);
    ensure(constant >= 0.707106 - 1e-6, || format!("constant {constant}"))?;
    let planar = carpet();
    let t = planar.translations();
    let mut gap = f64::INFINITY;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            gap = gap.min(((t[i][0] - t[j][0]).powi(2) + (t[i][1] - t[j][1]).powi(2)).sqrt());
        }
    }
    let c = 0.7 * gap;
    let cert = check_order_k(&project_family(&planar).map_err(e)?, 1, 1, c, 1e-4).map_err(e)?;
    ensure(cert.verdict == Verdict::Certified, || format!("carpet verdict {:?}, margin {}", cert.verdict, cert.margin))?;
    let dup = ParamIfs1::new(
        vec![0.3, 0.3, 0.3],
        vec![parse_expr("cos(u)").unwrap(), parse_expr("cos(u)").unwrap(), parse_expr("1").unwrap()],
        vec![0.3, 0.3, 0.4],
        Domain::new(0.0, PI, true).unwrap(),
    )
    .map_err(e)?;
    let v = check_order_k(&dup, 1, 1, 0.5, 1e-3).map_err(e)?;
    ensure(matches!(v.verdict, Verdict::Violated { .. }), || format!("duplicated family verdict {:?}", v.verdict))?;
    Ok(format!("constant {constant:.7}; carpet certified with c = {c:.4}, margin {:.2e}; duplicate violated", cert.margin))
}

fn geometry_oracles() -> Outcome {
    let binary = Ifs1::uniform(&[0.5, 0.5], &[0.0, 0.5]).unwrap();
    for n in 1..=15 {
        let d = delta_n(&binary, n).map_err(e)?;
        ensure(d == 2f64.powi(-(n as i32)), || format!("binary Δ_{n} = {d}"))?;
    }
    let planar = carpet();
    let diag = delta_n(&project(&planar, PI / 4.0).map_err(e)?, 1).map_err(e)?;
    ensure(diag == 0.0, || format!("Δ₁ at π/4 is {diag}"))?;
    let golden = ((1.0 + 5f64.sqrt()) / 2.0).atan();
    let line = project(&planar, golden).map_err(e)?;
    let mut smallest = f64::INFINITY;
    for n in 1..=7 {
        let d = delta_n(&line, n).map_err(e)?;
        ensure(d > 0.0, || format!("golden Δ_{n} = {d}"))?;
        smallest = d;
    }
    Ok(format!("binary exact to n = 15; Δ₁(π/4) = 0; golden Δ₇ = {smallest:.3e}"))
}

fn dimension_diagnostics() -> Outcome {
    let cantor = Ifs1::uniform(&[1.0 / 3.0, 1.0 / 3.0], &[0.0, 2.0 / 3.0]).unwrap();
    let half_cell = 0.5 * 3f64.powi(-10);
    let pts: Vec<f64> = cantor.level_points(10, 1 << 20).map_err(e)?.iter().map(|x| x + half_cell).collect();
    let triadic: Vec<f64> = (1..=7).map(|j| 3f64.powi(-j)).collect();
    let dim = boxdim_of_samples(&pts, &triadic).map_err(e)?;
    let want = 2f64.ln() / 3f64.ln();
    ensure((dim - want).abs() < 0.05, || format!("Cantor box dimension {dim}"))?;

    let mu = level_n_ssm(&cantor, 8).map_err(e)?.translate(0.5 * 3f64.powi(-8));
    let bins: Vec<usize> = (1..=6).map(|j| 3usize.pow(j)).collect();
    let a = l2_exponent(&l2_curve(&mu, 0.0, 1.0, &bins).map_err(e)?).map_err(e)?;
    let target = 1.0 - want;
    ensure((a - target).abs() < 0.2 * target, || format!("L² exponent {a} vs {target}"))?;

    let uniform = StreamKey::new(6, "acceptance-uniform", 0).uniforms(0, 100_000);
    let dyadic: Vec<f64> = (1..=10).map(|j| 2f64.powi(-j)).collect();
    let u = boxdim_of_samples(&uniform, &dyadic).map_err(e)?;
    ensure((u - 1.0).abs() < 0.05, || format!("uniform box dimension {u}"))?;
    Ok(format!("Cantor box {dim:.4}, L² exponent {a:.4} (target {target:.4}), uniform {u:.4}"))
}

fn run_cli(config: &Path, command: &str, out: &Path) -> Result<(), String> {
    let args: Vec<String> = ["selfsim", command, config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    match selfsim::cli::run(&args) {
        0 => Ok(()),
        code => Err(format!("`{command}` exited with {code}")),
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|d| {
            d.filter_map(|f| f.ok())
                .map(|f| (f.file_name().to_string_lossy().into_owned(), fs::read(f.path()).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root: PathBuf = std::env::temp_dir().join(format!("selfsim-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).map_err(e)?;
    let line: Value = json!({
        "system": {
            "dim": 1,
            "maps": [{"lambda": 0.4, "t": 0}, {"lambda": 0.35, "t": "0.5 + 0.3*sin(u)"}, {"lambda": 0.3, "t": 1}],
            "p": [0.3, 0.3, 0.4]
        },
        "domain": [0, 1],
        "types": {"N": 3},
        "delta": {"u": 0.3, "n_max": 6},
        "transversality": {"n": 1, "c": 0.2, "grid_step": 0.01},
        "disintegrate": {"u": 0.3, "N": 2, "k": 2, "mode": "monte_carlo", "samples": 2000},
        "fourier": {"u": 0.3, "N": 2, "xi": {"lo": 1, "hi": 1000, "count": 16}, "ensemble": 2},
        "ek": {"u": 0.3, "N": 1, "M": [3, 4], "delta": [0.3], "rho": [0.1], "z_steps": 200, "nu_steps": 4, "sweep": true},
        "density": {"u": 0.3, "points": 20000, "bins": [16, 32, 64]}
    });
    let planar: Value = json!({
        "system": {"preset": "carpet"},
        "scan-angles": {"angles": 3, "points": 2000, "n_max": 3, "ensemble": 1, "xi": {"lo": 1, "hi": 300, "count": 20}},
        "transversality": {"n": 1, "grid_step": 0.01}
    });
    let line_cfg = root.join("line.json");
    let planar_cfg = root.join("planar.json");
    fs::write(&line_cfg, line.to_string()).map_err(e)?;
    fs::write(&planar_cfg, planar.to_string()).map_err(e)?;
    let runs: [(&Path, &str); 10] = [
        (&line_cfg, "simdim"),
        (&line_cfg, "types"),
        (&line_cfg, "delta"),
        (&line_cfg, "transversality"),
        (&line_cfg, "disintegrate"),
        (&line_cfg, "fourier"),
        (&line_cfg, "ek"),
        (&line_cfg, "density"),
        (&planar_cfg, "scan-angles"),
        (&planar_cfg, "transversality"),
    ];
    let mut files = 0;
    for (i, (cfg, cmd)) in runs.iter().enumerate() {
        let a = root.join(format!("{i}-a"));
        let b = root.join(format!("{i}-b"));
        run_cli(cfg, cmd, &a)?;
        run_cli(cfg, cmd, &b)?;
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        ensure(!sa.is_empty(), || format!("`{cmd}` wrote nothing"))?;
        ensure(sa == sb, || format!("`{cmd}` outputs differ between runs"))?;
        files += sa.len();
    }
    let _ = fs::remove_dir_all(&root);
    Ok(format!("{} runs, {files} files byte-identical", runs.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("exact disintegration", exact_disintegration),
        ("Monte Carlo disintegration", monte_carlo_disintegration),
        ("Fourier product formula", product_formula),
        ("type combinatorics", type_combinatorics),
        ("similarity dimensions", similarity_dimensions),
        ("α and product bound", alpha_machinery),
        ("Erdős–Kahane machinery", erdos_kahane),
        ("transversality", transversality),
        ("geometry oracles", geometry_oracles),
        ("dimension diagnostics", dimension_diagnostics),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
