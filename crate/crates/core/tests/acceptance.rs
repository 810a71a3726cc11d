//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,8` restricts the run to those criteria.

use dyadic::cns::{self, DataSpec, SchemeConfig, SolverState};
use dyadic::lab::{self, CampaignConfig, FieldRecipe, Spectrum, Verdict, LEMMAS};
use dyadic::linear::{self, MomentumProblem, TimeField, TransportProblem};
use dyadic::paraproduct::bony_split;
use dyadic::weights::{self, Smallness, WeightSequence};
use dyadic::{DyadicPartition, Field, Grid, NormSeries, Rank};
use std::io::Write;
use std::time::Instant;

/// Writes past the test harness's output capture, so the report shows up in
/// plain `cargo test` runs too.
macro_rules! report {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stderr(), $($arg)*);
    }};
}

type Outcome = Result<String, String>;

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn power_law(seed: u64, g: Grid, j_cut: i32) -> Result<Field, String> {
    let r = FieldRecipe { seed, spectrum: Spectrum::PowerLaw { alpha: None, j_cut }, amplitude: 1.0, rank: Rank::Scalar };
    lab::generate(&r, g).map_err(e2s)
}

fn sup(f: &Field) -> f64 {
    f.lp_norm(f64::INFINITY).unwrap()
}

/// Partition of unity and block reconstruction on a 128² grid.
fn partition_and_reconstruction() -> Outcome {
    let g = Grid::periodic(2, 128).map_err(e2s)?;
    let part = DyadicPartition::for_grid(g).map_err(e2s)?;
    let defect = part.partition_defect();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let f = power_law(seed, g, 6)?;
        let mut sum = Field::zeros(g, Rank::Scalar).shift(f.mean()[0]);
        for b in part.blocks(&f).map_err(e2s)? {
            sum = sum.add(&b).map_err(e2s)?;
        }
        worst = worst.max(sum.sub(&f).map_err(e2s)?.lp_norm(2.0).map_err(e2s)? / f.lp_norm(2.0).map_err(e2s)?);
    }
    check(
        defect <= 1e-10 && worst <= 1e-10,
        format!("partition defect {defect:.2e}, reconstruction error {worst:.2e} over 50 fields"),
    )
}

/// Bony identity, almost orthogonality and the support rule for
/// low-high products.
fn exact_identities() -> Outcome {
    let g = Grid::periodic(2, 128).map_err(e2s)?;
    let part = DyadicPartition::for_grid(g).map_err(e2s)?;
    let mut bony: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    let mut low_high: f64 = 0.0;
    for seed in 0..5 {
        let u = power_law(2 * seed, g, 6)?;
        let v = power_law(2 * seed + 1, g, 6)?;
        let uv = u.product(&v).map_err(e2s)?;
        let split = bony_split(&u, &v, &part).map_err(e2s)?;
        bony = bony.max(split.sum().sub(&uv).map_err(e2s)?.lp_norm(2.0).map_err(e2s)? / uv.lp_norm(2.0).map_err(e2s)?);
        let blocks = part.blocks(&u).map_err(e2s)?;
        for k in part.indices() {
            let bk = &blocks[(k - part.j_min()) as usize];
            // Below the first block the low-frequency cut-off is empty.
            let low = if k == part.j_min() {
                Field::zeros(g, Rank::Scalar)
            } else {
                part.low(&u, k - 1).map_err(e2s)?.product(bk).map_err(e2s)?
            };
            for j in part.indices() {
                if (j - k).abs() >= 2 {
                    ortho = ortho.max(sup(&part.delta(bk, j).map_err(e2s)?));
                }
                if (j - k).abs() >= 5 {
                    low_high = low_high.max(sup(&part.delta(&low, j).map_err(e2s)?));
                }
            }
        }
    }
    check(
        bony <= 1e-10 && ortho == 0.0 && low_high == 0.0,
        format!("Bony defect {bony:.2e}; max |D_j D_k f| = {ortho:e}; max |D_j(S_(k-1)f D_k f)| = {low_high:e}"),
    )
}

/// Bernstein ratios over 200 annulus fields at j and j + 3.
fn bernstein() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (p, q) in [(2.0, 2.0), (2.0, f64::INFINITY), (1.0, 2.0)] {
        let cfg = CampaignConfig {
            trials: 200,
            octaves: Some(3),
            j: Some(2),
            p: Some(p),
            q: Some(q),
            drift_bound: 0.10,
            ..CampaignConfig::default()
        };
        let r = lab::campaign("bernstein", &cfg).map_err(e2s)?;
        ok &= r.verdict == Verdict::Pass;
        lines.push(format!("(p,q)=({p},{q}) max {:.3} drift {:.4}", r.max_ratio, r.scale_drift));
    }
    check(ok, lines.join("; "))
}

/// Monotonicity and comparison relations of the weights on a 40×40 lattice.
fn weight_law() -> Outcome {
    let ks: Vec<i32> = (-1..39).collect();
    let mut ts = vec![0.0];
    ts.extend((0..39).map(|i| 1e-8 * 10f64.powf(i as f64 * 9.0 / 38.0)));
    let mut violations = 0usize;
    let mut worst_top: f64 = 0.0;
    for c in [0.5, 1.0, 2.0] {
        let w = WeightSequence::parabolic(c).map_err(e2s)?;
        for &t in &ts {
            let om = w.omegas(ks[0], *ks.last().unwrap(), t).map_err(e2s)?;
            let e: Vec<f64> = ks.iter().map(|&k| w.e(k, t).unwrap()).collect();
            for (a, &k) in ks.iter().enumerate() {
                let bad_e = !(0.0..=1.0).contains(&e[a]) || (t == 0.0 && e[a] != 0.0) || (t == 0.0 && om[a] != 0.0);
                violations += usize::from(bad_e || e[a] > om[a]);
                worst_top = worst_top.max(om[a] - 2.0);
                for (b, &k2) in ks.iter().enumerate() {
                    if k <= k2 {
                        violations += usize::from(e[a] > e[b] || om[a] > 3.0 * om[b]);
                    } else {
                        violations += usize::from(om[a] > 2f64.powi(k - k2) * om[b]);
                    }
                }
            }
        }
    }
    check(
        violations == 0 && worst_top <= 2f64.powi(-16),
        format!("{violations} violations on 40x40x3 points; max(omega - 2) = {worst_top:.2e}"),
    )
}

/// Constant-coefficient momentum: single-mode decay and block rates.
fn momentum_oracle() -> Outcome {
    let g = Grid::periodic(2, 32).map_err(e2s)?;
    let part = DyadicPartition::for_grid(g).map_err(e2s)?;
    let (mu, lam) = (0.5, 0.0);
    let nu = lam + 2.0 * mu;
    let mut mode_err: f64 = 0.0;
    for k in [[1, 0, 0], [1, 1, 0], [2, 1, 0], [3, 0, 0]] {
        let u0 = linear::mode_field(g, k, true).map_err(e2s)?;
        let run = linear::solve_momentum(&MomentumProblem::constant(u0.clone(), mu, lam, 0.5, 1e-3), &part).map_err(e2s)?;
        let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
        let expect = (-nu * k2 * 0.5).exp();
        let got = run.u.last().unwrap().lp_norm(2.0).map_err(e2s)? / u0.lp_norm(2.0).map_err(e2s)?;
        mode_err = mode_err.max((got / expect - 1.0).abs());
    }
    let mut c_hat = Vec::new();
    for j in 0..4 {
        let k = [1i64 << j, 0, 0];
        let horizon = 3.0 / (nu * 4f64.powi(j));
        let dt = (horizon / 300.0).min(1e-3);
        c_hat.push(linear::probe_block_decay(&part, j, mu, lam, k, true, horizon, dt, 2.0).map_err(e2s)?.c_hat);
    }
    let (lo, hi) = c_hat.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let spread = (hi - lo) / hi;
    check(
        mode_err <= 5e-3 && spread <= 0.10,
        format!("single-mode decay error {mode_err:.2e}; block constants {c_hat:.4?}, spread {spread:.2e}"),
    )
}

/// Divergence-free advection conserves L² and L⁴; constant velocity translates.
fn transport_conservation() -> Outcome {
    let g = Grid::periodic(2, 128).map_err(e2s)?;
    let part = DyadicPartition::for_grid(g).map_err(e2s)?;
    let f0 = Field::from_fn(g, |x| (x[0]).sin() * (2.0 * x[1]).cos() + 0.5 * (x[0] + x[1]).cos()).map_err(e2s)?;
    let v = Field::vector_from_fn(g, |x, c| if c == 0 { x[1].sin() } else { x[0].sin() }).map_err(e2s)?;
    let run = linear::solve_transport(&TransportProblem::new(f0.clone(), TimeField::Constant(v), 1.0, 1e-3), &part)
        .map_err(e2s)?;
    let last = run.f.last().unwrap();
    let drift = |p: f64| (last.lp_norm(p).unwrap() / f0.lp_norm(p).unwrap() - 1.0).abs();
    let (l2, l4) = (drift(2.0), drift(4.0));
    let c = [1.0, 0.5];
    let vc = Field::vector_from_fn(g, |_, k| c[k]).map_err(e2s)?;
    let run = linear::solve_transport(&TransportProblem::new(f0.clone(), TimeField::Constant(vc), 1.0, 1e-3), &part)
        .map_err(e2s)?;
    let exact = Field::from_fn(g, |x| {
        let (a, b) = (x[0] - c[0], x[1] - c[1]);
        a.sin() * (2.0 * b).cos() + 0.5 * (a + b).cos()
    })
    .map_err(e2s)?;
    let shift_err = sup(&run.f.last().unwrap().sub(&exact).map_err(e2s)?);
    check(
        l2 <= 1e-6 && l4 <= 1e-6 && shift_err < 1e-6,
        format!("L2 drift {l2:.2e}, L4 drift {l4:.2e}, translation error {shift_err:.2e}"),
    )
}

/// 100-trial campaigns for every product, commutator, composition,
/// transport, momentum and interpolation estimate, plus rejections.
fn estimate_campaigns() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (id, _) in LEMMAS.iter().filter(|(id, _)| !matches!(*id, "bernstein" | "bony")) {
        let t = Instant::now();
        let r = lab::campaign(id, &CampaignConfig::default()).map_err(e2s)?;
        let pass = r.verdict == Verdict::Pass && r.trials == 100;
        ok &= pass;
        report!(
            "    {id:26} max {:.3e} drift {:.4} {} ({:.1}s)",
            r.max_ratio,
            r.scale_drift,
            if pass { "pass" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        lines.push(id.to_string());
    }
    let bad = CampaignConfig { trials: 2, s1: Some(-0.5), s2: Some(0.2), ..CampaignConfig::default() };
    let msg = lab::campaign("product", &bad).map(|_| String::new()).unwrap_or_else(|e| e.to_string());
    let named = msg.contains("s1 + s2 > N max(0, 2/p - 1)");
    check(ok && named, format!("{} campaigns; rejection: {msg}", lines.len()))
}

/// Shallow water run from amplitude-0.01 data. The data are drawn on a 128²
/// grid and resampled, so every resolution starts from the same
/// band-limited fields.
fn shallow_water_run(resolution: usize, dt: f64, horizon: f64) -> Result<cns::SchemeRun, String> {
    let laws = cns::shallow_water_preset();
    let fine = Grid::periodic(2, 128).map_err(e2s)?;
    let g = Grid::periodic(2, resolution).map_err(e2s)?;
    let (rho, u) = DataSpec { a_amplitude: 0.01, u_amplitude: 0.01, ..DataSpec::default() }.generate(fine, &laws).map_err(e2s)?;
    let (rho, u) = (rho.resample(g).map_err(e2s)?, u.resample(g).map_err(e2s)?);
    let (a0, u0) = cns::reformulate(&rho, &u, &laws).map_err(e2s)?;
    let cfg = SchemeConfig { horizon, dt, samples: 4, ..SchemeConfig::default() };
    cns::run_scheme(&a0, &u0, &laws, &cfg).map_err(e2s)
}

/// Shallow water sanity: fixed point, mass, density margin and
/// self-convergence.
fn nonlinear_solver() -> Outcome {
    let laws = cns::shallow_water_preset();
    let g = Grid::periodic(2, 64).map_err(e2s)?;
    let mut st = SolverState { a: Field::zeros(g, Rank::Scalar), u: Field::zeros(g, Rank::Vector), t: 0.0 };
    for _ in 0..10 {
        st = cns::step(&st, &laws, 1e-2).map_err(e2s)?.0;
    }
    let fixed = sup(&st.a).max(sup(&st.u));
    let run = shallow_water_run(64, 1e-3, 0.1)?;
    let mass = run.mass_drift();
    let margin = run.monitor.iter().map(|m| m.margins(laws.c0)[0]).fold(f64::INFINITY, f64::min);
    // Richardson estimate from (64², dt), (128², dt/2), (128², dt/4).
    let dt = 1e-2;
    let fine = Grid::periodic(2, 128).map_err(e2s)?;
    let finals: Vec<(Field, Field)> = [(64, dt), (128, dt / 2.0), (128, dt / 4.0)]
        .iter()
        .map(|&(m, h)| {
            let r = shallow_water_run(m, h, 0.1)?;
            let a = r.a.last().unwrap().resample(fine).map_err(e2s)?;
            let u = r.u.last().unwrap().resample(fine).map_err(e2s)?;
            Ok((a, u))
        })
        .collect::<Result<_, String>>()?;
    let dist = |x: &(Field, Field), y: &(Field, Field)| {
        x.0.sub(&y.0).unwrap().lp_norm(2.0).unwrap() + x.1.sub(&y.1).unwrap().lp_norm(2.0).unwrap()
    };
    let (d01, d12) = (dist(&finals[0], &finals[1]), dist(&finals[1], &finals[2]));
    let order = (d01 / d12).log2();
    check(
        fixed == 0.0 && mass <= 1e-8 && margin >= 0.0 && order >= 1.5,
        format!("equilibrium drift {fixed:e}, mass drift {mass:.2e}, min density margin {margin:.3}, order {order:.2} ({d01:.2e} / {d12:.2e})"),
    )
}

/// Distance diagnostics between runs from identical and nearby data.
fn uniqueness() -> Outcome {
    let laws = cns::shallow_water_preset();
    let g = Grid::periodic(2, 64).map_err(e2s)?;
    let (rho, u) = DataSpec::default().generate(g, &laws).map_err(e2s)?;
    let (a0, u0) = cns::reformulate(&rho, &u, &laws).map_err(e2s)?;
    let cfg = SchemeConfig { horizon: 0.1, dt: 1e-3, samples: 20, ..SchemeConfig::default() };
    let r1 = cns::run_scheme(&a0, &u0, &laws, &cfg).map_err(e2s)?;
    let r1b = cns::run_scheme(&a0, &u0, &laws, &cfg).map_err(e2s)?;
    let same = cns::uniqueness_distance(&r1, &r1b).map_err(e2s)?;
    let zero = same.da_norm.iter().chain(&same.du_norm).all(|&x| x == 0.0);
    let bump = Field::from_fn(g, |x| 0.5 * (x[0].cos() + x[1].cos())).map_err(e2s)?;
    let r2 = cns::run_scheme(&a0.axpy(1e-6, &bump).map_err(e2s)?, &u0, &laws, &cfg).map_err(e2s)?;
    let near = cns::uniqueness_distance(&r1, &r2).map_err(e2s)?;
    let growth = near.growth_factor.unwrap_or(f64::NAN);
    let osgood = cns::osgood_integral(near.osgood.c_t, 1e-20);
    check(
        zero && growth.is_finite() && growth < 10.0 && osgood > 10.0,
        format!("identical runs zero: {zero}; growth factor {growth:.4}; Osgood integral at 1e-20 = {osgood:.3} (C_T = {:.2e})", near.osgood.c_t),
    )
}

/// Smallness time of fixed random data and monotonicity of the weighted norm.
fn smallness_time() -> Outcome {
    let g = Grid::periodic(2, 64).map_err(e2s)?;
    let part = DyadicPartition::for_grid(g).map_err(e2s)?;
    let w = WeightSequence::parabolic(1.0).map_err(e2s)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let f = power_law(100 + seed, g, 4)?;
        let mut times = vec![0.0];
        times.extend((0..=120).map(|i| 1e-8 * 10f64.powf(i as f64 * 0.06)));
        let series = NormSeries::from_fields(&part, 2.0, &times, &vec![f.clone(); times.len()]).map_err(e2s)?;
        let eps = 0.05 * part.besov_norm(&f, 0.0, 2.0, 1.0).map_err(e2s)?;
        let profile = weights::weighted_linf_profile(&series, 0.0, 1.0, &w).map_err(e2s)?;
        let monotone = profile.windows(2).all(|p| p[1] >= p[0]);
        match weights::smallness_time(&series, 0.0, 1.0, &w, eps).map_err(e2s)? {
            Smallness::Found { time, value } => {
                let i = times.iter().position(|&t| t == time).unwrap();
                let maximal = profile.get(i + 1).is_none_or(|&v| v > eps);
                ok &= monotone && value <= eps && profile[i] <= eps && maximal;
                lines.push(format!("T~ = {time:.2e}"));
            }
            Smallness::NotFound { infimum } => {
                ok = false;
                lines.push(format!("not found (inf {infimum:.2e})"));
            }
        }
    }
    check(ok, lines.join(", "))
}

#[test]
fn acceptance() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 partition and reconstruction", partition_and_reconstruction),
        ("2 exact identities", exact_identities),
        ("3 Bernstein scaling", bernstein),
        ("4 weight law", weight_law),
        ("5 constant-coefficient momentum", momentum_oracle),
        ("6 transport conservation", transport_conservation),
        ("7 estimate campaigns", estimate_campaigns),
        ("8 nonlinear solver sanity", nonlinear_solver),
        ("9 uniqueness diagnostics", uniqueness),
        ("10 smallness time", smallness_time),
    ];
    let mut failed = Vec::new();
    report!();
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|n| name.split(' ').next() == Some(n))) {
            continue;
        }
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        report!("{tag} [{name}] {detail} ({:.1}s)", t.elapsed().as_secs_f64());
        if tag == "FAIL" {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
