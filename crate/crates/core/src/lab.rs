//! Random field recipes and inequality-ratio campaigns.
//!
//! A campaign evaluates LHS/RHS of one estimate over many random trials at a
//! base dyadic scale and again at the same seeds shifted by a number of
//! octaves (parabolically rescaled in time where time enters). The estimate
//! is consistent with its scaling when the largest ratio is finite and does
//! not drift between the two scales.

use crate::cns::log_interpolation;
use crate::error::{Error, Result};
use crate::field::{Field, Grid, Rank};
use crate::linear::{
    momentum_estimate_check, solve_momentum, solve_transport, transport_estimate_check, MomentumCheckParams,
    MomentumProblem, MomentumVariant, TimeField, TransportProblem,
};
use crate::paraproduct::{
    bony_split, commutator_ratio, compose_ratio, compose_time_ratio, product_estimate_ratio,
    transport_commutator_ratio, weighted_paraproduct_ratio, weighted_product_time_ratio, ComposeMap, Piece,
    ProductLaw, ProductParams, TimeExponents,
};
use crate::partition::{multi_indices, DyadicPartition, NormSeries};
use crate::weights::WeightSequence;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Radial band, in units of 2^j, carrying an annulus recipe. It sits strictly
/// inside the annulus (3/4, 8/3) of the partition.
pub const ANNULUS_BAND: (f64, f64) = (0.8, 2.5);

/// Spectral shape of a random field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    /// One to three localized packets with radial profile supported in
    /// 2^j·[0.8, 2.5], signs and mild anisotropy, centered within 3·2^{-j}
    /// of the domain midpoint.
    Annulus { j: i32 },
    /// |f̂(k)| = |k|^{−α} for 0 < |k| ≤ 2^{j_cut}, random phases;
    /// α defaults to N/2 + 1.
    PowerLaw { alpha: Option<f64>, j_cut: i32 },
    /// Unit amplitudes with random phases at the listed wavenumbers.
    Multimode { modes: Vec<Vec<i64>> },
}

/// Seed, spectrum, sup-norm amplitude and rank of a random field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRecipe {
    pub seed: u64,
    pub spectrum: Spectrum,
    pub amplitude: f64,
    pub rank: Rank,
}

impl FieldRecipe {
    pub fn annulus(seed: u64, j: i32, amplitude: f64, rank: Rank) -> Self {
        FieldRecipe { seed, spectrum: Spectrum::Annulus { j }, amplitude, rank }
    }
}

/// Smooth bump on the annulus band times a Gaussian of width 0.3 about its
/// center. The bump alone decays slowly in space, so packets at low j feel
/// their periodic images; the Gaussian factor keeps them localized.
fn band_profile(r: f64) -> f64 {
    let (a, b) = ANNULUS_BAND;
    if r <= a || r >= b {
        return 0.0;
    }
    let x = (2.0 * r - a - b) / (b - a);
    let g = (r - 0.5 * (a + b)) / 0.3;
    (1.0 - 1.0 / (1.0 - x * x) - 0.5 * g * g).exp()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
}

/// Fills a Hermitian coefficient array from a rule on representatives of
/// each ±k pair; self-conjugate and Nyquist modes stay zero.
fn hermitian(grid: Grid, mut rule: impl FnMut(usize) -> Complex64) -> Vec<Complex64> {
    let lat = grid.lattice();
    let mut c = vec![Complex64::new(0.0, 0.0); grid.len()];
    for m in 0..grid.len() {
        let k = lat.conj[m];
        if m < k && !lat.nyquist[m] {
            let z = rule(m);
            c[m] = z;
            c[k] = z.conj();
        }
    }
    c
}

fn packet_component(grid: Grid, rng: &mut ChaCha8Rng, j: i32) -> Vec<Complex64> {
    let lat = grid.lattice();
    let n = grid.dim();
    let scale = 2f64.powi(j);
    let count = rng.gen_range(1..=3);
    let packets: Vec<(Vec<f64>, f64, f64, f64)> = (0..count)
        .map(|_| {
            // Offsets shrink with the scale, so the fields drawn from one seed
            // at j and j + o are dilations of one profile about the midpoint.
            let center = (0..n).map(|_| 0.5 * grid.period() + rng.gen_range(-3.0..3.0) / scale).collect();
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (center, sign * rng.gen_range(0.5..1.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..std::f64::consts::PI))
        })
        .collect();
    hermitian(grid, |m| {
        let chi = band_profile(lat.xi[m] / scale);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let k = lat.kvec[m];
        let angle = if n >= 2 { k[1].atan2(k[0]) } else { 0.0 };
        packets
            .iter()
            .map(|(x, amp, beta, alpha)| {
                let phase: f64 = x.iter().enumerate().map(|(a, xa)| k[a] * xa).sum();
                Complex64::from_polar(amp * chi * (1.0 + beta * (2.0 * (angle - alpha)).cos()), -phase)
            })
            .sum()
    })
}

/// Deterministic field from a recipe: same seed and recipe give the same
/// field bit for bit. The result is scaled to sup-norm `amplitude`.
pub fn generate(recipe: &FieldRecipe, grid: Grid) -> Result<Field> {
    let lat = grid.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let ncomp = recipe.rank.components(grid.dim());
    let nyq = grid.nyquist_frequency();
    let comps: Vec<Vec<Complex64>> = match &recipe.spectrum {
        Spectrum::Annulus { j } => {
            let (lo, hi) = (ANNULUS_BAND.0 * 2f64.powi(*j), ANNULUS_BAND.1 * 2f64.powi(*j));
            if hi >= nyq || !lat.xi.iter().any(|&x| x > lo && x < hi) {
                return Err(Error::InvalidArgument(format!(
                    "annulus j = {j} spans |xi| in ({lo}, {hi}), outside the resolved range (0, {nyq})"
                )));
            }
            (0..ncomp).map(|_| packet_component(grid, &mut rng, *j)).collect()
        }
        Spectrum::PowerLaw { alpha, j_cut } => {
            let alpha = alpha.unwrap_or(grid.dim() as f64 / 2.0 + 1.0);
            let cut = 2f64.powi(*j_cut);
            if cut > nyq || cut < grid.frequency_unit() {
                return Err(Error::InvalidArgument(format!("power-law cutoff 2^{j_cut} outside the resolved range")));
            }
            (0..ncomp)
                .map(|_| {
                    hermitian(grid, |m| {
                        let x = lat.xi[m];
                        let z = random_unit(&mut rng);
                        if x > 0.0 && x <= cut {
                            z * x.powf(-alpha)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                })
                .collect()
        }
        Spectrum::Multimode { modes } => {
            let half = (grid.resolution() / 2) as i64;
            for k in modes {
                if k.len() != grid.dim() || k.iter().any(|x| x.abs() >= half) || k.iter().all(|&x| x == 0) {
                    return Err(Error::InvalidArgument(format!("mode {k:?} is not a resolved nonzero wavenumber")));
                }
            }
            (0..ncomp)
                .map(|_| {
                    let mut c = vec![Complex64::new(0.0, 0.0); grid.len()];
                    for k in modes {
                        let m = flat_index(grid, k);
                        let z = random_unit(&mut rng);
                        c[m] += z;
                        c[lat.conj[m]] += z.conj();
                    }
                    c
                })
                .collect()
        }
    };
    let sup = Field::from_spectral(grid, recipe.rank, comps.clone())?.lp_norm(f64::INFINITY)?;
    if recipe.amplitude == 0.0 || sup == 0.0 {
        return Ok(Field::zeros(grid, recipe.rank));
    }
    // Scaling the coefficients keeps empty blocks exactly empty.
    let k = recipe.amplitude / sup;
    let comps = comps.into_iter().map(|c| c.into_iter().map(|z| z * k).collect()).collect();
    Field::from_spectral(grid, recipe.rank, comps)
}

fn flat_index(grid: Grid, k: &[i64]) -> usize {
    let m = grid.resolution() as i64;
    k.iter().fold(0usize, |acc, &x| acc * m as usize + x.rem_euclid(m) as usize)
}

/// Pass or fail of a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of a campaign, self-describing through its parameter echo.
#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub lemma: String,
    pub params: serde_json::Value,
    pub trials: usize,
    /// Ratios at the base scale.
    pub ratios: Vec<f64>,
    /// Ratios at the same seeds shifted by `octaves`.
    pub ratios_shifted: Vec<f64>,
    pub max_ratio: f64,
    pub scale_drift: f64,
    pub drift_bound: f64,
    pub verdict: Verdict,
}

impl RatioReport {
    fn from_ratios(lemma: &str, params: serde_json::Value, r0: Vec<f64>, r1: Vec<f64>, bound: f64) -> Self {
        let max0 = max_of(&r0);
        let max1 = max_of(&r1);
        let max_ratio = max0.max(max1);
        let scale_drift = scale_drift(max0, max1);
        let verdict = verdict_for(max_ratio, scale_drift, bound);
        RatioReport {
            lemma: lemma.into(),
            params,
            trials: r0.len(),
            ratios: r0,
            ratios_shifted: r1,
            max_ratio,
            scale_drift,
            drift_bound: bound,
            verdict,
        }
    }
}

/// Largest entry, or NaN if any entry is not finite.
fn max_of(r: &[f64]) -> f64 {
    if r.iter().any(|x| !x.is_finite()) {
        return f64::NAN;
    }
    r.iter().copied().fold(0.0, f64::max)
}

/// |max₁ − max₀| / max₀, with 0 when both vanish.
pub fn scale_drift(max0: f64, max1: f64) -> f64 {
    if max0 == 0.0 && max1 == 0.0 {
        0.0
    } else {
        (max1 - max0).abs() / max0
    }
}

/// Pass iff the largest ratio is finite and the drift is within bound.
pub fn verdict_for(max_ratio: f64, drift: f64, bound: f64) -> Verdict {
    if max_ratio.is_finite() && drift.is_finite() && drift <= bound {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Campaign settings; unset parameters take per-estimate defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub trials: usize,
    pub seed: u64,
    pub resolution: Option<usize>,
    pub dim: usize,
    pub octaves: Option<u32>,
    pub drift_bound: f64,
    /// Base dyadic scale of the random fields.
    pub j: Option<i32>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub s: Option<f64>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    /// Weight rate c.
    pub c: f64,
    /// Paraproduct piece: "tgf", "tfg" or "r"; all three when unset.
    pub piece: Option<String>,
    /// Interpolation gap ε of the logarithmic estimate.
    pub eps: Option<f64>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            trials: 100,
            seed: 1,
            resolution: None,
            dim: 2,
            octaves: None,
            drift_bound: 0.15,
            j: None,
            p: None,
            q: None,
            s: None,
            s1: None,
            s2: None,
            c: 1.0,
            piece: None,
            eps: None,
            threads: 0,
        }
    }
}

/// Registered estimates: id and what the campaign measures.
pub const LEMMAS: &[(&str, &str)] = &[
    ("bernstein", "|d^g f|_q / (2^{j|g| + jN(1/p-1/q)} |f|_p) for annulus-supported f, all |g| <= 2"),
    ("poincare", "a_min R1^2 (p-1)/p^2 int|u|^p / (-int div(a grad u)|u|^{p-2}u) for u supported in |xi| >= R1"),
    ("product-linf", "|fg|_{B^s} / (|f|_{B^s}|g|_inf + |f|_inf|g|_{B^s}), s > 0"),
    ("product", "|fg|_{B^{s1+s2-N/p}} / (|f|_{B^{s1}}|g|_{B^{s2}})"),
    ("product-endpoint", "product law with r = infinity on g and on fg"),
    ("commutator", "sum_j 2^{j(s-1)}|div [D_j, f] grad g|_p / (|f|_{B^{N/p+1}}|g|_{B^s})"),
    ("composition", "|F(f)|_{B^s} / ((1 + |f|_inf)^{[s]+2}|f|_{B^s}) for F(x) = x/(1+x)"),
    ("weighted-paraproduct", "Bony pieces T_g f, T_f g, R(f,g) in weighted Besov norms"),
    ("weighted-product", "product law in weighted Chemin-Lerner norms, 1/q = 1/q1 + 1/q2"),
    ("weighted-product-endpoint", "weighted Chemin-Lerner product law with r = infinity"),
    ("weighted-composition", "composition law in weighted Chemin-Lerner norms"),
    ("transport", "L~inf(B^s) norm of a transported field against e^{V}(data + source)"),
    ("transport-weighted", "transport estimate in weighted Besov norms"),
    ("transport-commutator", "weighted sum of |[v, D_j].grad f|_p against |v|_{B^{N/p+1}}|f|_{B^s(w)}"),
    ("momentum", "linearized momentum equation, L~q(B^{s-1+2/q}) bound"),
    ("momentum-weighted", "linearized momentum equation, L~1(B^{s+1}) + L~2(B^s) bound from time-weighted data"),
    ("momentum-endpoint", "linearized momentum equation in B^{-N/p}_{p,inf}-based norms"),
    ("log-interpolation", "L~rho(B^s_{p,1}) against the logarithmic interpolation of B^{s-eps,s,s+eps}_{p,inf}"),
    ("bony", "relative defect of T_u v + T_v u + R(u,v) = uv (exact identity, tolerance 1e-10)"),
];

/// Tolerance for the exact Bony identity.
pub const BONY_TOLERANCE: f64 = 1e-10;

fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.gen()
}

fn trial_seed(base: u64, i: usize) -> u64 {
    sub_seed(base, i as u64 + 1)
}

/// Runs `trial(seed, octave)` for every trial at octave 0 and at `octaves`,
/// in parallel; results are ordered by trial index.
fn run_pairs(
    cfg: &CampaignConfig,
    octaves: u32,
    trial: &(dyn Fn(u64, u32) -> Result<f64> + Sync),
) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("campaign needs at least one trial".into()));
    }
    // The first trial runs alone so a hypothesis failure surfaces before any
    // work is spread out.
    let first = (trial(trial_seed(cfg.seed, 0), 0)?, trial(trial_seed(cfg.seed, 0), octaves)?);
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    }
    .min(cfg.trials.saturating_sub(1).max(1));
    let rest: Vec<usize> = (1..cfg.trials).collect();
    let chunk = rest.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<(f64, f64)>>> = std::thread::scope(|sc| {
        let handles: Vec<_> = rest
            .chunks(chunk)
            .map(|ids| {
                sc.spawn(move || {
                    ids.iter()
                        .map(|&i| {
                            let s = trial_seed(cfg.seed, i);
                            Ok((trial(s, 0)?, trial(s, octaves)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("campaign worker panicked")).collect()
    });
    let mut r0 = vec![first.0];
    let mut r1 = vec![first.1];
    for chunk in results {
        for (a, b) in chunk? {
            r0.push(a);
            r1.push(b);
        }
    }
    Ok((r0, r1))
}

fn packet(grid: Grid, seed: u64, j: i32, amp: f64, rank: Rank) -> Result<Field> {
    generate(&FieldRecipe::annulus(seed, j, amp, rank), grid)
}

/// Packets at scales j and j+1 with independent random weights.
fn two_scale(grid: Grid, seed: u64, j: i32, amp: f64, rank: Rank) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w0, w1): (f64, f64) = (rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0));
    let f = packet(grid, sub_seed(seed, 11), j, w0, rank)?.add(&packet(grid, sub_seed(seed, 12), j + 1, w1, rank)?)?;
    let sup = f.lp_norm(f64::INFINITY)?;
    Ok(if sup > 0.0 { f.scale(amp / sup) } else { f })
}

/// f(t) = e^{tΔ}f₀ at the given times.
fn heat_series(f0: &Field, times: &[f64]) -> Vec<Field> {
    let lat = f0.grid().lattice();
    times.iter().map(|&t| f0.multiplier(|m| (-lat.xi[m] * lat.xi[m] * t).exp())).collect()
}

fn linspace(t: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t * i as f64 / n as f64).collect()
}

fn parse_piece(s: &str) -> Result<Piece> {
    match s.to_ascii_lowercase().as_str() {
        "tgf" => Ok(Piece::Tgf),
        "tfg" => Ok(Piece::Tfg),
        "r" => Ok(Piece::R),
        _ => Err(Error::InvalidArgument(format!("unknown paraproduct piece {s:?} (tgf, tfg, r)"))),
    }
}

/// Runs the campaign registered under `lemma`.
pub fn campaign(lemma: &str, cfg: &CampaignConfig) -> Result<RatioReport> {
    if !LEMMAS.iter().any(|(id, _)| *id == lemma) {
        return Err(Error::InvalidArgument(format!("unknown campaign {lemma:?}; see --list")));
    }
    // Campaigns that run a solver use 64² grids and start one octave lower.
    let solver = matches!(
        lemma,
        "transport" | "transport-weighted" | "momentum" | "momentum-weighted" | "momentum-endpoint"
    );
    let default_m = match lemma {
        "bernstein" => 256,
        _ if solver => 64,
        _ => 128,
    };
    let grid = Grid::periodic(cfg.dim, cfg.resolution.unwrap_or(default_m))?;
    let part = DyadicPartition::for_grid(grid)?;
    let octaves = cfg.octaves.unwrap_or(if lemma == "bernstein" { 3 } else { 1 });
    let j = cfg.j.unwrap_or(if solver { 1 } else { 2 });
    let n = cfg.dim as f64;
    let p = cfg.p.unwrap_or(2.0);
    let w = WeightSequence::parabolic(cfg.c)?;
    let bound = cfg.drift_bound;
    let scalar = Rank::Scalar;
    let mut echo = json!({
        "dim": cfg.dim, "resolution": grid.resolution(), "seed": cfg.seed, "octaves": octaves, "j": j, "p": p,
    });
    let mut put = |k: &str, v: serde_json::Value| {
        echo[k] = v;
    };
    // Horizon at octave o under the parabolic scaling t ↦ 4^{-o} t.
    let at = |t: f64, o: u32| t * 4f64.powi(-(o as i32));

    let (r0, r1) = match lemma {
        "bernstein" => {
            let q = cfg.q.unwrap_or(2.0);
            if !(1.0 <= p && p <= q) {
                return Err(Error::Hypothesis(format!("1 <= p <= q fails (p = {p}, q = {q})")));
            }
            put("q", json!(q));
            put("max_order", json!(2));
            let gammas: Vec<Vec<usize>> = (0..=2).flat_map(|k| multi_indices(cfg.dim, k)).collect();
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let f = packet(grid, seed, je, 1.0, scalar)?;
                gammas.iter().try_fold(0.0f64, |m, g| Ok(m.max(part.bernstein_ratio(&f, g, p, q, je)?)))
            })?
        }
        "poincare" => {
            if !(p > 1.0 && p.is_finite()) {
                return Err(Error::Hypothesis(format!("1 < p < inf fails (p = {p})")));
            }
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let u = packet(grid, seed, je, 1.0, scalar)?;
                let a = packet(grid, sub_seed(seed, 3), je - 2, 0.5, scalar)?.shift(1.0);
                let r1 = ANNULUS_BAND.0 * 2f64.powi(je);
                Ok(1.0 / crate::linear::dissipation_constant(&a, &u, p, r1)?)
            })?
        }
        "product-linf" | "product" | "product-endpoint" => {
            let (law, d1, d2) = match lemma {
                "product-linf" => (ProductLaw::LinfBesov, 1.0, 0.0),
                "product" => (ProductLaw::Besov, 1.0, 0.5),
                _ => (ProductLaw::Endpoint, 1.0, 0.5),
            };
            let prm = ProductParams { s1: cfg.s.or(cfg.s1).unwrap_or(d1), s2: cfg.s2.unwrap_or(d2), p };
            law.check(cfg.dim, &prm)?;
            put("law", json!(law));
            put("s1", json!(prm.s1));
            put("s2", json!(prm.s2));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let f = two_scale(grid, sub_seed(seed, 1), je, 1.0, scalar)?;
                let g = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                product_estimate_ratio(&f, &g, law, &prm, &part)
            })?
        }
        "commutator" => {
            let s = cfg.s.unwrap_or(0.5);
            put("s", json!(s));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let f = two_scale(grid, sub_seed(seed, 1), je, 1.0, scalar)?;
                let g = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                commutator_ratio(&f, &g, s, p, &part)
            })?
        }
        "composition" => {
            let s = cfg.s.unwrap_or(1.0);
            put("s", json!(s));
            put("map", json!("x/(1+x)"));
            let map = ComposeMap::rational();
            run_pairs(cfg, octaves, &|seed, o| {
                let f = two_scale(grid, seed, j + o as i32, 0.5, scalar)?;
                compose_ratio(&map, &f, s, p, &part, None)
            })?
        }
        "weighted-paraproduct" => {
            let prm = ProductParams { s1: cfg.s1.unwrap_or(n / p - 1.0), s2: cfg.s2.unwrap_or(0.5), p };
            let pieces = match &cfg.piece {
                Some(x) => vec![parse_piece(x)?],
                None => vec![Piece::Tgf, Piece::Tfg, Piece::R],
            };
            for pc in &pieces {
                pc.check(cfg.dim, &prm)?;
            }
            let horizon = 0.05;
            put("s1", json!(prm.s1));
            put("s2", json!(prm.s2));
            put("pieces", json!(pieces));
            put("c", json!(cfg.c));
            put("T", json!(horizon));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let f = two_scale(grid, sub_seed(seed, 1), je, 1.0, scalar)?;
                let g = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                pieces.iter().try_fold(0.0f64, |m, pc| {
                    Ok(m.max(weighted_paraproduct_ratio(&f, &g, &prm, &w, at(horizon, o), &part, *pc)?))
                })
            })?
        }
        "weighted-product" | "weighted-product-endpoint" => {
            let endpoint = lemma == "weighted-product-endpoint";
            let prm = ProductParams { s1: cfg.s1.unwrap_or(n / p - 1.0), s2: cfg.s2.unwrap_or(0.5), p };
            let qe = TimeExponents { q1: 2.0, q2: 2.0 };
            let horizon = 0.05;
            put("s1", json!(prm.s1));
            put("s2", json!(prm.s2));
            put("q1", json!(qe.q1));
            put("q2", json!(qe.q2));
            put("c", json!(cfg.c));
            put("T", json!(horizon));
            put("endpoint", json!(endpoint));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let times = linspace(at(horizon, o), 10);
                let fs = heat_series(&two_scale(grid, sub_seed(seed, 1), je, 1.0, scalar)?, &times);
                let gs = heat_series(&two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?, &times);
                weighted_product_time_ratio(&times, &fs, &gs, &prm, qe, &w, &part, endpoint)
            })?
        }
        "weighted-composition" => {
            let s = cfg.s.unwrap_or(1.0);
            let q = cfg.q.unwrap_or(2.0);
            let horizon = 0.05;
            let map = ComposeMap::rational();
            put("s", json!(s));
            put("q", json!(q));
            put("c", json!(cfg.c));
            put("T", json!(horizon));
            put("map", json!("x/(1+x)"));
            run_pairs(cfg, octaves, &|seed, o| {
                let times = linspace(at(horizon, o), 10);
                let fs = heat_series(&two_scale(grid, seed, j + o as i32, 0.5, scalar)?, &times);
                compose_time_ratio(&map, &times, &fs, s, p, q, &w, &part)
            })?
        }
        "transport" | "transport-weighted" => {
            let weighted = lemma == "transport-weighted";
            let s = cfg.s.unwrap_or(0.5);
            let horizon = 0.2;
            let steps = 50;
            put("s", json!(s));
            put("r", json!(1.0));
            put("T", json!(horizon));
            put("steps", json!(steps));
            put("c", json!(cfg.c));
            put("weighted", json!(weighted));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let scale = 2f64.powi(o as i32);
                let v = packet(grid, sub_seed(seed, 1), je - 1, scale, Rank::Vector)?;
                let f0 = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                let t = at(horizon, o);
                let mut prob = TransportProblem::new(f0, TimeField::Constant(v), t, t / steps as f64);
                prob.samples = 10;
                prob.p = p;
                let run = solve_transport(&prob, &part)?;
                let chk = transport_estimate_check(&run, &part, s, p, 1.0, weighted.then_some(&w))?;
                Ok(chk.ratio_at_zero)
            })?
        }
        "transport-commutator" => {
            let s = cfg.s.unwrap_or(0.5);
            let horizon = 0.05;
            put("s", json!(s));
            put("c", json!(cfg.c));
            put("T", json!(horizon));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let v = packet(grid, sub_seed(seed, 1), je - 1, 1.0, Rank::Vector)?;
                let f = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                transport_commutator_ratio(&v, &f, s, p, &w, at(horizon, o), &part)
            })?
        }
        "momentum" | "momentum-weighted" | "momentum-endpoint" => {
            let variant = match lemma {
                "momentum" => MomentumVariant::A1,
                "momentum-weighted" => MomentumVariant::B,
                _ => MomentumVariant::End,
            };
            let params = MomentumCheckParams {
                s: cfg.s.unwrap_or(0.5),
                p,
                q: cfg.q.unwrap_or(2.0),
                variant,
                exponent_shift: 2,
            };
            let horizon = 0.02;
            let steps = 50;
            put("variant", json!(variant));
            put("s", json!(params.s));
            put("q", json!(params.q));
            put("exponent_shift", json!(params.exponent_shift));
            put("T", json!(horizon));
            put("steps", json!(steps));
            put("c", json!(cfg.c));
            run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let u0 = packet(grid, sub_seed(seed, 1), je, 1.0, Rank::Vector)?;
                let mu = packet(grid, sub_seed(seed, 2), je - 2, 0.2, scalar)?.shift(1.0);
                let lam = packet(grid, sub_seed(seed, 3), je - 2, 0.2, scalar)?.shift(0.5);
                let t = at(horizon, o);
                let prob = MomentumProblem {
                    u0,
                    mu_bar: TimeField::Constant(mu),
                    lam_bar: TimeField::Constant(lam),
                    g: None,
                    horizon: t,
                    dt: t / steps as f64,
                    samples: 10,
                    p,
                    density: None,
                };
                let run = solve_momentum(&prob, &part)?;
                Ok(momentum_estimate_check(&run, &part, &params, Some(&w))?.min_c)
            })?
        }
        "log-interpolation" => {
            let s = cfg.s.unwrap_or(1.0);
            let rho = cfg.q.unwrap_or(1.0);
            let eps = cfg.eps.unwrap_or(0.5);
            let horizon = 0.05;
            put("s", json!(s));
            put("rho", json!(rho));
            put("eps", json!(eps));
            put("T", json!(horizon));
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Hypothesis(format!("0 < eps <= 1 fails (eps = {eps})")));
            }
            run_pairs(cfg, octaves, &|seed, o| {
                let times = linspace(at(horizon, o), 10);
                let fs = heat_series(&two_scale(grid, seed, j + o as i32, 1.0, scalar)?, &times);
                let series = NormSeries::from_fields(&part, p, &times, &fs)?;
                Ok(log_interpolation(&series, s, rho, eps)?.ratio)
            })?
        }
        "bony" => {
            put("tolerance", json!(BONY_TOLERANCE));
            let (r0, r1) = run_pairs(cfg, octaves, &|seed, o| {
                let je = j + o as i32;
                let u = two_scale(grid, sub_seed(seed, 1), je, 1.0, scalar)?;
                let v = two_scale(grid, sub_seed(seed, 2), je, 1.0, scalar)?;
                let uv = u.product(&v)?;
                let err = bony_split(&u, &v, &part)?.sum().sub(&uv)?.lp_norm(2.0)?;
                Ok(err / uv.lp_norm(2.0)?)
            })?;
            // An exact identity: the verdict is the tolerance, not the drift.
            let mut rep = RatioReport::from_ratios(lemma, echo, r0, r1, bound);
            rep.scale_drift = 0.0;
            rep.verdict = verdict_for(rep.max_ratio, 0.0, bound);
            if !(rep.max_ratio <= BONY_TOLERANCE) {
                rep.verdict = Verdict::Fail;
            }
            return Ok(rep);
        }
        _ => unreachable!("registered ids are matched above"),
    };
    Ok(RatioReport::from_ratios(lemma, echo, r0, r1, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn annulus_support_and_determinism() {
        let g = Grid::periodic(2, 64).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let r = FieldRecipe::annulus(9, 2, 1.0, Rank::Scalar);
        let f = generate(&r, g).unwrap();
        let f2 = generate(&r, g).unwrap();
        assert_eq!(f.component(0), f2.component(0));
        assert!((f.lp_norm(f64::INFINITY).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(f.spectral()[0][0].norm(), 0.0);
        for jj in part.indices() {
            let d = part.delta(&f, jj).unwrap().lp_norm(2.0).unwrap();
            if (jj - 2).abs() >= 2 {
                assert_eq!(d, 0.0, "block {jj}");
            }
        }
        let z = generate(&FieldRecipe { amplitude: 0.0, ..r.clone() }, g).unwrap();
        assert_eq!(z.lp_norm(f64::INFINITY).unwrap(), 0.0);
        assert!(generate(&FieldRecipe::annulus(1, 4, 1.0, Rank::Scalar), g).is_err());
    }

    #[test]
    fn power_law_and_multimode() {
        let g = Grid::periodic(2, 32).unwrap();
        let f = generate(&FieldRecipe { seed: 3, spectrum: Spectrum::PowerLaw { alpha: None, j_cut: 3 }, amplitude: 2.0, rank: Rank::Vector }, g).unwrap();
        assert_eq!(f.n_components(), 2);
        assert!((f.lp_norm(f64::INFINITY).unwrap() - 2.0).abs() < 1e-12);
        let lat = g.lattice();
        assert!(f.spectral()[0].iter().enumerate().all(|(m, z)| lat.xi[m] <= 8.0 || z.norm() == 0.0));
        let mm = FieldRecipe { seed: 1, spectrum: Spectrum::Multimode { modes: vec![vec![1, 2]] }, amplitude: 1.0, rank: Rank::Scalar };
        let h = generate(&mm, g).unwrap();
        let nz: Vec<usize> = (0..g.len()).filter(|&m| h.spectral()[0][m].norm() > 1e-12).collect();
        assert_eq!(nz.len(), 2);
        let bad = FieldRecipe { spectrum: Spectrum::Multimode { modes: vec![vec![16, 0]] }, ..mm };
        assert!(generate(&bad, g).is_err());
    }

    #[test]
    fn registry_ids_dispatch() {
        let cfg = CampaignConfig { trials: 1, resolution: Some(64), j: Some(1), threads: 1, ..CampaignConfig::default() };
        for (id, _) in LEMMAS {
            let c = if matches!(*id, "bernstein") { CampaignConfig { j: Some(1), octaves: Some(1), ..cfg.clone() } } else { cfg.clone() };
            let rep = campaign(id, &c).unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(rep.lemma, *id);
            assert!(rep.max_ratio.is_finite(), "{id}");
        }
        assert!(campaign("nope", &cfg).is_err());
    }

    #[test]
    fn rejects_with_condition_name() {
        let cfg = CampaignConfig { trials: 2, s1: Some(-0.5), s2: Some(0.2), ..CampaignConfig::default() };
        let e = campaign("product", &cfg).unwrap_err().to_string();
        assert!(e.contains("s1 + s2 > N max(0, 2/p - 1)"), "{e}");
        let cfg = CampaignConfig { trials: 2, s: Some(2.5), resolution: Some(64), ..CampaignConfig::default() };
        assert!(campaign("commutator", &cfg).unwrap_err().to_string().contains("fails"));
    }

    #[test]
    fn bony_campaign_is_exact() {
        let cfg = CampaignConfig { trials: 5, resolution: Some(64), j: Some(1), ..CampaignConfig::default() };
        let rep = campaign("bony", &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.max_ratio <= BONY_TOLERANCE);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let a = CampaignConfig { trials: 6, resolution: Some(64), j: Some(1), threads: 1, ..CampaignConfig::default() };
        let b = CampaignConfig { threads: 3, ..a.clone() };
        let ra = campaign("product", &a).unwrap();
        let rb = campaign("product", &b).unwrap();
        assert_eq!(ra.ratios, rb.ratios);
        assert_eq!(ra.ratios_shifted, rb.ratios_shifted);
    }

    proptest! {
        #[test]
        fn verdict_monotone_in_bound(m in 0.0f64..10.0, d in 0.0f64..1.0, b in 0.0f64..1.0, extra in 0.0f64..1.0) {
            if verdict_for(m, d, b) == Verdict::Pass {
                prop_assert_eq!(verdict_for(m, d, b + extra), Verdict::Pass);
            }
        }

        #[test]
        fn same_seed_same_field(seed in any::<u64>(), j in 0i32..3) {
            let g = Grid::periodic(2, 32).unwrap();
            let r = FieldRecipe::annulus(seed, j, 1.0, Rank::Scalar);
            let (a, b) = (generate(&r, g).unwrap(), generate(&r, g).unwrap());
            prop_assert_eq!(a.component(0), b.component(0));
        }
    }
}
