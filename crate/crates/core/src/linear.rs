//! Pseudospectral solvers for the linear transport equation and the
//! linearized momentum equation, the div/curl reformulation, and checkers for
//! the corresponding a-priori estimates.

use crate::error::{Error, Result};
use crate::field::{eval_padded, eval_two_thirds, Coefficients, Field, Grid, Lattice, Rank};
use crate::partition::{DyadicPartition, NormSeries};
use crate::quadrature::cumulative_trapezoid;
use crate::weights::{block_weights, WeightSequence};
use num_complex::Complex64;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Advective CFL number: dt ≤ CFL_ADVECTION · h / ‖v‖_∞.
pub const CFL_ADVECTION: f64 = 0.5;

/// Field given as a function of time.
#[derive(Clone)]
pub enum TimeField {
    Constant(Field),
    /// Piecewise-linear interpolation between samples, constant outside.
    Sampled { times: Vec<f64>, fields: Vec<Field> },
    Func(Arc<dyn Fn(f64) -> Field + Send + Sync>),
}

impl fmt::Debug for TimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeField::Constant(_) => write!(f, "TimeField::Constant"),
            TimeField::Sampled { times, .. } => write!(f, "TimeField::Sampled({} samples)", times.len()),
            TimeField::Func(_) => write!(f, "TimeField::Func"),
        }
    }
}

impl TimeField {
    pub fn sampled(times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::InvalidArgument("sampled field needs matching non-empty times and fields".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must increase".into()));
        }
        let (g, r) = (fields[0].grid(), fields[0].rank());
        if fields.iter().any(|f| f.grid() != g || f.rank() != r) {
            return Err(Error::GridMismatch);
        }
        Ok(TimeField::Sampled { times, fields })
    }

    pub fn func(f: impl Fn(f64) -> Field + Send + Sync + 'static) -> Self {
        TimeField::Func(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> Field {
        match self {
            TimeField::Constant(f) => f.clone(),
            TimeField::Sampled { times, fields } => {
                let i = times.partition_point(|&s| s <= t);
                if i == 0 {
                    return fields[0].clone();
                }
                if i == times.len() {
                    return fields[i - 1].clone();
                }
                let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                fields[i - 1].scale(1.0 - w).add(&fields[i].scale(w)).expect("matching samples")
            }
            TimeField::Func(f) => f(t),
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, TimeField::Constant(_))
    }
}

fn check_compatible(tf: &TimeField, grid: Grid, rank: Rank, what: &str) -> Result<()> {
    let f = tf.at(0.0);
    if f.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if f.rank() != rank {
        return Err(Error::RankMismatch(format!("{what} must be {rank:?}")));
    }
    Ok(())
}

/// Steps and the step indices at which snapshots are stored.
pub(crate) fn schedule(horizon: f64, dt: f64, samples: usize) -> Result<(usize, f64, Vec<usize>)> {
    if !(horizon >= 0.0 && horizon.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} and step {dt}")));
    }
    let n = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let n = n.max(usize::from(horizon > 0.0));
    let dt = if n == 0 { dt } else { horizon / n as f64 };
    let samples = samples.max(1).min(n.max(1));
    let mut marks: Vec<usize> = (0..=samples).map(|k| (k * n + samples / 2) / samples).collect();
    marks.dedup();
    Ok((n, dt, marks))
}

fn sup_magnitude(f: &Field) -> f64 {
    f.magnitude().into_iter().fold(0.0, f64::max)
}

/// Largest stable advective step for velocity v.
pub fn cfl_limit(v: &Field) -> f64 {
    let vmax = sup_magnitude(v);
    if vmax == 0.0 {
        f64::INFINITY
    } else {
        CFL_ADVECTION * v.grid().spacing() / vmax
    }
}

fn check_cfl(v: &Field, dt: f64) -> Result<()> {
    let lim = cfl_limit(v);
    if dt > lim * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, suggested: lim });
    }
    Ok(())
}

fn lincomb(terms: &[(f64, &Coefficients)]) -> Coefficients {
    let (a0, c0) = terms[0];
    let mut out: Coefficients = c0.iter().map(|c| c.iter().map(|z| z * a0).collect()).collect();
    for &(a, c) in &terms[1..] {
        for (o, x) in out.iter_mut().zip(c) {
            for (z, y) in o.iter_mut().zip(x) {
                *z += y * a;
            }
        }
    }
    out
}

/// One step of the three-stage strong-stability-preserving Runge-Kutta
/// scheme, written in increment form so that a vanishing right-hand side
/// leaves the state bit-for-bit unchanged.
pub(crate) fn rk3_step(
    u: &Coefficients,
    t: f64,
    dt: f64,
    mut rhs: impl FnMut(f64, &Coefficients) -> Result<Coefficients>,
) -> Result<Coefficients> {
    let k0 = rhs(t, u)?;
    let k1 = rhs(t + dt, &lincomb(&[(1.0, u), (dt, &k0)]))?;
    let k2 = rhs(t + 0.5 * dt, &lincomb(&[(1.0, u), (0.25 * dt, &k0), (0.25 * dt, &k1)]))?;
    Ok(lincomb(&[(1.0, u), (dt / 6.0, &k0), (dt / 6.0, &k1), (dt * 2.0 / 3.0, &k2)]))
}

/// −v·∇f with the two-thirds rule.
pub(crate) fn advection_term(grid: Grid, v: &Coefficients, f: &[Complex64]) -> Vec<Complex64> {
    let n = grid.dim();
    let lat = grid.lattice();
    let grads: Vec<Vec<Complex64>> = (0..n)
        .map(|a| f.iter().enumerate().map(|(i, z)| z * Complex64::new(0.0, lat.kvec[i][a])).collect())
        .collect();
    let mut inputs: Vec<&[Complex64]> = v.iter().map(Vec::as_slice).collect();
    inputs.extend(grads.iter().map(Vec::as_slice));
    eval_two_thirds(grid, &inputs, 1, |x, y| y[0] = -(0..n).map(|a| x[a] * x[n + a]).sum::<f64>())
        .pop()
        .expect("one output")
}

fn is_zero(c: &Coefficients) -> bool {
    c.iter().all(|v| v.iter().all(|z| z.re == 0.0 && z.im == 0.0))
}

/// ∂_t f + v·∇f = g, f(0) = f0.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub f0: Field,
    pub v: TimeField,
    pub g: Option<TimeField>,
    pub horizon: f64,
    pub dt: f64,
    /// Number of stored snapshot intervals.
    pub samples: usize,
    /// Exponent of the recorded block norms.
    pub p: f64,
}

impl TransportProblem {
    pub fn new(f0: Field, v: TimeField, horizon: f64, dt: f64) -> Self {
        TransportProblem { f0, v, g: None, horizon, dt, samples: 20, p: 2.0 }
    }
}

/// Solution trace of a transport run.
#[derive(Clone, Debug)]
pub struct TransportRun {
    pub times: Vec<f64>,
    pub f: Vec<Field>,
    pub v: Vec<Field>,
    pub g: Vec<Field>,
    pub series: NormSeries,
    pub dt: f64,
    pub steps: usize,
}

/// SSP-RK3 in time, two-thirds dealiased advection in space.
pub fn solve_transport(prob: &TransportProblem, part: &DyadicPartition) -> Result<TransportRun> {
    let grid = prob.f0.grid();
    if prob.f0.rank() != Rank::Scalar {
        return Err(Error::RankMismatch("transported quantity must be scalar".into()));
    }
    if part.grid() != grid {
        return Err(Error::GridMismatch);
    }
    check_compatible(&prob.v, grid, Rank::Vector, "velocity")?;
    if let Some(g) = &prob.g {
        check_compatible(g, grid, Rank::Scalar, "source")?;
    }
    let (n, dt, marks) = schedule(prob.horizon, prob.dt, prob.samples)?;
    let zero = Field::zeros(grid, Rank::Scalar);
    let g_at = |t: f64| prob.g.as_ref().map_or_else(|| zero.clone(), |g| g.at(t));
    let const_v = prob.v.is_constant().then(|| prob.v.at(0.0));
    if let Some(v) = &const_v {
        check_cfl(v, dt)?;
    }
    let mut run = TransportRun {
        times: Vec::new(),
        f: Vec::new(),
        v: Vec::new(),
        g: Vec::new(),
        series: NormSeries::new(prob.p, part.j_min()),
        dt,
        steps: n,
    };
    let mut state: Coefficients = prob.f0.spectral().clone();
    let mut next = 0;
    for step in 0..=n {
        let t = step as f64 * dt;
        if next < marks.len() && marks[next] == step {
            let f = if step == 0 { prob.f0.clone() } else { Field::from_spectral(grid, Rank::Scalar, state.clone())? };
            run.series.record(part, t, &f)?;
            run.times.push(t);
            run.f.push(f);
            run.v.push(const_v.clone().unwrap_or_else(|| prob.v.at(t)));
            run.g.push(g_at(t));
            next += 1;
        }
        if step == n {
            break;
        }
        if const_v.is_none() {
            check_cfl(&prob.v.at(t), dt)?;
        }
        state = rk3_step(&state, t, dt, |tau, u| {
            let v = const_v.clone().unwrap_or_else(|| prob.v.at(tau));
            let vs = v.spectral();
            let mut out = if is_zero(vs) { vec![ZERO; grid.len()] } else { advection_term(grid, vs, &u[0]) };
            if prob.g.is_some() {
                for (o, z) in out.iter_mut().zip(&g_at(tau).spectral()[0]) {
                    *o += z;
                }
            }
            Ok(vec![out])
        })?;
    }
    Ok(run)
}

/// ‖∇v‖_{Ḃ^{N/p}_{p,r}} (+ ‖∇v‖_∞ when `with_linf`), Frobenius pointwise.
pub fn velocity_gradient_norm(v: &Field, part: &DyadicPartition, p: f64, r: f64, with_linf: bool) -> Result<f64> {
    let grad = v.gradient()?;
    let n = v.grid().dim() as f64;
    let b = part.besov_norm(&grad, n / p, p, r)?;
    Ok(if with_linf { b + grad.lp_norm(f64::INFINITY)? } else { b })
}

/// Outcome of checking the transport estimate along one run.
#[derive(Clone, Debug, Serialize)]
pub struct TransportCheck {
    pub s: f64,
    pub p: f64,
    pub r: f64,
    pub weighted: bool,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    /// V(t) at the sample times.
    pub v_integral: Vec<f64>,
    /// max_t LHS / bracket with C = 0.
    pub ratio_at_zero: f64,
    /// Smallest C ≥ 0 for which the inequality holds at every sample, or
    /// infinity if none does.
    pub min_c: f64,
}

/// Evaluates ‖f‖_{L̃^∞_t(Ḃ^s_{p,r})} ≤ e^{CV(t)}(‖f0‖ + ∫₀ᵗ e^{−CV}‖g‖) on every
/// stored sample. With weights the Ḃ^s_{p,1}(ω) norms use ω(T) at the run
/// horizon and V drops the L^∞ part.
pub fn transport_estimate_check(
    run: &TransportRun,
    part: &DyadicPartition,
    s: f64,
    p: f64,
    r: f64,
    weights: Option<&WeightSequence>,
) -> Result<TransportCheck> {
    let n = part.grid().dim() as f64;
    let lo = -n * (1.0 / p).min(1.0 - 1.0 / p);
    match weights {
        None => {
            let ok = s > lo && (s < 1.0 + n / p || (r == 1.0 && s <= 1.0 + n / p + 1e-12));
            if !ok {
                return Err(Error::Hypothesis(format!(
                    "-N min(1/p, 1/p') < s < 1 + N/p (or s = 1 + N/p with r = 1) fails (s = {s}, r = {r})"
                )));
            }
        }
        Some(_) => {
            if !(s > lo && s <= n / p + 1e-12) {
                return Err(Error::Hypothesis(format!("-N min(1/p, 1/p') < s <= N/p fails (s = {s})")));
            }
            if r != 1.0 {
                return Err(Error::Hypothesis("weighted transport estimate needs r = 1".into()));
            }
        }
    }
    let horizon = *run.times.last().ok_or_else(|| Error::Degenerate("empty run".into()))?;
    let om = match weights {
        Some(w) => Some(block_weights(part, w, horizon)?),
        None => None,
    };
    let norm = |f: &Field| -> Result<f64> {
        let b = part.block_norms(f, p)?;
        crate::partition::dyadic_sum(part.j_min(), &b, s, r, om.as_deref())
    };
    let fn_ = run.f.iter().map(&norm).collect::<Result<Vec<_>>>()?;
    let gn = run.g.iter().map(&norm).collect::<Result<Vec<_>>>()?;
    let vn = run
        .v
        .iter()
        .map(|v| velocity_gradient_norm(v, part, p, r, weights.is_none()))
        .collect::<Result<Vec<_>>>()?;
    let big_v = cumulative_trapezoid(&run.times, &vn);
    let mut lhs = Vec::with_capacity(fn_.len());
    let mut sup = 0.0f64;
    for x in &fn_ {
        sup = sup.max(*x);
        lhs.push(sup);
    }
    let f0 = fn_[0];
    let bracket = |c: f64, i: usize| -> f64 {
        let y: Vec<f64> = (0..=i).map(|k| (c * (big_v[i] - big_v[k])).exp() * gn[k]).collect();
        (c * big_v[i]).exp() * f0 + crate::quadrature::trapezoid(&run.times[..=i], &y)
    };
    let holds = |c: f64| (0..lhs.len()).all(|i| lhs[i] <= bracket(c, i) * (1.0 + 1e-10) + 1e-300);
    let ratio_at_zero = (0..lhs.len())
        .map(|i| {
            let b = bracket(0.0, i);
            if b > 0.0 {
                lhs[i] / b
            } else if lhs[i] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let min_c = if holds(0.0) {
        0.0
    } else {
        let mut hi = 1.0;
        while !holds(hi) && hi < 1e8 {
            hi *= 2.0;
        }
        if !holds(hi) {
            f64::INFINITY
        } else {
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if holds(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-9 * hi {
                    break;
                }
            }
            hi
        }
    };
    Ok(TransportCheck {
        s,
        p,
        r,
        weighted: weights.is_some(),
        times: run.times.clone(),
        lhs,
        v_integral: big_v,
        ratio_at_zero,
        min_c,
    })
}

/// d = div u, w = curl u (antisymmetric matrix) and optionally ν̄ = λ̄ + 2μ̄.
#[derive(Clone, Debug)]
pub struct DivCurlState {
    pub d: Field,
    pub w: Field,
    pub nu_bar: Option<Field>,
}

impl DivCurlState {
    /// w^{12} in two dimensions.
    pub fn vorticity(&self) -> Option<Field> {
        (self.w.grid().dim() == 2).then(|| self.w.component_field(1))
    }
}

pub fn div_curl_split(u: &Field) -> Result<DivCurlState> {
    Ok(DivCurlState { d: u.divergence()?, w: u.curl()?, nu_bar: None })
}

/// Solves div u = d, curl u = w for a mean-zero u, mode by mode:
/// |k|² û^i = −i k_i d̂ − Σ_j i k_j ŵ^{ij}. Incompatible pairs are rejected.
pub fn reconstruct(d: &Field, w: &Field) -> Result<Field> {
    let grid = d.grid();
    if w.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if d.rank() != Rank::Scalar || w.rank() != Rank::Matrix {
        return Err(Error::RankMismatch("reconstruct needs a scalar d and a matrix w".into()));
    }
    let n = grid.dim();
    let lat = grid.lattice();
    let ds = &d.spectral()[0];
    let ws = w.spectral();
    let mut out = vec![vec![ZERO; grid.len()]; n];
    for m in 0..grid.len() {
        let kv = lat.kvec[m];
        let kk: f64 = kv[..n].iter().map(|x| x * x).sum();
        if kk == 0.0 {
            continue;
        }
        for i in 0..n {
            let mut acc = Complex64::new(0.0, kv[i]) * ds[m];
            for j in 0..n {
                acc += Complex64::new(0.0, kv[j]) * ws[i * n + j][m];
            }
            out[i][m] = -acc / kk;
        }
    }
    let u = Field::from_spectral(grid, Rank::Vector, out)?;
    let scale = d.lp_norm(2.0)? + w.lp_norm(2.0)?;
    let res = u.divergence()?.sub(d)?.lp_norm(2.0)? + u.curl()?.sub(w)?.lp_norm(2.0)?;
    if res > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Incompatible(format!("div/curl data inconsistent: residual {res:.3e} relative to {scale:.3e}")));
    }
    Ok(u)
}

fn helmholtz(u: &Field, longitudinal: bool) -> Result<Field> {
    if u.rank() != Rank::Vector {
        return Err(Error::RankMismatch("projection needs a vector field".into()));
    }
    let grid = u.grid();
    let n = grid.dim();
    let lat = grid.lattice();
    let s = u.spectral();
    let mut out = vec![vec![ZERO; grid.len()]; n];
    for m in 0..grid.len() {
        let kv = lat.kvec[m];
        let kk: f64 = kv[..n].iter().map(|x| x * x).sum();
        let dot: Complex64 = (0..n).map(|a| s[a][m] * kv[a]).sum();
        for a in 0..n {
            let l = if kk > 0.0 { dot * kv[a] / kk } else { ZERO };
            out[a][m] = if longitudinal { l } else { s[a][m] - l };
        }
    }
    Field::from_spectral(grid, Rank::Vector, out)
}

/// Divergence-free part of u (keeps the mean).
pub fn leray_projection(u: &Field) -> Result<Field> {
    helmholtz(u, false)
}

/// Gradient part of u.
pub fn gradient_projection(u: &Field) -> Result<Field> {
    helmholtz(u, true)
}

/// Row divergence of a matrix field: (div M)^i = Σ_j ∂_j M^{ij}.
pub fn row_divergence(m: &Field) -> Result<Field> {
    if m.rank() != Rank::Matrix {
        return Err(Error::RankMismatch("row divergence needs a matrix field".into()));
    }
    let grid = m.grid();
    let n = grid.dim();
    let lat = grid.lattice();
    let s = m.spectral();
    let out = (0..n)
        .map(|i| {
            (0..grid.len())
                .map(|k| (0..n).map(|j| Complex64::new(0.0, lat.kvec[k][j]) * s[i * n + j][k]).sum())
                .collect()
        })
        .collect();
    Field::from_spectral(grid, Rank::Vector, out)
}

/// div(μ̄∇u) + ∇((λ̄+μ̄) div u).
pub fn momentum_operator(mu: &Field, lam: &Field, u: &Field) -> Result<Field> {
    let a = row_divergence(&mu.product(&u.gradient()?)?)?;
    let b = lam.add(mu)?.product(&u.divergence()?)?.gradient()?;
    a.add(&b)
}

/// F₁ = div((∇u)ᵀ∇μ̄) + div(d ∇(λ̄+μ̄)).
pub fn f1_source(mu: &Field, lam: &Field, u: &Field) -> Result<Field> {
    let n = u.grid().dim();
    let gu = u.gradient()?;
    let gm = mu.gradient()?;
    let mut comps = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = Field::zeros(u.grid(), Rank::Scalar);
        for i in 0..n {
            acc = acc.add(&gm.component_field(i).product(&gu.component_field(i * n + j))?)?;
        }
        comps.push(acc.into_components().remove(0));
    }
    let v = Field::vector(u.grid(), comps)?;
    let dl = lam.add(mu)?.gradient()?.product(&u.divergence()?)?;
    v.add(&dl)?.divergence()
}

/// F₂^{ij} = div(∂_jμ̄ ∇u^i − ∂_iμ̄ ∇u^j).
pub fn f2_source(mu: &Field, u: &Field) -> Result<Field> {
    let grid = u.grid();
    let n = grid.dim();
    let gm = mu.gradient()?;
    let rows: Vec<Field> = (0..n).map(|i| u.component_field(i).gradient()).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let a = gm.component_field(j).product(&rows[i])?;
            let b = gm.component_field(i).product(&rows[j])?;
            data.push(a.sub(&b)?.divergence()?.into_components().remove(0));
        }
    }
    Field::new(grid, Rank::Matrix, data)
}

/// ∂_t u − div(μ̄∇u) − ∇((λ̄+μ̄) div u) = G, u(0) = u0.
#[derive(Clone, Debug)]
pub struct MomentumProblem {
    pub u0: Field,
    pub mu_bar: TimeField,
    pub lam_bar: TimeField,
    pub g: Option<TimeField>,
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub p: f64,
    /// Density trace ρ and reference value ρ̲ used by the estimate checks;
    /// without it the coefficient deviations stand in for ρ − ρ̲.
    pub density: Option<(TimeField, f64)>,
}

impl MomentumProblem {
    pub fn constant(u0: Field, mu: f64, lam: f64, horizon: f64, dt: f64) -> Self {
        let g = u0.grid();
        let c = |x: f64| TimeField::Constant(Field::zeros(g, Rank::Scalar).shift(x));
        MomentumProblem {
            u0,
            mu_bar: c(mu),
            lam_bar: c(lam),
            g: None,
            horizon,
            dt,
            samples: 20,
            p: 2.0,
            density: None,
        }
    }
}

/// Solution trace of a momentum run.
#[derive(Clone, Debug)]
pub struct MomentumRun {
    pub times: Vec<f64>,
    pub u: Vec<Field>,
    pub mu: Vec<Field>,
    pub lam: Vec<Field>,
    pub g: Vec<Field>,
    pub rho: Option<(Vec<Field>, f64)>,
    pub series_u: NormSeries,
    pub series_d: NormSeries,
    pub series_w: NormSeries,
    /// ‖u‖₂² after every step (index 0 is the initial value).
    pub energy: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    /// Smallest value of min(μ̄, λ̄+2μ̄) seen.
    pub c1: f64,
}

impl MomentumRun {
    /// Steps where ‖u‖₂² grew by more than tol·‖u‖₂².
    pub fn energy_increases(&self, tol: f64) -> usize {
        self.energy.windows(2).filter(|w| w[1] > w[0] * (1.0 + tol)).count()
    }
}

fn is_flat(f: &Field) -> bool {
    let c = f.component(0);
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo <= 1e-13 * hi.abs().max(1.0)
}

fn ellipticity(mu: &Field, lam: &Field) -> Result<f64> {
    let m = mu.component(0).iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let nu = mu
        .component(0)
        .iter()
        .zip(lam.component(0))
        .fold(f64::INFINITY, |a, (&x, &y)| a.min(y + 2.0 * x));
    if !(m > 0.0 && nu > 0.0) {
        return Err(Error::Hypothesis(format!(
            "ellipticity mu_bar >= c1 > 0, lam_bar + 2 mu_bar >= c1 fails (min mu_bar = {m}, min nu_bar = {nu})"
        )));
    }
    Ok(m.min(nu))
}

pub(crate) struct Coeffs {
    pub(crate) mu0: f64,
    pub(crate) nu0: f64,
    /// μ̄ − μ0 and λ̄ + μ̄ − (ν0 − μ0), when not constant.
    pub(crate) var: Option<(Field, Field)>,
}

pub(crate) fn frozen(mu: &Field, lam: &Field) -> Coeffs {
    if is_flat(mu) && is_flat(lam) {
        let m = mu.component(0)[0];
        return Coeffs { mu0: m, nu0: lam.component(0)[0] + 2.0 * m, var: None };
    }
    let mu0 = mu.mean()[0];
    let nu0 = lam.mean()[0] + 2.0 * mu0;
    let dm = mu.shift(-mu0);
    let dl = lam.add(mu).expect("same grid").shift(-(nu0 - mu0));
    Coeffs { mu0, nu0, var: Some((dm, dl)) }
}

/// Variable-coefficient remainder div(m∇u) + ∇(l div u), two-thirds dealiased.
pub(crate) fn momentum_remainder(grid: Grid, dm: &Field, dl: &Field, u: &Coefficients) -> Coefficients {
    let n = grid.dim();
    let lat = grid.lattice();
    let ik = |m: usize, a: usize| Complex64::new(0.0, lat.kvec[m][a]);
    let mut grads: Vec<Vec<Complex64>> = Vec::with_capacity(n * n + 1);
    for ui in u.iter().take(n) {
        for j in 0..n {
            grads.push(ui.iter().enumerate().map(|(m, z)| z * ik(m, j)).collect());
        }
    }
    let d: Vec<Complex64> = (0..grid.len()).map(|m| (0..n).map(|a| u[a][m] * ik(m, a)).sum()).collect();
    grads.push(d);
    let mut inputs: Vec<&[Complex64]> = vec![&dm.spectral()[0], &dl.spectral()[0]];
    inputs.extend(grads.iter().map(Vec::as_slice));
    let nn = n * n;
    let fluxes = eval_two_thirds(grid, &inputs, nn + 1, |x, y| {
        for k in 0..nn {
            y[k] = x[0] * x[2 + k];
        }
        y[nn] = x[1] * x[2 + nn];
    });
    (0..n)
        .map(|i| {
            (0..grid.len())
                .map(|m| {
                    let mut acc = ik(m, i) * fluxes[nn][m];
                    for j in 0..n {
                        acc += ik(m, j) * fluxes[i * n + j][m];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Applies L0 u = μ0Δu + (ν0 − μ0)∇div u.
fn apply_l0(lat: &Lattice, n: usize, u: &Coefficients, mu0: f64, nu0: f64) -> Coefficients {
    let mut out = vec![vec![ZERO; u[0].len()]; n];
    for m in 0..u[0].len() {
        let kv = lat.kvec[m];
        let xi2 = lat.xi[m] * lat.xi[m];
        let dot: Complex64 = (0..n).map(|a| u[a][m] * kv[a]).sum();
        for a in 0..n {
            out[a][m] = -u[a][m] * (mu0 * xi2) - dot * ((nu0 - mu0) * kv[a]);
        }
    }
    out
}

/// Solves (1 − h L0) x = rhs mode by mode.
fn solve_l0(lat: &Lattice, n: usize, rhs: &Coefficients, h: f64, mu0: f64, nu0: f64) -> Coefficients {
    let mut out = vec![vec![ZERO; rhs[0].len()]; n];
    for m in 0..rhs[0].len() {
        let kv = lat.kvec[m];
        let xi2 = lat.xi[m] * lat.xi[m];
        let kk: f64 = kv[..n].iter().map(|x| x * x).sum();
        let dot: Complex64 = (0..n).map(|a| rhs[a][m] * kv[a]).sum();
        let ft = 1.0 / (1.0 + h * mu0 * xi2);
        let fl = 1.0 / (1.0 + h * (mu0 * xi2 + (nu0 - mu0) * kk));
        for a in 0..n {
            let l = if kk > 0.0 { dot * kv[a] / kk } else { ZERO };
            out[a][m] = (rhs[a][m] - l) * ft + l * fl;
        }
    }
    out
}

/// γ of the two-stage stiffly accurate IMEX scheme.
pub(crate) const IMEX_GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// One ARS(2,2,2) step: constant-coefficient part implicit, `explicit`
/// evaluated at stage times t and t + γdt.
pub(crate) fn imex_step(
    grid: Grid,
    u: &Coefficients,
    t: f64,
    dt: f64,
    mu0: f64,
    nu0: f64,
    mut explicit: impl FnMut(f64, &Coefficients) -> Result<Coefficients>,
) -> Result<Coefficients> {
    let g = IMEX_GAMMA;
    let delta = 1.0 - 1.0 / (2.0 * g);
    let n = grid.dim();
    let lat = grid.lattice();
    let e1 = explicit(t, u)?;
    let u2 = solve_l0(&lat, n, &lincomb(&[(1.0, u), (dt * g, &e1)]), dt * g, mu0, nu0);
    let e2 = explicit(t + g * dt, &u2)?;
    let i2 = apply_l0(&lat, n, &u2, mu0, nu0);
    let rhs = lincomb(&[(1.0, u), (dt * delta, &e1), (dt * (1.0 - delta), &e2), (dt * (1.0 - g), &i2)]);
    Ok(solve_l0(&lat, n, &rhs, dt * g, mu0, nu0))
}

fn energy(c: &Coefficients) -> f64 {
    c.iter().flat_map(|v| v.iter()).map(|z| z.norm_sqr()).sum()
}

/// IMEX integration of the linearized momentum equation.
pub fn solve_momentum(prob: &MomentumProblem, part: &DyadicPartition) -> Result<MomentumRun> {
    let grid = prob.u0.grid();
    if prob.u0.rank() != Rank::Vector {
        return Err(Error::RankMismatch("momentum unknown must be a vector field".into()));
    }
    if part.grid() != grid {
        return Err(Error::GridMismatch);
    }
    check_compatible(&prob.mu_bar, grid, Rank::Scalar, "mu_bar")?;
    check_compatible(&prob.lam_bar, grid, Rank::Scalar, "lam_bar")?;
    if let Some(g) = &prob.g {
        check_compatible(g, grid, Rank::Vector, "source")?;
    }
    let (n, dt, marks) = schedule(prob.horizon, prob.dt, prob.samples)?;
    let coef_at = |t: f64| (prob.mu_bar.at(t), prob.lam_bar.at(t));
    let mut c1 = f64::INFINITY;
    if let TimeField::Sampled { times, .. } = &prob.mu_bar {
        for &t in times {
            let (m, l) = coef_at(t);
            c1 = c1.min(ellipticity(&m, &l)?);
        }
    }
    let constant = prob.mu_bar.is_constant() && prob.lam_bar.is_constant();
    let fixed = constant.then(|| {
        let (m, l) = coef_at(0.0);
        (frozen(&m, &l), m, l)
    });
    if let Some((_, m, l)) = &fixed {
        c1 = c1.min(ellipticity(m, l)?);
    }
    let zero = Field::zeros(grid, Rank::Vector);
    let g_at = |t: f64| prob.g.as_ref().map_or_else(|| zero.clone(), |g| g.at(t));
    let mut run = MomentumRun {
        times: Vec::new(),
        u: Vec::new(),
        mu: Vec::new(),
        lam: Vec::new(),
        g: Vec::new(),
        rho: prob.density.as_ref().map(|(_, r)| (Vec::new(), *r)),
        series_u: NormSeries::new(prob.p, part.j_min()),
        series_d: NormSeries::new(prob.p, part.j_min()),
        series_w: NormSeries::new(prob.p, part.j_min()),
        energy: Vec::with_capacity(n + 1),
        dt,
        steps: n,
        c1,
    };
    let mut state = prob.u0.spectral().clone();
    run.energy.push(energy(&state));
    let mut next = 0;
    for step in 0..=n {
        let t = step as f64 * dt;
        if next < marks.len() && marks[next] == step {
            let u = if step == 0 { prob.u0.clone() } else { Field::from_spectral(grid, Rank::Vector, state.clone())? };
            let dc = div_curl_split(&u)?;
            run.series_u.record(part, t, &u)?;
            run.series_d.record(part, t, &dc.d)?;
            run.series_w.record(part, t, &dc.w)?;
            run.times.push(t);
            run.u.push(u);
            let (m, l) = match &fixed {
                Some((_, m, l)) => (m.clone(), l.clone()),
                None => coef_at(t),
            };
            run.mu.push(m);
            run.lam.push(l);
            run.g.push(g_at(t));
            if let (Some((rho, _)), Some((tf, _))) = (run.rho.as_mut(), prob.density.as_ref()) {
                rho.push(tf.at(t));
            }
            next += 1;
        }
        if step == n {
            break;
        }
        let local;
        let co = match &fixed {
            Some((c, _, _)) => c,
            None => {
                let (m, l) = coef_at(t);
                run.c1 = run.c1.min(ellipticity(&m, &l)?);
                local = frozen(&m, &l);
                &local
            }
        };
        let (mu0, nu0) = (co.mu0, co.nu0);
        state = imex_step(grid, &state, t, dt, mu0, nu0, |tau, u| {
            let mut out = match (&fixed, &co.var) {
                (Some(_), None) => vec![vec![ZERO; grid.len()]; grid.dim()],
                (Some(_), Some((dm, dl))) => momentum_remainder(grid, dm, dl, u),
                (None, _) => {
                    // Coefficients move within the step; the frozen means stay fixed.
                    let (m, l) = coef_at(tau);
                    let dm = m.shift(-mu0);
                    let dl = l.add(&m)?.shift(-(nu0 - mu0));
                    momentum_remainder(grid, &dm, &dl, u)
                }
            };
            if prob.g.is_some() {
                for (o, z) in out.iter_mut().zip(g_at(tau).spectral()) {
                    for (a, b) in o.iter_mut().zip(z) {
                        *a += b;
                    }
                }
            }
            Ok(out)
        })?;
        if state.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("momentum state (implicit solve diverged)"));
        }
        run.energy.push(energy(&state));
    }
    Ok(run)
}

/// Least-squares slope of ln y against t, and the largest relative deviation
/// of the exponential fit.
pub fn fit_decay(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a, b.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate("decay fit needs two positive samples".into()));
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mt, my) = (st / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mt) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid = pts.iter().map(|(x, y)| ((my + slope * (x - mt)) - y).exp_m1().abs()).fold(0.0, f64::max);
    Ok((-slope, resid))
}

/// Single Fourier mode with wavenumber k: curl-free (along k) or
/// divergence-free (rotated by 90° in the first two axes).
pub fn mode_field(grid: Grid, k: [i64; 3], curl_free: bool) -> Result<Field> {
    let n = grid.dim();
    let unit = grid.frequency_unit();
    let kk: Vec<f64> = k[..n].iter().map(|&x| x as f64 * unit).collect();
    let norm = kk.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero wavenumber".into()));
    }
    let mut dir: Vec<f64> = kk.iter().map(|x| x / norm).collect();
    if !curl_free {
        if n < 2 {
            return Err(Error::InvalidArgument("divergence-free modes need N >= 2".into()));
        }
        let (a, b) = (dir[0], dir[1]);
        let (ta, tb) = if a == 0.0 && b == 0.0 { (1.0, 0.0) } else { (-b, a) };
        let l = (ta * ta + tb * tb).sqrt();
        dir = vec![0.0; n];
        dir[0] = ta / l;
        dir[1] = tb / l;
    }
    Field::vector_from_fn(grid, |x, c| {
        let ph: f64 = kk.iter().zip(x).map(|(a, b)| a * b).sum();
        dir[c] * ph.cos()
    })
}

/// Measured exponential rate of one block of a constant-coefficient run.
#[derive(Clone, Debug, Serialize)]
pub struct BlockRate {
    pub j: i32,
    pub k: [i64; 3],
    pub rate: f64,
    /// rate / 2^{2j} in units of the grid's frequency unit.
    pub c_hat: f64,
    pub fit_residual: f64,
}

/// Decay rate of ‖Δ_j u(t)‖_p for a single-mode probe at wavenumber k.
#[allow(clippy::too_many_arguments)]
pub fn probe_block_decay(
    part: &DyadicPartition,
    j: i32,
    mu0: f64,
    lam0: f64,
    k: [i64; 3],
    curl_free: bool,
    horizon: f64,
    dt: f64,
    p: f64,
) -> Result<BlockRate> {
    let grid = part.grid();
    let u0 = mode_field(grid, k, curl_free)?;
    let mut prob = MomentumProblem::constant(u0.clone(), mu0, lam0, horizon, dt);
    prob.samples = 40;
    prob.p = p;
    if !part.indices().contains(&j) {
        return Err(Error::IndexOutOfRange { index: j, min: part.j_min(), max: part.j_max() });
    }
    let run = solve_momentum(&prob, part)?;
    let kb = (j - part.j_min()) as usize;
    let col: Vec<f64> = run.series_u.blocks.iter().map(|b| b[kb]).collect();
    let (rate, resid) = fit_decay(&run.times, &col)?;
    let unit = grid.frequency_unit();
    Ok(BlockRate { j, k, rate, c_hat: rate / (4f64.powi(j) * unit * unit), fit_residual: resid })
}

/// Result of the empirical decay-constant fit.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub p: f64,
    /// Uniform constant: min over blocks of rate / 2^{2j}.
    pub c: f64,
    pub curl_free: Vec<BlockRate>,
    pub div_free: Vec<BlockRate>,
    pub warning: Option<String>,
}

/// Fits ‖Δ_j u(t)‖_p ≈ e^{−c 2^{2j} t}‖Δ_j u0‖_p for the constant-coefficient
/// solver, probing each block at the lowest resolved lattice wavenumber where
/// the block symbol exceeds 10⁻¹⁰ (the slowest mode the block visibly carries).
pub fn mode_decay_fit(grid: Grid, mu0: f64, nu0: f64, p: f64) -> Result<DecayFit> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidExponent(p));
    }
    if !(mu0 > 0.0 && nu0 > 0.0) {
        return Err(Error::Hypothesis(format!("ellipticity fails (mu0 = {mu0}, nu0 = {nu0})")));
    }
    let part = DyadicPartition::for_grid(grid)?;
    let lat = grid.lattice();
    let cut = grid.two_thirds_cutoff();
    let lam0 = nu0 - 2.0 * mu0;
    let mut curl_free = Vec::new();
    let mut div_free = Vec::new();
    for j in part.indices() {
        let sym = part.block_symbol(j)?;
        let best = (0..grid.len())
            .filter(|&m| sym[m] > 1e-10 && lat.xi[m] <= cut as f64 * grid.frequency_unit())
            .min_by(|&a, &b| lat.xi[a].total_cmp(&lat.xi[b]));
        let Some(m) = best else { continue };
        if lat.xi[m] == 0.0 {
            continue;
        }
        let k = lat.ints[m];
        for (cf, out, rate) in [(true, &mut curl_free, nu0), (false, &mut div_free, mu0)] {
            if !cf && grid.dim() < 2 {
                continue;
            }
            let r = rate * lat.xi[m] * lat.xi[m];
            let horizon = 3.0 / r;
            let dt = (horizon / 300.0).min(1e-3);
            out.push(probe_block_decay(&part, j, mu0, lam0, k, cf, horizon, dt, p)?);
        }
    }
    if curl_free.is_empty() {
        return Err(Error::Degenerate("no fully resolved block on this grid".into()));
    }
    let c = curl_free.iter().chain(&div_free).map(|b| b.c_hat).fold(f64::INFINITY, f64::min);
    let worst = curl_free.iter().chain(&div_free).map(|b| b.fit_residual).fold(0.0, f64::max);
    let warning = (worst > 0.1).then(|| format!("exponential fit residual {worst:.3} exceeds 10%"));
    Ok(DecayFit { p, c, curl_free, div_free, warning })
}

/// Empirical constant of the dissipation inequality
/// c ā R₁² (p−1)/p² ∫|u|^p ≤ −∫div(a∇u)|u|^{p−2}u for a scalar u supported in
/// |ξ| ≥ R₁, returned as the ratio of the right side to ā R₁² (p−1)/p² ∫|u|^p
/// with ā = min a over the grid.
pub fn dissipation_constant(a: &Field, u: &Field, p: f64, r1: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidExponent(p));
    }
    let grid = u.grid();
    let flux = a.product(&u.gradient()?)?.divergence()?;
    let q = p - 2.0;
    let lhs = -eval_padded(grid, &[&flux.spectral()[0], &u.spectral()[0]], 1, |x, y| {
        y[0] = x[0] * x[1].abs().powf(q) * x[1];
    })[0][0]
        .re;
    let mass = eval_padded(grid, &[&u.spectral()[0]], 1, |x, y| y[0] = x[0].abs().powf(p))[0][0].re;
    let abar = a.component(0).iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let denom = abar * r1 * r1 * (p - 1.0) / (p * p) * mass;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!("dissipation denominator {denom}")));
    }
    Ok(lhs / denom)
}

/// Which momentum estimate is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentumVariant {
    /// L̃^q(Ḃ^{s−1+2/q}) bound with the perturbation in Ḃ^{N/p}.
    A1,
    /// Same with the perturbation in Ḃ^{N/p+1} and u in L̃¹(Ḃ^s).
    A2,
    /// L̃¹(Ḃ^{s+1}) + L̃²(Ḃ^s) bounded by time-weighted data.
    B,
    /// Ḃ^{−N/p}_{p,∞} version used for uniqueness.
    End,
}

impl std::str::FromStr for MomentumVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a1" => Ok(MomentumVariant::A1),
            "a2" => Ok(MomentumVariant::A2),
            "b" => Ok(MomentumVariant::B),
            "end" => Ok(MomentumVariant::End),
            _ => Err(Error::InvalidArgument(format!("unknown momentum variant {s:?} (a1, a2, b, end)"))),
        }
    }
}

/// Parameters of a momentum estimate check.
#[derive(Clone, Debug, Serialize)]
pub struct MomentumCheckParams {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub variant: MomentumVariant,
    /// A(T) = (1 + ‖ρ‖_{L^∞_T L^∞})^{[N/p] + exponent_shift}.
    pub exponent_shift: i32,
}

/// One side-by-side evaluation of a momentum estimate.
#[derive(Clone, Debug, Serialize)]
pub struct MomentumCheck {
    pub params: MomentumCheckParams,
    pub horizons: Vec<f64>,
    pub lhs: Vec<f64>,
    pub data: Vec<f64>,
    pub perturbation: Vec<f64>,
    pub a_t: Vec<f64>,
    /// LHS / (data + A(T)·perturbation) at each horizon.
    pub ratios: Vec<f64>,
    /// Smallest admissible C over the horizons checked.
    pub min_c: f64,
}

impl MomentumVariant {
    fn check(self, n: f64, s: f64, p: f64) -> Result<()> {
        let lo = -n * (1.0 / p).min(1.0 - 1.0 / p) + 1.0;
        let fail = |c: &str| Err(Error::Hypothesis(format!("{c} fails (s = {s}, p = {p}, N = {n})")));
        match self {
            MomentumVariant::A1 | MomentumVariant::B => {
                if !(p > 1.0 && p <= n) {
                    return fail("1 < p <= N");
                }
                if !(s > lo && s <= n / p + 1e-12) {
                    return fail("-N min(1/p, 1/p') + 1 < s <= N/p");
                }
            }
            MomentumVariant::A2 => {
                if !(p > 1.0 && p.is_finite()) {
                    return fail("1 < p < inf");
                }
                if !(s > lo && s <= n / p + 1.0 + 1e-12) {
                    return fail("-N min(1/p, 1/p') + 1 < s <= N/p + 1");
                }
            }
            MomentumVariant::End => {
                if !(p >= 2.0 && p <= n) {
                    return fail("2 <= p <= N");
                }
            }
        }
        Ok(())
    }
}

/// Evaluates both sides of the selected estimate with horizons at the
/// stored sample times (the first, t = 0, is skipped).
pub fn momentum_estimate_check(
    run: &MomentumRun,
    part: &DyadicPartition,
    params: &MomentumCheckParams,
    weights: Option<&WeightSequence>,
) -> Result<MomentumCheck> {
    let n = part.grid().dim() as f64;
    let (s, p, q) = (params.s, params.p, params.q);
    params.variant.check(n, s, p)?;
    let needs_w = matches!(params.variant, MomentumVariant::B | MomentumVariant::End);
    if needs_w && weights.is_none() {
        return Err(Error::InvalidArgument("weighted variants need a weight sequence".into()));
    }
    let su = NormSeries::from_fields(part, p, &run.times, &run.u)?;
    let sg = NormSeries::from_fields(part, p, &run.times, &run.g)?;
    // ρ − ρ̲ and ‖ρ‖_∞, or the coefficient deviations when no density is recorded.
    let (pert, sup): (Vec<Field>, Vec<f64>) = match &run.rho {
        Some((rho, r0)) => (
            rho.iter().map(|f| f.shift(-r0)).collect(),
            rho.iter().map(|f| f.lp_norm(f64::INFINITY)).collect::<Result<_>>()?,
        ),
        None => {
            let (m0, l0) = (run.mu[0].mean()[0], run.lam[0].mean()[0]);
            let mut d = Vec::new();
            let mut s = Vec::new();
            for (m, l) in run.mu.iter().zip(&run.lam) {
                d.push(m.shift(-m0).add(&l.shift(-l0))?);
                s.push(m.lp_norm(f64::INFINITY)?.max(l.lp_norm(f64::INFINITY)?));
            }
            (d, s)
        }
    };
    let sp = NormSeries::from_fields(part, p, &run.times, &pert)?;
    let expo = (n / p).floor() as i32 + params.exponent_shift;
    let mut out = MomentumCheck {
        params: params.clone(),
        horizons: Vec::new(),
        lhs: Vec::new(),
        data: Vec::new(),
        perturbation: Vec::new(),
        a_t: Vec::new(),
        ratios: Vec::new(),
        min_c: 0.0,
    };
    let u0 = &su.blocks[0];
    let ds = crate::partition::dyadic_sum;
    for (i, &t) in run.times.iter().enumerate().skip(1) {
        let cu = su.truncated(t);
        let cg = sg.truncated(t);
        let cp = sp.truncated(t);
        let a_t = (1.0 + sup[..=i].iter().fold(0.0f64, |a, &b| a.max(b))).powi(expo);
        let om = match weights {
            Some(w) => Some(block_weights(part, w, t)?),
            None => None,
        };
        let (lhs, data, pt) = match params.variant {
            MomentumVariant::A1 | MomentumVariant::A2 => {
                let lhs = cu.chemin_lerner_norm(s - 1.0 + 2.0 / q, q, 1.0)?;
                let data = ds(part.j_min(), u0, s - 1.0, 1.0, None)? + cg.chemin_lerner_norm(s - 1.0, 1.0, 1.0)?;
                let pt = if params.variant == MomentumVariant::A1 {
                    cp.chemin_lerner_norm(n / p, f64::INFINITY, 1.0)? * cu.chemin_lerner_norm(s + 1.0, 1.0, 1.0)?
                } else {
                    cp.chemin_lerner_norm(n / p + 1.0, f64::INFINITY, 1.0)? * cu.chemin_lerner_norm(s, 1.0, 1.0)?
                };
                (lhs, data, pt)
            }
            MomentumVariant::B => {
                let om = om.as_deref().expect("weights");
                let lhs = cu.chemin_lerner_norm(s + 1.0, 1.0, 1.0)? + cu.chemin_lerner_norm(s, 2.0, 1.0)?;
                let data = ds(part.j_min(), u0, s - 1.0, 1.0, Some(om))?
                    + cg.weighted_chemin_lerner_norm(s - 1.0, 1.0, 1.0, om)?;
                let pt = cp.weighted_chemin_lerner_norm(n / p, f64::INFINITY, 1.0, om)?
                    * cu.chemin_lerner_norm(s + 1.0, 1.0, 1.0)?;
                (lhs, data, pt)
            }
            MomentumVariant::End => {
                let om = om.as_deref().expect("weights");
                let e = -n / p;
                let inf = f64::INFINITY;
                let lhs = cu.chemin_lerner_norm(e + 2.0, 1.0, inf)? + cu.chemin_lerner_norm(e + 1.0, 2.0, inf)?;
                let data = ds(part.j_min(), u0, e, inf, None)? + cg.weighted_chemin_lerner_norm(e, 1.0, inf, om)?;
                let pt = cp.weighted_chemin_lerner_norm(n / p, inf, 1.0, om)? * cu.chemin_lerner_norm(e + 2.0, 1.0, inf)?;
                (lhs, data, pt)
            }
        };
        let rhs = data + a_t * pt;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        out.horizons.push(t);
        out.lhs.push(lhs);
        out.data.push(data);
        out.perturbation.push(pt);
        out.a_t.push(a_t);
        out.ratios.push(ratio);
    }
    out.min_c = out.ratios.iter().copied().fold(0.0, f64::max);
    Ok(out)
}

/// Manifest of a linear run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub kind: &'static str,
    pub dim: usize,
    pub resolution: usize,
    pub period: f64,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub p: f64,
    pub cfl_advection: f64,
}

impl TransportRun {
    pub fn manifest(&self) -> RunManifest {
        let g = self.f[0].grid();
        RunManifest {
            kind: "transport",
            dim: g.dim(),
            resolution: g.resolution(),
            period: g.period(),
            dt: self.dt,
            horizon: *self.times.last().unwrap_or(&0.0),
            steps: self.steps,
            p: self.series.p,
            cfl_advection: CFL_ADVECTION,
        }
    }
}

impl MomentumRun {
    pub fn manifest(&self) -> RunManifest {
        let g = self.u[0].grid();
        RunManifest {
            kind: "momentum",
            dim: g.dim(),
            resolution: g.resolution(),
            period: g.period(),
            dt: self.dt,
            horizon: *self.times.last().unwrap_or(&0.0),
            steps: self.steps,
            p: self.series_u.p,
            cfl_advection: CFL_ADVECTION,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paraproduct::advect;

    fn smooth(g: Grid, seed: u64) -> Field {
        let s = seed as f64;
        Field::from_fn(g, |x| {
            (x[0] + 0.3 * s).sin() + 0.5 * (2.0 * x[1] - s).cos() + 0.25 * (x[0] + 2.0 * x[1] + 0.7 * s).sin()
        })
        .unwrap()
    }

    fn smooth_vec(g: Grid, seed: u64) -> Field {
        let s = seed as f64;
        Field::vector_from_fn(g, |x, c| {
            let c = c as f64;
            (x[0] + c * x[1] + s).sin() + 0.4 * (2.0 * x[1] - x[0] + c + s).cos() + 0.2 * (3.0 * x[0] + s * c).sin()
        })
        .unwrap()
    }

    #[test]
    fn zero_velocity_keeps_data() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let f0 = smooth(g, 1);
        let prob = TransportProblem::new(f0.clone(), TimeField::Constant(Field::zeros(g, Rank::Vector)), 0.5, 0.01);
        let run = solve_transport(&prob, &part).unwrap();
        let last = run.f.last().unwrap();
        assert_eq!(last.spectral()[0], f0.spectral()[0]);
        let chk = transport_estimate_check(&run, &part, 0.5, 2.0, 1.0, None).unwrap();
        assert!(chk.ratio_at_zero <= 1.0 + 1e-12);
        assert_eq!(chk.min_c, 0.0);
    }

    #[test]
    fn constant_velocity_translates() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let f0 = smooth(g, 2);
        let (c0, c1) = (0.7, -0.4);
        let v = Field::vector_from_fn(g, |_, c| if c == 0 { c0 } else { c1 }).unwrap();
        let prob = TransportProblem::new(f0, TimeField::Constant(v), 1.0, 1e-2);
        let run = solve_transport(&prob, &part).unwrap();
        let exact = smooth(g, 2);
        let exact = Field::from_fn(g, |x| {
            let y = [x[0] - c0, x[1] - c1];
            exact.grid().dim() as f64 * 0.0 + {
                (y[0] + 0.6).sin() + 0.5 * (2.0 * y[1] - 2.0).cos() + 0.25 * (y[0] + 2.0 * y[1] + 1.4).sin()
            }
        })
        .unwrap();
        let err = run.f.last().unwrap().sub(&exact).unwrap().lp_norm(f64::INFINITY).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn cfl_violation_suggests_step() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let v = Field::vector_from_fn(g, |_, _| 10.0).unwrap();
        let prob = TransportProblem::new(smooth(g, 1), TimeField::Constant(v.clone()), 0.1, 0.05);
        match solve_transport(&prob, &part) {
            Err(Error::Cfl { suggested, .. }) => assert!((suggested - cfl_limit(&v)).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weighted_check_vanishes_at_tiny_horizon() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let v = Field::vector_from_fn(g, |x, c| if c == 0 { x[1].sin() } else { x[0].sin() }).unwrap();
        let f0 = smooth(g, 3);
        let prob = TransportProblem { samples: 2, ..TransportProblem::new(f0.clone(), TimeField::Constant(v), 1e-10, 1e-11) };
        let run = solve_transport(&prob, &part).unwrap();
        let w = WeightSequence::parabolic(1.0).unwrap();
        let chk = transport_estimate_check(&run, &part, 0.5, 2.0, 1.0, Some(&w)).unwrap();
        let plain = part.besov_norm(&f0, 0.5, 2.0, 1.0).unwrap();
        assert!(chk.lhs.iter().all(|&x| x < 1e-3 * plain), "{:?}", chk.lhs);
        assert_eq!(chk.min_c, 0.0);
        assert!(transport_estimate_check(&run, &part, 1.5, 2.0, 1.0, Some(&w)).is_err());
    }

    #[test]
    fn div_curl_round_trip_and_special_fields() {
        let g = Grid::periodic(2, 32).unwrap();
        let u = smooth_vec(g, 4).without_mean();
        let st = div_curl_split(&u).unwrap();
        let back = reconstruct(&st.d, &st.w).unwrap();
        assert!(back.sub(&u).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-9);
        let psi = smooth(g, 5);
        let grad = psi.gradient().unwrap();
        assert!(div_curl_split(&grad).unwrap().w.lp_norm(f64::INFINITY).unwrap() < 1e-12);
        let rot = Field::vector_from_fn(g, |x, c| if c == 0 { x[1].sin() } else { (x[0] + 0.3).sin() }).unwrap();
        assert!(div_curl_split(&rot).unwrap().d.lp_norm(f64::INFINITY).unwrap() < 1e-12);
        let bad_w = st.w.scale(0.0).add(&Field::new(g, Rank::Matrix, vec![vec![0.0; g.len()], smooth(g, 1).into_components().remove(0), vec![0.0; g.len()], vec![0.0; g.len()]]).unwrap()).unwrap();
        assert!(matches!(reconstruct(&st.d, &bad_w), Err(Error::Incompatible(_))));
    }

    #[test]
    fn projections_split_the_field() {
        let g = Grid::periodic(2, 32).unwrap();
        let u = smooth_vec(g, 6);
        let p = leray_projection(&u).unwrap();
        let q = gradient_projection(&u).unwrap();
        assert!(p.add(&q).unwrap().sub(&u).unwrap().lp_norm(2.0).unwrap() < 1e-13);
        assert!(p.divergence().unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
        assert!(q.curl().unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
    }

    #[test]
    fn div_curl_sources_match_operator() {
        let g = Grid::periodic(2, 32).unwrap();
        let mu = smooth(g, 7).scale(0.2).shift(1.0);
        let lam = smooth(g, 8).scale(0.1).shift(0.3);
        let u = smooth_vec(g, 9);
        let op = momentum_operator(&mu, &lam, &u).unwrap();
        let st = div_curl_split(&u).unwrap();
        let nu = lam.add(&mu.scale(2.0)).unwrap();
        let d_side = nu.product(&st.d.gradient().unwrap()).unwrap().divergence().unwrap().add(&f1_source(&mu, &lam, &u).unwrap()).unwrap();
        let err = op.divergence().unwrap().sub(&d_side).unwrap().lp_norm(2.0).unwrap();
        assert!(err < 1e-11, "{err}");
        let mut w_side = Vec::new();
        let f2 = f2_source(&mu, &u).unwrap();
        for ij in 0..4 {
            let wij = st.w.component_field(ij);
            let a = mu.product(&wij.gradient().unwrap()).unwrap().divergence().unwrap();
            w_side.push(a.add(&f2.component_field(ij)).unwrap().into_components().remove(0));
        }
        let w_side = Field::new(g, Rank::Matrix, w_side).unwrap();
        let err = op.curl().unwrap().sub(&w_side).unwrap().lp_norm(2.0).unwrap();
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn single_mode_decay_rates() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let (mu, lam) = (0.5, 0.7);
        let nu = lam + 2.0 * mu;
        for (k, cf, rate) in [([2, 1, 0], true, nu * 5.0), ([3, 0, 0], false, mu * 9.0)] {
            let b = probe_block_decay(&part, 1, mu, lam, k, cf, 0.5, 1e-3, 2.0).unwrap();
            assert!((b.rate / rate - 1.0).abs() < 5e-3, "{} vs {}", b.rate, rate);
        }
    }

    #[test]
    fn zero_data_stays_zero_and_energy_decays() {
        let g = Grid::periodic(2, 16).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let run = solve_momentum(&MomentumProblem::constant(Field::zeros(g, Rank::Vector), 1.0, 0.0, 0.1, 1e-2), &part).unwrap();
        assert!(run.u.iter().all(|u| u.lp_norm(f64::INFINITY).unwrap() == 0.0));
        let mu = TimeField::Constant(smooth(g, 1).scale(0.3).shift(1.0));
        let lam = TimeField::Constant(smooth(g, 2).scale(0.2));
        let prob = MomentumProblem { mu_bar: mu, lam_bar: lam, ..MomentumProblem::constant(smooth_vec(g, 3), 1.0, 0.0, 0.2, 1e-3) };
        let run = solve_momentum(&prob, &part).unwrap();
        assert_eq!(run.energy_increases(1e-8), 0);
        assert!(run.energy.last().unwrap() < &run.energy[0]);
    }

    #[test]
    fn ellipticity_is_enforced() {
        let g = Grid::periodic(2, 16).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let prob = MomentumProblem::constant(smooth_vec(g, 1), 1.0, -2.5, 0.1, 1e-2);
        assert!(matches!(solve_momentum(&prob, &part), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn decay_fit_recovers_lower_edge() {
        let g = Grid::periodic(2, 64).unwrap();
        let fit = mode_decay_fit(g, 1.0, 1.0, 2.0).unwrap();
        assert!(fit.warning.is_none());
        let top = fit.curl_free.iter().max_by_key(|b| b.j).unwrap();
        assert!(top.j >= 3);
        assert!((top.c_hat / 0.5625 - 1.0).abs() < 0.05, "{top:?}");
    }

    #[test]
    fn dissipation_constant_quadratic_case() {
        let g = Grid::periodic(2, 32).unwrap();
        let u = Field::from_fn(g, |x| (3.0 * x[0]).cos() + (2.0 * x[0] + 2.0 * x[1]).sin()).unwrap();
        let a = Field::zeros(g, Rank::Scalar).shift(1.5);
        // p = 2: ratio is ‖∇u‖²/(R₁²‖u‖²)·4 with R₁ = 2√2 … direct Plancherel value.
        let c = dissipation_constant(&a, &u, 2.0, 2.0).unwrap();
        let expect = 4.0 * (9.0 + 8.0) / 2.0 / (4.0 * 1.0);
        assert!((c - expect).abs() < 1e-10, "{c} vs {expect}");
        assert!(dissipation_constant(&a, &u, 4.0, 2.0).unwrap() > 0.0);
    }

    #[test]
    fn momentum_check_interpolation_consistency() {
        let g = Grid::periodic(2, 32).unwrap();
        let part = DyadicPartition::for_grid(g).unwrap();
        let run = solve_momentum(&MomentumProblem::constant(smooth_vec(g, 2), 1.0, 0.0, 0.2, 2e-3), &part).unwrap();
        let su = &run.series_u;
        let inf = su.chemin_lerner_norm(-0.5, f64::INFINITY, 1.0).unwrap();
        let one = su.chemin_lerner_norm(1.5, 1.0, 1.0).unwrap();
        let two = su.chemin_lerner_norm(0.5, 2.0, 1.0).unwrap();
        assert!(two <= (inf * one).sqrt() * (1.0 + 1e-12));
        let prm = MomentumCheckParams { s: 0.5, p: 2.0, q: 1.0, variant: MomentumVariant::A1, exponent_shift: 2 };
        let chk = momentum_estimate_check(&run, &part, &prm, None).unwrap();
        assert!(chk.perturbation.iter().all(|&x| x == 0.0));
        assert!(chk.min_c.is_finite() && chk.min_c > 0.0);
        let bad = MomentumCheckParams { s: 1.5, ..prm };
        assert!(matches!(momentum_estimate_check(&run, &part, &bad, None), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn advect_matches_solver_term() {
        let g = Grid::periodic(2, 32).unwrap();
        let v = smooth_vec(g, 1).scale(0.1);
        let f = smooth(g, 2);
        let a = advection_term(g, v.spectral(), &f.spectral()[0]);
        let b = advect(&v, &f).unwrap();
        let diff: f64 = a.iter().zip(&b.spectral()[0]).map(|(x, y)| (x + y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-13);
    }
}
