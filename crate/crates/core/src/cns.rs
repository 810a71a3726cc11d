//! Compressible Navier-Stokes with density-dependent viscosities in the
//! (a, u) form, a = (ρ − ρ̄₀)/ρ̄₀:
//!
//!   ∂_t a + u·∇a = −(1 + a) div u,
//!   ∂_t u − div(μ̄∇u) − ∇((λ̄+μ̄) div u) = G(a, u),
//!
//! with μ̄ = μ(ρ)/ρ and λ̄ = λ(ρ)/ρ. The scheme mollifies the data, integrates
//! with Strang splitting (transport half step, momentum step, transport half
//! step), and monitors the bootstrap hypotheses of the existence argument
//! against the smallness budget they require.

use crate::error::{Error, Result};
use crate::field::{eval_two_thirds, Coefficients, Field, Grid, Rank};
use crate::linear::{cfl_limit, imex_step, rk3_step, schedule};
use crate::partition::{dyadic_sum, DyadicPartition, NormSeries};
use crate::quadrature::{composite_gauss8, cumulative_trapezoid, trapezoid};
use crate::weights::{block_weights, WeightSequence};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::path::Path;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Scalar constitutive law ρ ↦ f(ρ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    /// Σ_k c_k ρ^k.
    Polynomial(Vec<f64>),
    /// coef · ρ^exponent.
    Power { coef: f64, exponent: f64 },
}

impl Law {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Law::Polynomial(c) => c.iter().rev().fold(0.0, |acc, a| acc * r + a),
            Law::Power { coef, exponent } => coef * r.powf(*exponent),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            Law::Polynomial(c) => {
                c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, a)| acc * r + k as f64 * a)
            }
            Law::Power { coef, exponent } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    coef * exponent * r.powf(exponent - 1.0)
                }
            }
        }
    }
}

/// Viscosities μ(ρ), λ(ρ), pressure P(ρ), reference density ρ̄₀ and the
/// lower density bound c₀ of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialLaws {
    #[serde(default)]
    pub name: Option<String>,
    pub mu: Law,
    pub lam: Law,
    pub pressure: Law,
    pub rho_bar0: f64,
    pub c0: f64,
}

impl MaterialLaws {
    pub fn mu_bar(&self, rho: f64) -> f64 {
        self.mu.eval(rho) / rho
    }
    pub fn lam_bar(&self, rho: f64) -> f64 {
        self.lam.eval(rho) / rho
    }

    /// min μ̄ and min(λ̄ + 2μ̄) over [lo, hi], sampled at 2001 points.
    pub fn barred_minima(&self, lo: f64, hi: f64) -> (f64, f64) {
        let n = 2000;
        (0..=n).fold((f64::INFINITY, f64::INFINITY), |(m, v), i| {
            let r = lo + (hi - lo) * i as f64 / n as f64;
            let mb = self.mu_bar(r);
            (m.min(mb), v.min(self.lam_bar(r) + 2.0 * mb))
        })
    }

    /// μ > 0 and λ + 2μ > 0 on [lo, hi].
    pub fn validate(&self, lo: f64, hi: f64) -> Result<()> {
        if !(self.rho_bar0 > 0.0 && self.c0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference density {} and floor {} must be positive",
                self.rho_bar0, self.c0
            )));
        }
        let n = 2000;
        for i in 0..=n {
            let r = lo + (hi - lo) * i as f64 / n as f64;
            let (m, l) = (self.mu.eval(r), self.lam.eval(r));
            if !(m > 0.0 && l + 2.0 * m > 0.0) {
                return Err(Error::Hypothesis(format!(
                    "mu > 0 and lambda + 2 mu > 0 fails at rho = {r} (mu = {m}, lambda = {l})"
                )));
            }
        }
        Ok(())
    }

    /// Warning when a two-dimensional preset is used on another dimension.
    pub fn dimension_warning(&self, dim: usize) -> Option<String> {
        (self.name.as_deref() == Some("shallow_water") && dim != 2)
            .then(|| format!("shallow water laws used on a {dim}-dimensional grid"))
    }
}

/// Viscous shallow water: μ(ρ) = ρ, λ = 0, P(ρ) = ρ², ρ̄₀ = 1, c₀ = 1/2.
pub fn shallow_water_preset() -> MaterialLaws {
    MaterialLaws {
        name: Some("shallow_water".into()),
        mu: Law::Polynomial(vec![0.0, 1.0]),
        lam: Law::Polynomial(vec![]),
        pressure: Law::Polynomial(vec![0.0, 0.0, 1.0]),
        rho_bar0: 1.0,
        c0: 0.5,
    }
}

/// a₀ = (ρ₀ − ρ̄₀)/ρ̄₀; rejects ρ₀ < c₀.
pub fn reformulate(rho0: &Field, u0: &Field, laws: &MaterialLaws) -> Result<(Field, Field)> {
    if rho0.rank() != Rank::Scalar || u0.rank() != Rank::Vector {
        return Err(Error::RankMismatch("density must be scalar and velocity a vector".into()));
    }
    if rho0.grid() != u0.grid() {
        return Err(Error::GridMismatch);
    }
    let min = rho0.component(0).iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < laws.c0 {
        return Err(Error::Hypothesis(format!("rho0 >= c0 fails (min rho0 = {min}, c0 = {})", laws.c0)));
    }
    let a0 = rho0.shift(-laws.rho_bar0).scale(1.0 / laws.rho_bar0);
    Ok((a0, u0.clone()))
}

/// F(a, u) = −(1 + a) div u.
pub fn f_source(a: &Field, u: &Field) -> Result<Field> {
    Ok(a.shift(1.0).product(&u.divergence()?)?.scale(-1.0))
}

/// Pointwise momentum source from a, ∇a, u and ∇u (entry (i, j) = ∂_j u^i):
/// G = −u·∇u − (ρ̄₀P′(ρ)/ρ)∇a + (μρ̄₀/ρ²)(∇a·∇)u + ((μ+λ)ρ̄₀/ρ²) div u ∇a
///     + (μ′ρ̄₀/ρ)((∇u)ᵀ∇a − div u ∇a).
fn g_pointwise(laws: &MaterialLaws, n: usize, a: f64, ga: &[f64], u: &[f64], jac: &[f64], out: &mut [f64]) {
    let r0 = laws.rho_bar0;
    let rho = r0 * (1.0 + a);
    let mu = laws.mu.eval(rho);
    let lam = laws.lam.eval(rho);
    let dmu = laws.mu.derivative(rho);
    let dp = laws.pressure.derivative(rho);
    let d: f64 = (0..n).map(|i| jac[i * n + i]).sum();
    let c_p = r0 * dp / rho;
    let c_mu = mu * r0 / (rho * rho);
    let c_ml = (mu + lam) * r0 / (rho * rho);
    let c_dm = dmu * r0 / rho;
    for i in 0..n {
        let mut adv = 0.0;
        let mut grad_dir = 0.0;
        let mut transp = 0.0;
        for j in 0..n {
            adv += u[j] * jac[i * n + j];
            grad_dir += ga[j] * jac[i * n + j];
            transp += jac[j * n + i] * ga[j];
        }
        out[i] = -adv - c_p * ga[i] + c_mu * grad_dir + c_ml * d * ga[i] + c_dm * (transp - d * ga[i]);
    }
}

fn gradient_spec(grid: Grid, c: &[Complex64]) -> Vec<Vec<Complex64>> {
    let lat = grid.lattice();
    (0..grid.dim())
        .map(|a| c.iter().enumerate().map(|(m, z)| z * Complex64::new(0.0, lat.kvec[m][a])).collect())
        .collect()
}

/// G(a, u) with the two-thirds rule, from spectra.
fn g_spectral(laws: &MaterialLaws, grid: Grid, a: &[Complex64], ga: &[Vec<Complex64>], u: &Coefficients) -> Coefficients {
    let n = grid.dim();
    let mut jac = Vec::with_capacity(n * n);
    for ui in u.iter() {
        jac.extend(gradient_spec(grid, ui));
    }
    let mut inputs: Vec<&[Complex64]> = vec![a];
    inputs.extend(ga.iter().map(Vec::as_slice));
    inputs.extend(u.iter().map(Vec::as_slice));
    inputs.extend(jac.iter().map(Vec::as_slice));
    eval_two_thirds(grid, &inputs, n, |x, y| {
        g_pointwise(laws, n, x[0], &x[1..1 + n], &x[1 + n..1 + 2 * n], &x[1 + 2 * n..], y)
    })
}

/// G(a, u) as a field.
pub fn g_source(a: &Field, u: &Field, laws: &MaterialLaws) -> Result<Field> {
    if a.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = a.grid();
    let ga = gradient_spec(grid, &a.spectral()[0]);
    Field::from_spectral(grid, Rank::Vector, g_spectral(laws, grid, &a.spectral()[0], &ga, u.spectral()))
}

/// Barred coefficients μ̄(ρ), λ̄(ρ) sampled on the grid.
pub fn barred_coefficients(a: &Field, laws: &MaterialLaws) -> Result<(Field, Field)> {
    let rho: Vec<f64> = a.component(0).iter().map(|x| laws.rho_bar0 * (1.0 + x)).collect();
    let mu = Field::scalar(a.grid(), rho.iter().map(|&r| laws.mu_bar(r)).collect())?;
    let lam = Field::scalar(a.grid(), rho.iter().map(|&r| laws.lam_bar(r)).collect())?;
    Ok((mu, lam))
}

/// ∂_t a = −div((1 + a)u): the transport equation with source F in
/// conservative form, so the zero mode of a never changes.
fn density_rhs(grid: Grid, a: &[Complex64], u: &Coefficients) -> Vec<Complex64> {
    let n = grid.dim();
    let lat = grid.lattice();
    let mut inputs: Vec<&[Complex64]> = vec![a];
    inputs.extend(u.iter().map(Vec::as_slice));
    let flux = eval_two_thirds(grid, &inputs, n, |x, y| {
        for i in 0..n {
            y[i] = (1.0 + x[0]) * x[1 + i];
        }
    });
    (0..grid.len())
        .map(|m| if m == 0 { ZERO } else { -(0..n).map(|i| Complex64::new(0.0, lat.kvec[m][i]) * flux[i][m]).sum::<Complex64>() })
        .collect()
}

/// Current (a, u) and time.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub a: Field,
    pub u: Field,
    pub t: f64,
}

/// Pointwise quantities behind the first two hypotheses after one step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepHealth {
    pub min_rho: f64,
    pub min_mu_bar: f64,
    pub min_nu_bar: f64,
}

fn health(a: &Field, laws: &MaterialLaws) -> StepHealth {
    let mut h = StepHealth { min_rho: f64::INFINITY, min_mu_bar: f64::INFINITY, min_nu_bar: f64::INFINITY };
    for &x in a.component(0) {
        let r = laws.rho_bar0 * (1.0 + x);
        let m = laws.mu_bar(r);
        h.min_rho = h.min_rho.min(r);
        h.min_mu_bar = h.min_mu_bar.min(m);
        h.min_nu_bar = h.min_nu_bar.min(laws.lam_bar(r) + 2.0 * m);
    }
    h
}

/// One Strang-split step: half transport step for a with u frozen, IMEX
/// momentum step with a frozen, half transport step.
pub fn step(state: &SolverState, laws: &MaterialLaws, dt: f64) -> Result<(SolverState, StepHealth)> {
    let grid = state.a.grid();
    let lim = cfl_limit(&state.u);
    if dt > lim * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, suggested: lim });
    }
    let half = |a: Vec<Complex64>, u: &Coefficients| -> Result<Vec<Complex64>> {
        let out = rk3_step(&vec![a], 0.0, 0.5 * dt, |_, x| Ok(vec![density_rhs(grid, &x[0], u)]))?;
        Ok(out.into_iter().next().expect("one component"))
    };
    let u0 = state.u.spectral().clone();
    let a_half = half(state.a.spectral()[0].clone(), &u0)?;
    let a_field = Field::from_spectral(grid, Rank::Scalar, vec![a_half.clone()])?;
    let (mu, lam) = barred_coefficients(&a_field, laws)?;
    let h = health(&a_field, laws);
    if !(h.min_rho > 0.0) {
        return Err(Error::NonFinite("density left the admissible range"));
    }
    let frozen = crate::linear::frozen(&mu, &lam);
    let ga = gradient_spec(grid, &a_half);
    let u1 = imex_step(grid, &u0, state.t, dt, frozen.mu0, frozen.nu0, |_, u| {
        let mut out = g_spectral(laws, grid, &a_half, &ga, u);
        if let Some((dm, dl)) = &frozen.var {
            let r = crate::linear::momentum_remainder(grid, dm, dl, u);
            for (o, x) in out.iter_mut().zip(r) {
                for (p, q) in o.iter_mut().zip(x) {
                    *p += q;
                }
            }
        }
        Ok(out)
    })?;
    let a1 = half(a_half, &u1)?;
    let a = Field::from_spectral(grid, Rank::Scalar, vec![a1])?;
    let u = Field::from_spectral(grid, Rank::Vector, u1)?;
    let h = health(&a, laws);
    Ok((SolverState { a, u, t: state.t + dt }, h))
}

/// a₀ⁿ = S_{n+shift} a₀ and u₀ⁿ = S_n u₀ with the smallest shift ≥ 0 for
/// which ρ̄₀(1 + a₀ⁿ) ≥ (3/4)c₀ everywhere.
pub fn mollify_data(
    a0: &Field,
    u0: &Field,
    n: i32,
    part: &DyadicPartition,
    laws: &MaterialLaws,
) -> Result<(Field, Field, i32)> {
    let top = part.j_max() + 1;
    if n < part.j_min() || n > top {
        return Err(Error::IndexOutOfRange { index: n, min: part.j_min(), max: top });
    }
    let u = part.low(u0, n)?;
    for shift in 0..=(top - n) {
        let a = part.low(a0, n + shift)?;
        if floor_ok(&a, laws) {
            return Ok((a, u, shift));
        }
    }
    Err(Error::Hypothesis(format!(
        "rho_bar0 (1 + S_(n+shift) a0) >= 3/4 c0 fails for every shift up to {} (data too rough at this resolution)",
        top - n
    )))
}

fn floor_ok(a: &Field, laws: &MaterialLaws) -> bool {
    a.component(0).iter().all(|&x| laws.rho_bar0 * (1.0 + x) >= 0.75 * laws.c0)
}

/// The constants of the linear estimates, which the analysis leaves
/// unspecified.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, rename_all = "UPPERCASE")]
pub struct ConstantSet {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for ConstantSet {
    fn default() -> Self {
        ConstantSet { c1: 1.0, c2: 1.0, c3: 1.0, c4: 1.0 }
    }
}

/// One named smallness condition lhs ≤ rhs (or < when strict).
#[derive(Clone, Debug, Serialize)]
pub struct Predicate {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub strict: bool,
    pub holds: bool,
}

impl Predicate {
    fn new(name: &str, lhs: f64, rhs: f64, strict: bool) -> Self {
        let holds = if strict { lhs < rhs } else { lhs <= rhs * (1.0 + 1e-12) };
        Predicate { name: name.into(), lhs, rhs, strict, holds }
    }
}

/// Budget constants and the predicates they are chosen to satisfy.
#[derive(Clone, Debug, Serialize)]
pub struct BudgetConstants {
    pub constants: ConstantSet,
    pub e0: f64,
    pub c0_budget: f64,
    pub a0_budget: f64,
    pub eta: f64,
    pub c1_ellipticity: f64,
    pub exponent: i32,
    pub t_star: f64,
    pub predicates: Vec<Predicate>,
}

impl BudgetConstants {
    pub fn first_failure(&self) -> Option<&Predicate> {
        self.predicates.iter().find(|p| !p.holds)
    }
}

/// Chooses η as the largest value meeting every η-condition and T* as the
/// supremum of horizons meeting the time conditions. With E₀ = 0 the
/// condition (C₀E₀+1)η ≤ E₀ is dropped (the solution is zero).
#[allow(clippy::too_many_arguments)]
pub fn budget(
    a0: &Field,
    u0: &Field,
    laws: &MaterialLaws,
    part: &DyadicPartition,
    p: f64,
    constants: ConstantSet,
    w: &WeightSequence,
) -> Result<BudgetConstants> {
    let ConstantSet { c1, c2, c3, c4 } = constants;
    if [c1, c2, c3, c4].iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidArgument(format!("budget constants must be positive: {constants:?}")));
    }
    let n = part.grid().dim() as f64;
    let na = part.block_norms(a0, p)?;
    let nu = part.block_norms(u0, p)?;
    let e0 = dyadic_sum(part.j_min(), &na, n / p, 1.0, None)? + dyadic_sum(part.j_min(), &nu, n / p - 1.0, 1.0, None)?;
    let cz = 4.0 * c1;
    let a0b = 2.0 * c2 * (1.0 + cz * e0);
    let k = (n / p).floor() as i32 + 3;
    let big = (1.0 + cz * e0).powi(k);
    let c0 = laws.c0;
    let below = 1.0 - 1e-12;
    let mut caps = vec![
        1.5f64.ln() / c1 * below,
        1.0 / (16.0 * c1 * big),
        1.0 / (6.0 * c3),
        1.0 / (6.0 * c3 * a0b * big),
        c0 / (8.0 * c4 * (1.0 + cz * e0)) * below,
    ];
    if e0 > 0.0 {
        caps.push(e0 / (cz * e0 + 1.0));
    }
    let eta = caps.into_iter().fold(f64::INFINITY, f64::min);
    let rho_hi = laws.rho_bar0 * (1.0 + cz * e0);
    let (m, v) = laws.barred_minima(0.5 * c0, rho_hi.max(0.5 * c0));
    let c1e = 0.5 * m.min(v);
    let mut preds = vec![
        Predicate::new("e^{C1 eta} < 3/2", (c1 * eta).exp(), 1.5, true),
        Predicate::new("C1 (C0 E0 + 1)^k eta <= 1/16", c1 * big * eta, 1.0 / 16.0, false),
        Predicate::new("C3 eta <= 1/6", c3 * eta, 1.0 / 6.0, false),
        Predicate::new("C3 A0 (1 + C0 E0)^k eta <= 1/6", c3 * a0b * big * eta, 1.0 / 6.0, false),
        Predicate::new("C4 (1 + C0 E0) eta < c0/8", c4 * (1.0 + cz * e0) * eta, c0 / 8.0, true),
        Predicate::new("eta > 0", 0.0, eta, true),
        Predicate::new("c1 > 0", 0.0, c1e, true),
    ];
    if e0 > 0.0 {
        preds.insert(1, Predicate::new("(C0 E0 + 1) eta <= E0", (cz * e0 + 1.0) * eta, e0, false));
    }
    // Time conditions: two explicit caps and two weighted-data conditions,
    // which are monotone in T since ω_k(T) is nondecreasing.
    let t_cap = (1.0 / (16.0 * c1 * big)).min(1.0 / (6.0 * c3 * a0b * big));
    let weighted = |t: f64| -> Result<(f64, f64)> {
        let om = block_weights(part, w, t)?;
        Ok((
            dyadic_sum(part.j_min(), &na, n / p, 1.0, Some(&om))?,
            dyadic_sum(part.j_min(), &nu, n / p - 1.0, 1.0, Some(&om))?,
        ))
    };
    let ok = |t: f64| -> Result<bool> {
        let (x, y) = weighted(t)?;
        Ok(x <= a0b / 12.0 * eta && y <= eta / (6.0 * c3))
    };
    let t_star = if ok(t_cap)? {
        t_cap
    } else {
        let (mut lo, mut hi) = (0.0, t_cap);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        lo
    };
    let (x, y) = weighted(t_star)?;
    preds.push(Predicate::new("C1 (C0 E0 + 1)^k T <= 1/16", c1 * big * t_star, 1.0 / 16.0, false));
    preds.push(Predicate::new("C3 A0 (1 + C0 E0)^k T <= 1/6", c3 * a0b * big * t_star, 1.0 / 6.0, false));
    preds.push(Predicate::new("|a0|_(B^(N/p)(omega)) <= A0 eta / 12", x, a0b / 12.0 * eta, false));
    preds.push(Predicate::new("|u0|_(B^(N/p-1)(omega)) <= eta / (6 C3)", y, eta / (6.0 * c3), false));
    preds.push(Predicate::new("T* > 0", 0.0, t_star, e0 > 0.0));
    Ok(BudgetConstants {
        constants,
        e0,
        c0_budget: cz,
        a0_budget: a0b,
        eta,
        c1_ellipticity: c1e,
        exponent: k,
        t_star,
        predicates: preds,
    })
}

/// Values behind the four bootstrap hypotheses at one time.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisStatus {
    pub t: f64,
    pub h1: bool,
    pub min_rho: f64,
    pub h2: bool,
    pub min_mu_bar: f64,
    pub min_nu_bar: f64,
    pub c1: f64,
    pub h3: bool,
    pub h3_value: f64,
    pub h3_bound: f64,
    pub h4: bool,
    pub h4_a_value: f64,
    pub h4_a_bound: f64,
    pub h4_u_value: f64,
    pub h4_u_bound: f64,
}

impl HypothesisStatus {
    pub fn healthy(&self) -> bool {
        self.h1 && self.h2 && self.h3 && self.h4
    }

    /// Realized margins against the strict targets the argument closes with:
    /// min ρ ≥ 5/8 c₀, H3 ≤ 7/8 C₀E₀, weighted a ≤ 7/8 A₀η, u-part ≤ 2/3 η.
    /// Positive means the target holds.
    pub fn margins(&self, c0: f64) -> [f64; 4] {
        [
            self.min_rho - 0.625 * c0,
            0.875 * self.h3_bound - self.h3_value,
            0.875 * self.h4_a_bound - self.h4_a_value,
            2.0 / 3.0 * self.h4_u_bound - self.h4_u_value,
        ]
    }
}

/// Settings of one scheme run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub p: f64,
    /// Rate c of the weight sequence.
    pub weight_rate: f64,
    /// Mollification level n; None runs the data as given.
    pub mollify: Option<i32>,
    pub constants: ConstantSet,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            horizon: 0.1,
            dt: 1e-3,
            samples: 20,
            p: 2.0,
            weight_rate: 1.0,
            mollify: None,
            constants: ConstantSet::default(),
        }
    }
}

/// Constants refitted from the run, and the budget they imply.
#[derive(Clone, Debug, Serialize)]
pub struct FittedConstants {
    pub constants: ConstantSet,
    pub budget: BudgetConstants,
}

/// Trace of a scheme run.
#[derive(Clone, Debug)]
pub struct SchemeRun {
    pub times: Vec<f64>,
    pub a: Vec<Field>,
    pub u: Vec<Field>,
    pub series_a: NormSeries,
    pub series_u: NormSeries,
    pub monitor: Vec<HypothesisStatus>,
    pub budget: BudgetConstants,
    pub fitted: Option<FittedConstants>,
    /// ρ̄₀(1 + mean a)·|Ω| after every step.
    pub mass: Vec<f64>,
    /// V(t) = ∫‖∇u‖_{Ḃ^{N/p}_{p,1}} at the samples.
    pub v_integral: Vec<f64>,
    /// A(t) = (1 + ‖a‖_{L̃^∞_t(Ḃ^{N/p}_{p,1})})^{[N/p]+3}.
    pub a_factor: Vec<f64>,
    pub healthy_until: f64,
    pub first_breach: Option<f64>,
    pub shift: Option<i32>,
    pub warnings: Vec<String>,
    pub dt: f64,
    pub steps: usize,
    pub config: SchemeConfig,
    pub laws: MaterialLaws,
}

impl SchemeRun {
    /// Largest relative change of the total mass over the run.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().map(|m| ((m - m0) / m0).abs()).fold(0.0, f64::max)
    }
}

/// Mollifies (optionally), integrates to the configured horizon and records
/// the hypothesis trace. Breaches mark the run unhealthy but do not stop it.
pub fn run_scheme(a0: &Field, u0: &Field, laws: &MaterialLaws, cfg: &SchemeConfig) -> Result<SchemeRun> {
    let grid = a0.grid();
    if u0.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let part = DyadicPartition::for_grid(grid)?;
    let w = WeightSequence::parabolic(cfg.weight_rate)?;
    let mut warnings: Vec<String> = laws.dimension_warning(grid.dim()).into_iter().collect();
    let budget = budget(a0, u0, laws, &part, cfg.p, cfg.constants, &w)?;
    if let Some(pred) = budget.first_failure() {
        return Err(Error::Budget(format!(
            "predicate {} fails ({:.6e} vs {:.6e})",
            pred.name, pred.lhs, pred.rhs
        )));
    }
    let (a_start, u_start, shift) = match cfg.mollify {
        Some(n) => {
            let (a, u, s) = mollify_data(a0, u0, n, &part, laws)?;
            (a, u, Some(s))
        }
        None => (a0.clone(), u0.clone(), None),
    };
    let (steps, dt, marks) = schedule(cfg.horizon, cfg.dt, cfg.samples)?;
    let vol = grid.period().powi(grid.dim() as i32);
    let mass_of = |a: &Field| laws.rho_bar0 * (1.0 + a.spectral()[0][0].re) * vol;
    let mut state = SolverState { a: a_start, u: u_start, t: 0.0 };
    let mut times = Vec::new();
    let mut a_snap = Vec::new();
    let mut u_snap = Vec::new();
    let mut series_a = NormSeries::new(cfg.p, part.j_min());
    let mut series_u = NormSeries::new(cfg.p, part.j_min());
    let mut healths = Vec::new();
    let mut mass = vec![mass_of(&state.a)];
    let mut pointwise_breach: Option<f64> = None;
    let mut h = health(&state.a, laws);
    let mut next = 0;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if next < marks.len() && marks[next] == k {
            series_a.record(&part, t, &state.a)?;
            series_u.record(&part, t, &state.u)?;
            times.push(t);
            a_snap.push(state.a.clone());
            u_snap.push(state.u.clone());
            healths.push(h);
            next += 1;
        }
        if k == steps {
            break;
        }
        let (s, hh) = step(&state, laws, dt)?;
        if (hh.min_rho < 0.5 * laws.c0 || hh.min_mu_bar < budget.c1_ellipticity || hh.min_nu_bar < budget.c1_ellipticity)
            && pointwise_breach.is_none()
        {
            pointwise_breach = Some(s.t);
        }
        state = s;
        h = hh;
        mass.push(mass_of(&state.a));
    }
    let n = grid.dim() as f64;
    let p = cfg.p;
    let vn: Vec<f64> = u_snap
        .iter()
        .map(|u| crate::linear::velocity_gradient_norm(u, &part, p, 1.0, false))
        .collect::<Result<_>>()?;
    let v_integral = cumulative_trapezoid(&times, &vn);
    let mut monitor = Vec::with_capacity(times.len());
    let mut a_factor = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let sa = series_a.truncated(t);
        let su = series_u.truncated(t);
        let a_inf = sa.chemin_lerner_norm(n / p, f64::INFINITY, 1.0)?;
        let h3v = a_inf + su.chemin_lerner_norm(n / p - 1.0, f64::INFINITY, 1.0)?;
        let om = block_weights(&part, &w, t)?;
        let h4a = sa.weighted_chemin_lerner_norm(n / p, f64::INFINITY, 1.0, &om)?;
        let h4u = if i == 0 {
            0.0
        } else {
            su.chemin_lerner_norm(n / p + 1.0, 1.0, 1.0)? + su.chemin_lerner_norm(n / p, 2.0, 1.0)?
        };
        a_factor.push((1.0 + a_inf).powi(budget.exponent));
        let hh = healths[i];
        let c1 = budget.c1_ellipticity;
        let st = HypothesisStatus {
            t,
            h1: hh.min_rho >= 0.5 * laws.c0,
            min_rho: hh.min_rho,
            h2: hh.min_mu_bar >= c1 && hh.min_nu_bar >= c1,
            min_mu_bar: hh.min_mu_bar,
            min_nu_bar: hh.min_nu_bar,
            c1,
            h3: h3v <= budget.c0_budget * budget.e0 * (1.0 + 1e-12),
            h3_value: h3v,
            h3_bound: budget.c0_budget * budget.e0,
            h4: h4a <= budget.a0_budget * budget.eta * (1.0 + 1e-12) && h4u <= budget.eta * (1.0 + 1e-12),
            h4_a_value: h4a,
            h4_a_bound: budget.a0_budget * budget.eta,
            h4_u_value: h4u,
            h4_u_bound: budget.eta,
        };
        monitor.push(st);
    }
    let first_sampled = monitor.iter().find(|m| !m.healthy()).map(|m| m.t);
    let first_breach = match (first_sampled, pointwise_breach) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let healthy_until = match first_breach {
        Some(tb) => times.iter().copied().filter(|&t| t < tb).fold(0.0, f64::max),
        None => *times.last().unwrap_or(&0.0),
    };
    if first_breach.is_some() {
        warnings.push(format!("hypotheses breached at t = {:.6e}", first_breach.unwrap_or(0.0)));
    }
    let mut run = SchemeRun {
        times,
        a: a_snap,
        u: u_snap,
        series_a,
        series_u,
        monitor,
        budget,
        fitted: None,
        mass,
        v_integral,
        a_factor,
        healthy_until,
        first_breach,
        shift,
        warnings,
        dt,
        steps,
        config: cfg.clone(),
        laws: laws.clone(),
    };
    run.fitted = fit_constants(&run, a0, u0, &part, &w).ok();
    Ok(run)
}

/// Smallest constants consistent with the run's measured norms, and the
/// budget they imply.
fn fit_constants(
    run: &SchemeRun,
    a0: &Field,
    u0: &Field,
    part: &DyadicPartition,
    w: &WeightSequence,
) -> Result<FittedConstants> {
    let b = &run.budget;
    let (e0, eta) = (b.e0, b.eta);
    let n = part.grid().dim() as f64;
    let p = run.config.p;
    let k = b.exponent;
    // C1 from ‖a‖ + ‖u‖ ≤ C1 e^{C1 V}(E0 + (C0E0+1)η) + C1 A C0E0(T+η), C0 = 4C1.
    let rhs1 = |c: f64, i: usize| {
        let cz = 4.0 * c;
        let a = (1.0 + cz * e0).powi(k);
        c * (c * run.v_integral[i]).exp() * (e0 + (cz * e0 + 1.0) * eta) + c * a * cz * e0 * (run.times[i] + eta)
    };
    let holds1 = |c: f64| run.monitor.iter().enumerate().all(|(i, m)| m.h3_value <= rhs1(c, i));
    let c1 = bisect_min(holds1);
    let om_at = |t: f64| block_weights(part, w, t);
    let mut c2 = 0.0f64;
    let mut c3 = 0.0f64;
    for (i, m) in run.monitor.iter().enumerate().skip(1) {
        let om = om_at(m.t)?;
        let a0w = dyadic_sum(part.j_min(), &part.block_norms(a0, p)?, n / p, 1.0, Some(&om))?;
        let u0w = dyadic_sum(part.j_min(), &part.block_norms(u0, p)?, n / p - 1.0, 1.0, Some(&om))?;
        let denom2 = (1.0 + 4.0 * c1 * e0) * eta;
        if denom2 > 0.0 {
            c2 = c2.max((m.h4_a_value * (-c1 * run.v_integral[i]).exp() - a0w) / denom2);
        }
        let denom3 = u0w + eta * eta + b.a0_budget * run.a_factor[i] * eta * (m.t + eta);
        if denom3 > 0.0 {
            c3 = c3.max(m.h4_u_value / denom3);
        }
    }
    // C4 from ‖F‖_{L¹_T(L^∞)} ≤ C4(1 + C0E0)η.
    let fsup: Vec<f64> = run
        .a
        .iter()
        .zip(&run.u)
        .map(|(a, u)| f_source(a, u).and_then(|f| f.lp_norm(f64::INFINITY)))
        .collect::<Result<_>>()?;
    let fl1 = trapezoid(&run.times, &fsup);
    let c4 = if eta > 0.0 { fl1 / ((1.0 + 4.0 * c1 * e0) * eta) } else { 0.0 };
    let floor = 1e-12;
    let constants = ConstantSet { c1: c1.max(floor), c2: c2.max(floor), c3: c3.max(floor), c4: c4.max(floor) };
    let budget = budget(a0, u0, &run.laws, part, p, constants, w)?;
    Ok(FittedConstants { constants, budget })
}

fn bisect_min(holds: impl Fn(f64) -> bool) -> f64 {
    if holds(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while !holds(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// sup-norm distances between the final states of runs at successive
/// mollification levels.
pub fn cauchy_family(
    a0: &Field,
    u0: &Field,
    laws: &MaterialLaws,
    cfg: &SchemeConfig,
    levels: &[i32],
) -> Result<Vec<(i32, i32, f64)>> {
    let mut finals = Vec::with_capacity(levels.len());
    for &n in levels {
        let c = SchemeConfig { mollify: Some(n), ..cfg.clone() };
        let run = run_scheme(a0, u0, laws, &c)?;
        let a = run.a.last().cloned().expect("samples");
        let u = run.u.last().cloned().expect("samples");
        finals.push((n, a, u));
    }
    let mut out = Vec::new();
    for w in finals.windows(2) {
        let da = w[1].1.sub(&w[0].1)?.lp_norm(f64::INFINITY)?;
        let du = w[1].2.sub(&w[0].2)?.lp_norm(f64::INFINITY)?;
        out.push((w[0].0, w[1].0, da + du));
    }
    Ok(out)
}

/// Divergence of ∫_ε¹ dr/(r log(e + C_T/r)) as ε ↓ 0.
#[derive(Clone, Debug, Serialize)]
pub struct OsgoodReport {
    pub c_t: f64,
    /// (ε, integral) pairs for ε = 10⁻², 10⁻⁴, …
    pub values: Vec<(f64, f64)>,
    pub increasing: bool,
}

/// ∫_ε¹ dr/(r log(e + C_T/r)), computed in x = ln(1/r).
pub fn osgood_integral(c_t: f64, eps: f64) -> f64 {
    let len = (1.0 / eps).ln();
    let panels = (len.ceil() as usize).max(1) * 8;
    composite_gauss8(0.0, len, panels, |x| {
        // log(e + C e^x) evaluated without overflow.
        let l = if c_t > 0.0 && x + c_t.ln() > 1.0 {
            let y = x + c_t.ln();
            y + (1.0 + (1.0 - y).exp()).ln()
        } else {
            (std::f64::consts::E + c_t * x.exp()).ln()
        };
        1.0 / l
    })
}

pub fn osgood_report(c_t: f64) -> OsgoodReport {
    let values: Vec<(f64, f64)> = (1..=15).map(|k| {
        let eps = 10f64.powi(-2 * k);
        (eps, osgood_integral(c_t, eps))
    }).collect();
    let increasing = values.windows(2).all(|w| w[1].1 > w[0].1);
    OsgoodReport { c_t, values, increasing }
}

/// Both sides of the logarithmic interpolation inequality
/// ‖f‖_{L̃^ρ(Ḃ^s_{p,1})} ≤ C (‖f‖_{s,∞}/ε) log(e + (‖f‖_{s−ε,∞} + ‖f‖_{s+ε,∞})/‖f‖_{s,∞}).
#[derive(Clone, Debug, Serialize)]
pub struct LogInterpolation {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

pub fn log_interpolation(series: &NormSeries, s: f64, rho: f64, eps: f64) -> Result<LogInterpolation> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Hypothesis(format!("0 < eps <= 1 fails (eps = {eps})")));
    }
    let inf = f64::INFINITY;
    let lhs = series.chemin_lerner_norm(s, rho, 1.0)?;
    let mid = series.chemin_lerner_norm(s, rho, inf)?;
    if mid == 0.0 {
        return Ok(LogInterpolation { lhs, rhs: 0.0, ratio: if lhs == 0.0 { 0.0 } else { inf } });
    }
    let lo = series.chemin_lerner_norm(s - eps, rho, inf)?;
    let hi = series.chemin_lerner_norm(s + eps, rho, inf)?;
    let rhs = mid / eps * (std::f64::consts::E + (lo + hi) / mid).ln();
    Ok(LogInterpolation { lhs, rhs, ratio: lhs / rhs })
}

/// Difference diagnostics between two runs from nearby data.
#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub p: f64,
    pub times: Vec<f64>,
    /// ‖δa(t)‖_{Ḃ⁰_{p,∞}}.
    pub da_norm: Vec<f64>,
    /// ‖δu‖_{L̃¹_t(Ḃ¹_{p,∞})}.
    pub du_norm: Vec<f64>,
    /// max over t > 0 of the δ-norms divided by their initial size, when the
    /// initial difference is nonzero.
    pub growth_factor: Option<f64>,
    pub log_interpolation: Option<LogInterpolation>,
    pub osgood: OsgoodReport,
}

/// Compares two runs sample by sample with p = N.
pub fn uniqueness_distance(r1: &SchemeRun, r2: &SchemeRun) -> Result<UniquenessReport> {
    let grid = r1.a[0].grid();
    if r2.a[0].grid() != grid || r1.times.len() != r2.times.len() || r1.times.iter().zip(&r2.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Incompatible("runs differ in grid or sample times".into()));
    }
    if r1.laws != r2.laws {
        return Err(Error::Incompatible("runs use different material laws".into()));
    }
    let part = DyadicPartition::for_grid(grid)?;
    let p = grid.dim() as f64;
    let inf = f64::INFINITY;
    let mut sa = NormSeries::new(p, part.j_min());
    let mut su = NormSeries::new(p, part.j_min());
    for (i, &t) in r1.times.iter().enumerate() {
        sa.record(&part, t, &r1.a[i].sub(&r2.a[i])?)?;
        su.record(&part, t, &r1.u[i].sub(&r2.u[i])?)?;
    }
    let da_norm = sa.besov_history(0.0, inf)?;
    let mut du_norm = vec![0.0];
    for &t in &r1.times[1..] {
        du_norm.push(su.truncated(t).chemin_lerner_norm(1.0, 1.0, inf)?);
    }
    // Initial sizes: δa in Ḃ⁰_{p,∞}, δu in Ḃ^{-1}_{p,∞}; the L̃¹ norm of δu
    // is compared with t·‖δu(0)‖_{Ḃ¹_{p,∞}}.
    let a_start = da_norm[0];
    let u_start = su.besov_history(0.0, inf)?[0];
    let growth_factor = (a_start > 0.0 || u_start > 0.0).then(|| {
        let u_hist = su.besov_history(0.0, inf).unwrap_or_default();
        let ga = if a_start > 0.0 { da_norm.iter().fold(0.0f64, |m, x| m.max(x / a_start)) } else { 0.0 };
        let gu = if u_start > 0.0 { u_hist.iter().fold(0.0f64, |m, x| m.max(x / u_start)) } else { 0.0 };
        ga.max(gu)
    });
    let horizon_series = su.clone();
    let log_interpolation = if du_norm.last().copied().unwrap_or(0.0) > 0.0 {
        Some(log_interpolation(&horizon_series, 1.0, 1.0, 1.0)?)
    } else {
        None
    };
    let c_t = horizon_series.chemin_lerner_norm(0.0, 1.0, inf)? + horizon_series.chemin_lerner_norm(2.0, 1.0, inf)?;
    Ok(UniquenessReport { p, times: r1.times.clone(), da_norm, du_norm, growth_factor, log_interpolation, osgood: osgood_report(c_t) })
}

/// Initial data description shared by configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub seed: u64,
    /// sup-norm of a₀.
    pub a_amplitude: f64,
    /// sup-norm of each component of u₀.
    pub u_amplitude: f64,
    /// Explicit wavenumbers; when empty, every nonzero wavenumber with
    /// components up to kmax is used with random amplitudes and phases.
    pub modes: Vec<Vec<i64>>,
    pub kmax: i64,
    /// Binary field files overriding the generated data.
    pub rho_file: Option<String>,
    pub u_file: Option<String>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec { seed: 7, a_amplitude: 0.01, u_amplitude: 0.01, modes: Vec::new(), kmax: 2, rho_file: None, u_file: None }
    }
}

fn random_trig(grid: Grid, rng: &mut rand_chacha::ChaCha8Rng, modes: &[Vec<i64>], amp: f64) -> Result<Field> {
    let n = grid.dim();
    let terms: Vec<(Vec<f64>, f64, f64)> = modes
        .iter()
        .map(|k| {
            let kv: Vec<f64> = (0..n).map(|a| k.get(a).copied().unwrap_or(0) as f64 * grid.frequency_unit()).collect();
            (kv, rng.gen_range(0.5..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let f = Field::from_fn(grid, |x| {
        terms.iter().map(|(k, c, ph)| c * (k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph).cos()).sum()
    })?;
    let sup = f.lp_norm(f64::INFINITY)?;
    Ok(if sup > 0.0 { f.scale(amp / sup) } else { f })
}

impl DataSpec {
    fn mode_list(&self, dim: usize) -> Vec<Vec<i64>> {
        if !self.modes.is_empty() {
            return self.modes.clone();
        }
        let k = self.kmax;
        let mut out = Vec::new();
        let total = (2 * k + 1).pow(dim as u32);
        for idx in 0..total {
            let mut r = idx;
            let mut v = vec![0i64; dim];
            for a in v.iter_mut() {
                *a = r % (2 * k + 1) - k;
                r /= 2 * k + 1;
            }
            // One representative of each ±k pair.
            if v.iter().any(|&x| x != 0) && v.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
                out.push(v);
            }
        }
        out
    }

    /// (ρ₀, u₀) on the grid.
    pub fn generate(&self, grid: Grid, laws: &MaterialLaws) -> Result<(Field, Field)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let modes = self.mode_list(grid.dim());
        let rho = match &self.rho_file {
            Some(path) => Field::read_binary(&mut std::fs::File::open(path)?)?,
            None => random_trig(grid, &mut rng, &modes, self.a_amplitude)?.shift(1.0).scale(laws.rho_bar0),
        };
        let u = match &self.u_file {
            Some(path) => Field::read_binary(&mut std::fs::File::open(path)?)?,
            None => {
                let comps = (0..grid.dim())
                    .map(|_| random_trig(grid, &mut rng, &modes, self.u_amplitude).map(|f| f.into_components().remove(0)))
                    .collect::<Result<Vec<_>>>()?;
                Field::vector(grid, comps)?
            }
        };
        if rho.grid() != grid || u.grid() != grid {
            return Err(Error::GridMismatch);
        }
        Ok((rho, u))
    }
}

/// Grid section of a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub dim: usize,
    pub resolution: usize,
    pub period: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dim: 2, resolution: 64, period: std::f64::consts::TAU }
    }
}

/// Laws section: a preset name or explicit laws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LawSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub mu: Option<Law>,
    #[serde(default)]
    pub lam: Option<Law>,
    #[serde(default)]
    pub pressure: Option<Law>,
    #[serde(default)]
    pub rho_bar0: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec { preset: Some("shallow_water".into()), mu: None, lam: None, pressure: None, rho_bar0: None, c0: None }
    }
}

impl LawSpec {
    pub fn build(&self) -> Result<MaterialLaws> {
        let mut laws = match self.preset.as_deref() {
            Some("shallow_water") => shallow_water_preset(),
            Some(other) => return Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
            None => {
                let need = |l: &Option<Law>, what: &str| {
                    l.clone().ok_or_else(|| Error::InvalidArgument(format!("laws need {what} or a preset")))
                };
                MaterialLaws {
                    name: None,
                    mu: need(&self.mu, "mu")?,
                    lam: need(&self.lam, "lam")?,
                    pressure: need(&self.pressure, "pressure")?,
                    rho_bar0: 1.0,
                    c0: 0.5,
                }
            }
        };
        if let Some(m) = &self.mu {
            laws.mu = m.clone();
        }
        if let Some(l) = &self.lam {
            laws.lam = l.clone();
        }
        if let Some(p) = &self.pressure {
            laws.pressure = p.clone();
        }
        if let Some(r) = self.rho_bar0 {
            laws.rho_bar0 = r;
        }
        if let Some(c) = self.c0 {
            laws.c0 = c;
        }
        Ok(laws)
    }
}

/// Whole solver config file (TOML).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub grid: GridSpec,
    pub laws: LawSpec,
    pub data: DataSpec,
    pub run: SchemeConfig,
}

impl SolveConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, self.grid.resolution, self.grid.period)
    }
}

/// Run manifest written next to the outputs.
#[derive(Clone, Debug, Serialize)]
pub struct SchemeManifest<'a> {
    pub kind: &'static str,
    pub dim: usize,
    pub resolution: usize,
    pub period: f64,
    pub dt: f64,
    pub steps: usize,
    pub config: &'a SchemeConfig,
    pub laws: &'a MaterialLaws,
    pub budget: &'a BudgetConstants,
    pub fitted: &'a Option<FittedConstants>,
    pub mollification_shift: Option<i32>,
    pub healthy_until: f64,
    pub first_breach: Option<f64>,
    pub mass_drift: f64,
    #[serde(rename = "V_T")]
    pub v_final: f64,
    #[serde(rename = "A_T")]
    pub a_final: f64,
    pub warnings: &'a [String],
}

impl SchemeRun {
    pub fn manifest(&self) -> SchemeManifest<'_> {
        let g = self.a[0].grid();
        SchemeManifest {
            kind: "cns",
            dim: g.dim(),
            resolution: g.resolution(),
            period: g.period(),
            dt: self.dt,
            steps: self.steps,
            config: &self.config,
            laws: &self.laws,
            budget: &self.budget,
            fitted: &self.fitted,
            mollification_shift: self.shift,
            healthy_until: self.healthy_until,
            first_breach: self.first_breach,
            mass_drift: self.mass_drift(),
            v_final: self.v_integral.last().copied().unwrap_or(0.0),
            a_final: self.a_factor.last().copied().unwrap_or(1.0),
            warnings: &self.warnings,
        }
    }

    /// manifest.json, norms_a.csv, norms_u.csv, hypotheses.csv and snapshots.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::output::write_json(&dir.join("manifest.json"), &self.manifest())?;
        crate::output::write_series(&dir.join("norms_a.csv"), &self.series_a)?;
        crate::output::write_series(&dir.join("norms_u.csv"), &self.series_u)?;
        let c0 = self.laws.c0;
        crate::output::write_rows(
            &dir.join("hypotheses.csv"),
            "t,h1,min_rho,h2,min_mu_bar,min_nu_bar,h3,h3_value,h3_bound,h4,h4_a_value,h4_a_bound,h4_u_value,h4_u_bound,margin_rho,margin_h3,margin_h4_a,margin_h4_u",
            self.monitor.iter().map(|m| {
                let b = |x: bool| if x { 1.0 } else { 0.0 };
                let mg = m.margins(c0);
                vec![
                    m.t, b(m.h1), m.min_rho, b(m.h2), m.min_mu_bar, m.min_nu_bar, b(m.h3), m.h3_value, m.h3_bound,
                    b(m.h4), m.h4_a_value, m.h4_a_bound, m.h4_u_value, m.h4_u_bound, mg[0], mg[1], mg[2], mg[3],
                ]
            }),
        )?;
        crate::output::write_snapshots(dir, "a", &self.a)?;
        crate::output::write_snapshots(dir, "u", &self.u)?;
        Ok(())
    }
}
