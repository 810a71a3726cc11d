//! Bony decomposition, product and composition laws, and commutators.
//!
//! With the low-frequency completion S_{j_min} playing the role of the block
//! below j_min, the pairs (i, j) of frequency blocks split exactly into
//! i ≤ j−2 (T_u v), j ≤ i−2 (T_v u) and |i−j| ≤ 1 (R(u, v)).

use crate::error::{Error, Result};
use crate::field::{from_padded_physical, padded_physical, Field, Rank};
use crate::partition::{dyadic_sum, DyadicPartition, NormSeries};
use crate::quadrature::{GL8_NODES, GL8_WEIGHTS};
use crate::weights::{block_weights, weighted_besov_norm, WeightSequence};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

/// uv = low_high + high_low + resonant.
#[derive(Clone, Debug)]
pub struct BonySplit {
    /// T_u v = Σ_j S_{j−1}u Δ_j v.
    pub low_high: Field,
    /// T_v u = Σ_j S_{j−1}v Δ_j u.
    pub high_low: Field,
    /// R(u, v) = Σ_j Δ_j u Δ̃_j v.
    pub resonant: Field,
}

impl BonySplit {
    pub fn sum(&self) -> Field {
        self.low_high.add(&self.high_low).and_then(|s| s.add(&self.resonant)).expect("same grid")
    }
}

fn scalar_check(part: &DyadicPartition, fields: &[&Field]) -> Result<()> {
    for f in fields {
        if f.grid() != part.grid() {
            return Err(Error::GridMismatch);
        }
        if f.rank() != Rank::Scalar {
            return Err(Error::RankMismatch("scalar fields expected".into()));
        }
    }
    Ok(())
}

/// Padded samples of S_{j_min} f followed by Δ_j f for every block.
fn extended_blocks(part: &DyadicPartition, f: &Field) -> Vec<Vec<f64>> {
    let grid = part.grid();
    let spec = &f.spectral()[0];
    let mut out = Vec::with_capacity(part.n_blocks() + 1);
    let low = part.low_symbol(part.j_min()).expect("j_min in range");
    out.push(padded_physical(grid, &spec.iter().zip(low).map(|(z, m)| z * m).collect::<Vec<_>>()));
    for j in part.indices() {
        let m = part.block_symbol(j).expect("block in range");
        out.push(padded_physical(grid, &spec.iter().zip(&m).map(|(z, m)| z * m).collect::<Vec<_>>()));
    }
    out
}

/// Bony decomposition of two scalar fields, with products formed on the
/// 3/2-padded grid.
pub fn bony_split(u: &Field, v: &Field, part: &DyadicPartition) -> Result<BonySplit> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    scalar_check(part, &[u, v])?;
    let bu = extended_blocks(part, u);
    let bv = extended_blocks(part, v);
    let n = bu.len();
    let len = bu[0].len();
    let mut t_uv = vec![0.0; len];
    let mut t_vu = vec![0.0; len];
    let mut rem = vec![0.0; len];
    let mut low_u = vec![0.0; len];
    let mut low_v = vec![0.0; len];
    for j in 0..n {
        if j >= 2 {
            for x in 0..len {
                low_u[x] += bu[j - 2][x];
                low_v[x] += bv[j - 2][x];
            }
            for x in 0..len {
                t_uv[x] += low_u[x] * bv[j][x];
                t_vu[x] += low_v[x] * bu[j][x];
            }
        }
        for i in j.saturating_sub(1)..(j + 2).min(n) {
            for x in 0..len {
                rem[x] += bu[j][x] * bv[i][x];
            }
        }
    }
    let grid = part.grid();
    let make = |d: &[f64]| Field::from_spectral(grid, Rank::Scalar, vec![from_padded_physical(grid, d)]);
    Ok(BonySplit { low_high: make(&t_uv)?, high_low: make(&t_vu)?, resonant: make(&rem)? })
}

fn require(ok: bool, condition: &str, detail: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Hypothesis(format!("{condition} fails ({detail})")))
    }
}

/// Hypothesis conditions shared by the product laws.
pub mod conditions {
    pub const S_POSITIVE: &str = "s > 0";
    pub const S1_CRITICAL: &str = "s1 <= N/p";
    pub const S2_CRITICAL: &str = "s2 <= N/p";
    pub const S2_STRICT: &str = "s2 < N/p";
    pub const S1_SUBCRITICAL: &str = "s1 <= N/p - 1";
    pub const SUM_STRICT: &str = "s1 + s2 > N max(0, 2/p - 1)";
    pub const SUM_WEAK: &str = "s1 + s2 >= N max(0, 2/p - 1)";
    pub const COMMUTATOR_RANGE: &str = "-N min(1/p, 1/p') < s <= N/p + 1";
    pub const TRANSPORT_COMMUTATOR_RANGE: &str = "-N min(1/p, 1/p') < s <= N/p";
    pub const F_VANISHES: &str = "F(0) = 0";
}

fn sum_threshold(n: f64, p: f64) -> f64 {
    n * (2.0 / p - 1.0).max(0.0)
}

const EPS: f64 = 1e-12;

/// Indices of regularity for a two-factor estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProductParams {
    pub s1: f64,
    pub s2: f64,
    pub p: f64,
}

/// Which product law a ratio refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProductLaw {
    /// ‖fg‖_{Ḃ^s} ≲ ‖f‖_{Ḃ^s}‖g‖_∞ + ‖f‖_∞‖g‖_{Ḃ^s}, s = s1 > 0.
    LinfBesov,
    /// ‖fg‖_{Ḃ^{s1+s2−N/p}} ≲ ‖f‖_{Ḃ^{s1}}‖g‖_{Ḃ^{s2}}.
    Besov,
    /// Same with r = ∞ on g and on the product.
    Endpoint,
}

impl ProductLaw {
    pub fn check(self, n: usize, prm: &ProductParams) -> Result<()> {
        use conditions::*;
        let (s1, s2, p, n) = (prm.s1, prm.s2, prm.p, n as f64);
        let crit = n / p;
        let thr = sum_threshold(n, p);
        match self {
            ProductLaw::LinfBesov => require(s1 > 0.0, S_POSITIVE, format!("s = {s1}")),
            ProductLaw::Besov => {
                require(s1 <= crit + EPS, S1_CRITICAL, format!("s1 = {s1}, N/p = {crit}"))?;
                require(s2 <= crit + EPS, S2_CRITICAL, format!("s2 = {s2}, N/p = {crit}"))?;
                require(s1 + s2 > thr, SUM_STRICT, format!("s1 + s2 = {}, threshold {thr}", s1 + s2))
            }
            ProductLaw::Endpoint => {
                require(s1 <= crit + EPS, S1_CRITICAL, format!("s1 = {s1}, N/p = {crit}"))?;
                require(s2 < crit, S2_STRICT, format!("s2 = {s2}, N/p = {crit}"))?;
                require(s1 + s2 >= thr - EPS, SUM_WEAK, format!("s1 + s2 = {}, threshold {thr}", s1 + s2))
            }
        }
    }
}

fn nonzero(x: f64, what: &str) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Degenerate(format!("{what} = {x}")))
    }
}

/// LHS/RHS of the selected product law for one pair of fields.
pub fn product_estimate_ratio(
    f: &Field,
    g: &Field,
    law: ProductLaw,
    prm: &ProductParams,
    part: &DyadicPartition,
) -> Result<f64> {
    scalar_check(part, &[f, g])?;
    let n = part.grid().dim();
    law.check(n, prm)?;
    let fg = f.product(g)?;
    let p = prm.p;
    match law {
        ProductLaw::LinfBesov => {
            let s = prm.s1;
            let rhs = part.besov_norm(f, s, p, 1.0)? * g.lp_norm(f64::INFINITY)?
                + f.lp_norm(f64::INFINITY)? * part.besov_norm(g, s, p, 1.0)?;
            Ok(part.besov_norm(&fg, s, p, 1.0)? / nonzero(rhs, "right-hand side")?)
        }
        ProductLaw::Besov | ProductLaw::Endpoint => {
            let r = if law == ProductLaw::Besov { 1.0 } else { f64::INFINITY };
            let s = prm.s1 + prm.s2 - n as f64 / p;
            let rhs = part.besov_norm(f, prm.s1, p, 1.0)? * part.besov_norm(g, prm.s2, p, r)?;
            Ok(part.besov_norm(&fg, s, p, r)? / nonzero(rhs, "right-hand side")?)
        }
    }
}

/// Piece of the Bony decomposition in a weighted paraproduct estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Piece {
    /// T_g f: needs s2 ≤ N/p.
    Tgf,
    /// T_f g: needs s1 ≤ N/p − 1.
    Tfg,
    /// R(f, g): needs s1 + s2 > N max(0, 2/p − 1).
    R,
}

impl Piece {
    pub fn check(self, n: usize, prm: &ProductParams) -> Result<()> {
        use conditions::*;
        let crit = n as f64 / prm.p;
        match self {
            Piece::Tgf => require(prm.s2 <= crit + EPS, S2_CRITICAL, format!("s2 = {}, N/p = {crit}", prm.s2)),
            Piece::Tfg => require(
                prm.s1 <= crit - 1.0 + EPS,
                S1_SUBCRITICAL,
                format!("s1 = {}, N/p - 1 = {}", prm.s1, crit - 1.0),
            ),
            Piece::R => {
                let thr = sum_threshold(n as f64, prm.p);
                require(prm.s1 + prm.s2 > thr, SUM_STRICT, format!("s1 + s2 = {}, threshold {thr}", prm.s1 + prm.s2))
            }
        }
    }

    fn select(self, split: &BonySplit) -> &Field {
        match self {
            // bony_split(f, g): low_high = T_f g, high_low = T_g f.
            Piece::Tgf => &split.high_low,
            Piece::Tfg => &split.low_high,
            Piece::R => &split.resonant,
        }
    }
}

/// ‖piece‖_{Ḃ^{s1+s2−N/p}(ω)} / (‖f‖_{Ḃ^{s1}(ω)} ‖g‖_{Ḃ^{s2}}), weights at horizon T.
#[allow(clippy::too_many_arguments)]
pub fn weighted_paraproduct_ratio(
    f: &Field,
    g: &Field,
    prm: &ProductParams,
    w: &WeightSequence,
    horizon: f64,
    part: &DyadicPartition,
    which: Piece,
) -> Result<f64> {
    scalar_check(part, &[f, g])?;
    let n = part.grid().dim();
    which.check(n, prm)?;
    let split = bony_split(f, g, part)?;
    let s = prm.s1 + prm.s2 - n as f64 / prm.p;
    let lhs = weighted_besov_norm(part, which.select(&split), s, prm.p, 1.0, w, horizon)?;
    let rhs = weighted_besov_norm(part, f, prm.s1, prm.p, 1.0, w, horizon)? * part.besov_norm(g, prm.s2, prm.p, 1.0)?;
    Ok(lhs / nonzero(rhs, "right-hand side")?)
}

/// Time exponents with 1/q = 1/q1 + 1/q2.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeExponents {
    pub q1: f64,
    pub q2: f64,
}

impl TimeExponents {
    pub fn q(&self) -> f64 {
        1.0 / (1.0 / self.q1 + 1.0 / self.q2)
    }
}

/// Weighted product law in Chemin-Lerner spaces:
/// ‖fg‖_{L̃^q_T(Ḃ^{s1+s2−N/p}_{p,r}(ω))} / (‖f‖_{L̃^{q1}_T(Ḃ^{s1}_{p,1}(ω))} ‖g‖_{L̃^{q2}_T(Ḃ^{s2}_{p,r})}),
/// with r = 1, or r = ∞ for the endpoint version.
#[allow(clippy::too_many_arguments)]
pub fn weighted_product_time_ratio(
    times: &[f64],
    fs: &[Field],
    gs: &[Field],
    prm: &ProductParams,
    qe: TimeExponents,
    w: &WeightSequence,
    part: &DyadicPartition,
    endpoint: bool,
) -> Result<f64> {
    use conditions::*;
    let n = part.grid().dim() as f64;
    let crit = n / prm.p;
    require(prm.s1 <= crit - 1.0 + EPS, S1_SUBCRITICAL, format!("s1 = {}, N/p - 1 = {}", prm.s1, crit - 1.0))?;
    let thr = sum_threshold(n, prm.p);
    if endpoint {
        require(prm.s2 < crit, S2_STRICT, format!("s2 = {}, N/p = {crit}", prm.s2))?;
        require(prm.s1 + prm.s2 >= thr - EPS, SUM_WEAK, format!("s1 + s2 = {}, threshold {thr}", prm.s1 + prm.s2))?;
    } else {
        require(prm.s2 <= crit + EPS, S2_CRITICAL, format!("s2 = {}, N/p = {crit}", prm.s2))?;
        require(prm.s1 + prm.s2 > thr, SUM_STRICT, format!("s1 + s2 = {}, threshold {thr}", prm.s1 + prm.s2))?;
    }
    let horizon = *times.last().ok_or_else(|| Error::Degenerate("no samples".into()))?;
    let products = fs.iter().zip(gs).map(|(f, g)| f.product(g)).collect::<Result<Vec<_>>>()?;
    let sf = NormSeries::from_fields(part, prm.p, times, fs)?;
    let sg = NormSeries::from_fields(part, prm.p, times, gs)?;
    let sp = NormSeries::from_fields(part, prm.p, times, &products)?;
    let om = block_weights(part, w, horizon)?;
    let r = if endpoint { f64::INFINITY } else { 1.0 };
    let s = prm.s1 + prm.s2 - n / prm.p;
    let lhs = sp.weighted_chemin_lerner_norm(s, qe.q(), r, &om)?;
    let rhs = sf.weighted_chemin_lerner_norm(prm.s1, qe.q1, 1.0, &om)? * sg.chemin_lerner_norm(prm.s2, qe.q2, r)?;
    Ok(lhs / nonzero(rhs, "right-hand side")?)
}

/// [Δ_j, f]∇g = Δ_j(f∇g) − f Δ_j ∇g for scalar f, g (vector result).
pub fn commutator(j: i32, f: &Field, g: &Field, part: &DyadicPartition) -> Result<Field> {
    scalar_check(part, &[f, g])?;
    let grad = g.gradient()?;
    let a = part.delta(&f.product(&grad)?, j)?;
    let b = f.product(&part.delta(&grad, j)?)?;
    a.sub(&b)
}

/// div [Δ_j, f]∇g.
pub fn commutator_div(j: i32, f: &Field, g: &Field, part: &DyadicPartition) -> Result<Field> {
    commutator(j, f, g, part)?.divergence()
}

/// Σ_j 2^{j(s−1)}‖div[Δ_j, f]∇g‖_p / (‖f‖_{Ḃ^{N/p+1}_{p,1}} ‖g‖_{Ḃ^s_{p,1}}).
pub fn commutator_ratio(f: &Field, g: &Field, s: f64, p: f64, part: &DyadicPartition) -> Result<f64> {
    scalar_check(part, &[f, g])?;
    let n = part.grid().dim() as f64;
    let lo = -n * (1.0 / p).min(1.0 - 1.0 / p);
    require(s > lo && s <= n / p + 1.0 + EPS, conditions::COMMUTATOR_RANGE, format!("s = {s}"))?;
    let grad = g.gradient()?;
    let fgrad = f.product(&grad)?;
    let mut blocks = Vec::with_capacity(part.n_blocks());
    for j in part.indices() {
        let c = part.delta(&fgrad, j)?.sub(&f.product(&part.delta(&grad, j)?)?)?;
        blocks.push(c.divergence()?.lp_norm(p)?);
    }
    let lhs = dyadic_sum(part.j_min(), &blocks, s - 1.0, 1.0, None)?;
    let rhs = part.besov_norm(f, n / p + 1.0, p, 1.0)? * part.besov_norm(g, s, p, 1.0)?;
    Ok(lhs / nonzero(rhs, "right-hand side")?)
}

/// [v, Δ_j]·∇f = v·∇Δ_j f − Δ_j(v·∇f) for a vector v and scalar f.
pub fn transport_commutator(j: i32, v: &Field, f: &Field, part: &DyadicPartition) -> Result<Field> {
    let vgf = advect(v, f)?;
    let a = advect(v, &part.delta(f, j)?)?;
    a.sub(&part.delta(&vgf, j)?)
}

/// v·∇f with dealiased products.
pub fn advect(v: &Field, f: &Field) -> Result<Field> {
    if v.rank() != Rank::Vector || f.rank() != Rank::Scalar {
        return Err(Error::RankMismatch("advect needs a vector velocity and a scalar".into()));
    }
    let grad = f.gradient()?;
    let mut acc = v.component_field(0).product(&grad.component_field(0))?;
    for a in 1..v.n_components() {
        acc = acc.add(&v.component_field(a).product(&grad.component_field(a))?)?;
    }
    Ok(acc)
}

/// Σ_j ω_j(T) 2^{js}‖[v, Δ_j]·∇f‖_p / (‖v‖_{Ḃ^{N/p+1}_{p,1}} ‖f‖_{Ḃ^s_{p,1}(ω)}).
#[allow(clippy::too_many_arguments)]
pub fn transport_commutator_ratio(
    v: &Field,
    f: &Field,
    s: f64,
    p: f64,
    w: &WeightSequence,
    horizon: f64,
    part: &DyadicPartition,
) -> Result<f64> {
    let n = part.grid().dim() as f64;
    let lo = -n * (1.0 / p).min(1.0 - 1.0 / p);
    require(s > lo && s <= n / p + EPS, conditions::TRANSPORT_COMMUTATOR_RANGE, format!("s = {s}"))?;
    let vgf = advect(v, f)?;
    let mut blocks = Vec::with_capacity(part.n_blocks());
    for j in part.indices() {
        let c = advect(v, &part.delta(f, j)?)?.sub(&part.delta(&vgf, j)?)?;
        blocks.push(c.lp_norm(p)?);
    }
    let om = block_weights(part, w, horizon)?;
    let lhs = dyadic_sum(part.j_min(), &blocks, s, 1.0, Some(&om))?;
    let vn: f64 = (0..v.n_components())
        .map(|a| part.besov_norm(&v.component_field(a), n / p + 1.0, p, 1.0))
        .sum::<Result<f64>>()?;
    let rhs = vn * weighted_besov_norm(part, f, s, p, 1.0, w, horizon)?;
    Ok(lhs / nonzero(rhs, "right-hand side")?)
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Smooth map F with F(0) = 0 and its derivative.
#[derive(Clone)]
pub struct ComposeMap {
    name: String,
    f: RealFn,
    df: RealFn,
}

impl fmt::Debug for ComposeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComposeMap({})", self.name)
    }
}

impl ComposeMap {
    /// Map with an analytic derivative.
    pub fn new(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let v0 = f(0.0);
        if v0 != 0.0 {
            return Err(Error::Hypothesis(format!("{} fails (F(0) = {v0})", conditions::F_VANISHES)));
        }
        Ok(ComposeMap { name: name.into(), f: Arc::new(f), df: Arc::new(df) })
    }

    /// Map whose derivative is approximated by central differences.
    pub fn from_fn(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let f: RealFn = Arc::new(f);
        let g = f.clone();
        Self::new(name, move |x| f(x), move |x| {
            let h = 1e-5 * (1.0 + x.abs());
            (g(x + h) - g(x - h)) / (2.0 * h)
        })
    }

    /// Σ_{k ≥ 1} c_k x^k.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c: Vec<f64> = coeffs.to_vec();
        let d: Vec<f64> = coeffs.iter().enumerate().map(|(k, a)| (k + 1) as f64 * a).collect();
        let f = move |x: f64| c.iter().rev().fold(0.0, |acc, a| (acc + a) * x);
        let df = move |x: f64| d.iter().rev().fold(0.0, |acc, a| acc * x + a);
        ComposeMap { name: format!("poly{coeffs:?}"), f: Arc::new(f), df: Arc::new(df) }
    }

    pub fn sine() -> Self {
        ComposeMap { name: "sin".into(), f: Arc::new(f64::sin), df: Arc::new(f64::cos) }
    }

    /// x ↦ x / (1 + x), the shape of the density-dependent coefficients.
    pub fn rational() -> Self {
        ComposeMap {
            name: "x/(1+x)".into(),
            f: Arc::new(|x| x / (1.0 + x)),
            df: Arc::new(|x| 1.0 / ((1.0 + x) * (1.0 + x))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    pub fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }
}

/// F(f) evaluated on the 3/2-padded grid.
pub fn compose(map: &ComposeMap, f: &Field) -> Field {
    let g = map.f.clone();
    f.compose(move |x| g(x))
}

/// ‖F(f)‖_{Ḃ^s_{p,1}(ω)} / ((1 + ‖f‖_∞)^{[s]+2} ‖f‖_{Ḃ^s_{p,1}(ω)}); without
/// weights the plain Besov norms are used.
pub fn compose_ratio(
    map: &ComposeMap,
    f: &Field,
    s: f64,
    p: f64,
    part: &DyadicPartition,
    weights: Option<(&WeightSequence, f64)>,
) -> Result<f64> {
    require(s > 0.0, conditions::S_POSITIVE, format!("s = {s}"))?;
    let ff = compose(map, f);
    let norm = |x: &Field| match weights {
        Some((w, t)) => weighted_besov_norm(part, x, s, p, 1.0, w, t),
        None => part.besov_norm(x, s, p, 1.0),
    };
    let amp = (1.0 + f.lp_norm(f64::INFINITY)?).powi(s.floor() as i32 + 2);
    Ok(norm(&ff)? / nonzero(amp * norm(f)?, "right-hand side")?)
}

/// Time version: ‖F(f)‖_{L̃^q_T(Ḃ^s(ω))} / ((1 + ‖f‖_{L^∞_T L^∞})^{[s]+2} ‖f‖_{L̃^q_T(Ḃ^s(ω))}).
#[allow(clippy::too_many_arguments)]
pub fn compose_time_ratio(
    map: &ComposeMap,
    times: &[f64],
    fs: &[Field],
    s: f64,
    p: f64,
    q: f64,
    w: &WeightSequence,
    part: &DyadicPartition,
) -> Result<f64> {
    require(s > 0.0, conditions::S_POSITIVE, format!("s = {s}"))?;
    let horizon = *times.last().ok_or_else(|| Error::Degenerate("no samples".into()))?;
    let composed: Vec<Field> = fs.iter().map(|f| compose(map, f)).collect();
    let om = block_weights(part, w, horizon)?;
    let lhs = NormSeries::from_fields(part, p, times, &composed)?.weighted_chemin_lerner_norm(s, q, 1.0, &om)?;
    let base = NormSeries::from_fields(part, p, times, fs)?.weighted_chemin_lerner_norm(s, q, 1.0, &om)?;
    let sup = fs.iter().map(|f| f.lp_norm(f64::INFINITY)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let amp = (1.0 + sup).powi(s.floor() as i32 + 2);
    Ok(lhs / nonzero(amp * base, "right-hand side")?)
}

/// m_{j}(f) = ∫₀¹ F'(S_j f + τΔ_j f) dτ by 8-point Gauss-Legendre, pointwise.
pub fn telescoping_factor(map: &ComposeMap, low: &[f64], block: &[f64]) -> Vec<f64> {
    low.iter()
        .zip(block)
        .map(|(&a, &b)| {
            GL8_NODES
                .iter()
                .zip(GL8_WEIGHTS)
                .map(|(x, wt)| 0.5 * wt * map.derivative(a + 0.5 * (x + 1.0) * b))
                .sum()
        })
        .collect()
}

/// Largest pointwise defect of F(f) = F(S_{j_min}f) + Σ_j Δ_j f m_j(f) on the grid.
pub fn telescoping_residual(map: &ComposeMap, f: &Field, part: &DyadicPartition) -> Result<f64> {
    scalar_check(part, &[f])?;
    let full: Vec<f64> = f.component(0).iter().map(|&x| map.eval(x)).collect();
    let low0 = part.low(f, part.j_min())?;
    let mut acc: Vec<f64> = low0.component(0).iter().map(|&x| map.eval(x)).collect();
    for j in part.indices() {
        let low = part.low(f, j)?;
        let block = part.delta(f, j)?;
        let m = telescoping_factor(map, low.component(0), block.component(0));
        for (i, a) in acc.iter_mut().enumerate() {
            *a += block.component(0)[i] * m[i];
        }
    }
    Ok(full.iter().zip(&acc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}
