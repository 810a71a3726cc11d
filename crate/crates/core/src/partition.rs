//! Dyadic partition of unity, frequency blocks Δ_j and low-pass S_j, Besov
//! and Chemin-Lerner norms, and Bernstein ratios.
//!
//! The radial bump is φ(ξ) = θ(ξ/2) − θ(ξ), where θ equals 1 on |ξ| ≤ 3/4,
//! vanishes for |ξ| ≥ 4/3 and is a normalized primitive of the mollifier
//! exp(−1/(1−x²)) in between. Hence Σ_{j ≤ J} φ(2^{-j}ξ) = θ(2^{-J-1}ξ), and
//! S_j = θ(2^{-j}D) contains the zero mode and everything below the
//! resolved range.

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::quadrature::{gauss8, trapezoid};
use serde::Serialize;
use std::io::Write;
use std::sync::OnceLock;

const INNER: f64 = 0.75;
const OUTER: f64 = 4.0 / 3.0;
const TABLE_PANELS: usize = 2048;

fn mollifier(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// Cumulative integral of the mollifier at the panel nodes of [-1, 1].
fn mollifier_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let h = 2.0 / TABLE_PANELS as f64;
        let mut acc = vec![0.0; TABLE_PANELS + 1];
        for i in 0..TABLE_PANELS {
            let a = -1.0 + i as f64 * h;
            acc[i + 1] = acc[i] + gauss8(a, a + h, mollifier);
        }
        acc
    })
}

/// Normalized primitive of the mollifier: 0 at -1, 1 at 1.
fn mollifier_cdf(y: f64) -> f64 {
    if y <= -1.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    let table = mollifier_table();
    let h = 2.0 / TABLE_PANELS as f64;
    let i = (((y + 1.0) / h).floor() as usize).min(TABLE_PANELS - 1);
    let a = -1.0 + i as f64 * h;
    (table[i] + gauss8(a, y, mollifier)) / table[TABLE_PANELS]
}

/// Smooth radial plateau: 1 on r ≤ 3/4, 0 on r ≥ 4/3.
pub fn theta(r: f64) -> f64 {
    if r <= INNER {
        1.0
    } else if r >= OUTER {
        0.0
    } else {
        let s = (r - INNER) / (OUTER - INNER);
        1.0 - mollifier_cdf(2.0 * s - 1.0)
    }
}

/// Annular bump φ(r) = θ(r/2) − θ(r), supported in 3/4 < r < 8/3.
pub fn phi(r: f64) -> f64 {
    theta(0.5 * r) - theta(r)
}

/// Partition adapted to one grid, with blocks j_min..=j_max.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    grid: Grid,
    j_min: i32,
    j_max: i32,
    /// θ(2^{-j}|ξ|) for j = j_min..=j_max+1.
    plateaus: Vec<Vec<f64>>,
}

impl DyadicPartition {
    /// j_max = ⌈log₂ k_Nyquist⌉ + 1 and j_min = −margin.
    pub fn build(grid: Grid, margin: u32) -> Result<Self> {
        let j_max = grid.nyquist_frequency().log2().ceil() as i32 + 1;
        let j_min = -(margin as i32);
        if j_max - j_min + 1 < 3 {
            return Err(Error::InvalidGrid(format!(
                "only {} dyadic shells fit between {} and {}",
                j_max - j_min + 1,
                j_min,
                j_max
            )));
        }
        let xi = grid.frequency_magnitudes();
        let plateaus = (j_min..=j_max + 1)
            .map(|j| {
                let s = 2f64.powi(-j);
                xi.iter().map(|&r| theta(s * r)).collect()
            })
            .collect();
        Ok(DyadicPartition { grid, j_min, j_max, plateaus })
    }

    /// Smallest margin for which every nonzero mode lies in the telescoped
    /// range, so that the blocks reconstruct f minus its mean.
    pub fn covering_margin(grid: Grid) -> u32 {
        let mut margin = 0u32;
        while 2f64.powi(-(margin as i32)) * OUTER > grid.frequency_unit() {
            margin += 1;
        }
        margin
    }

    /// Partition with the covering margin.
    pub fn for_grid(grid: Grid) -> Result<Self> {
        Self::build(grid, Self::covering_margin(grid))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn j_min(&self) -> i32 {
        self.j_min
    }
    pub fn j_max(&self) -> i32 {
        self.j_max
    }
    pub fn n_blocks(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }
    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    fn check(&self, j: i32, hi: i32) -> Result<()> {
        if j < self.j_min || j > hi {
            return Err(Error::IndexOutOfRange { index: j, min: self.j_min, max: hi });
        }
        Ok(())
    }

    fn check_grid(&self, f: &Field) -> Result<()> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// φ(2^{-j}|ξ|) on the lattice.
    pub fn block_symbol(&self, j: i32) -> Result<Vec<f64>> {
        self.check(j, self.j_max)?;
        let i = (j - self.j_min) as usize;
        Ok(self.plateaus[i + 1].iter().zip(&self.plateaus[i]).map(|(a, b)| a - b).collect())
    }

    /// θ(2^{-j}|ξ|) on the lattice, for j in j_min..=j_max+1.
    pub fn low_symbol(&self, j: i32) -> Result<&[f64]> {
        self.check(j, self.j_max + 1)?;
        Ok(&self.plateaus[(j - self.j_min) as usize])
    }

    /// Δ_j f.
    pub fn delta(&self, f: &Field, j: i32) -> Result<Field> {
        self.check_grid(f)?;
        let m = self.block_symbol(j)?;
        Ok(f.multiplier(|i| m[i]))
    }

    /// S_j f = Σ_{k ≤ j−1} Δ_k f with low-frequency completion; j may be
    /// j_max + 1, where S_j is the identity.
    pub fn low(&self, f: &Field, j: i32) -> Result<Field> {
        self.check_grid(f)?;
        let m = self.low_symbol(j)?;
        Ok(f.multiplier(|i| m[i]))
    }

    /// All blocks Δ_{j_min}..Δ_{j_max}.
    pub fn blocks(&self, f: &Field) -> Result<Vec<Field>> {
        self.indices().map(|j| self.delta(f, j)).collect()
    }

    /// ‖Δ_j f‖_p for every block.
    pub fn block_norms(&self, f: &Field, p: f64) -> Result<Vec<f64>> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p));
        }
        self.indices().map(|j| self.delta(f, j)?.lp_norm(p)).collect()
    }

    /// Homogeneous Besov norm over the resolved range (the zero mode never
    /// enters a block).
    pub fn besov_norm(&self, f: &Field, s: f64, p: f64, r: f64) -> Result<f64> {
        let b = self.block_norms(f, p)?;
        dyadic_sum(self.j_min, &b, s, r, None)
    }

    /// Largest |Σ_j φ(2^{-j}ξ) − 1| over nonzero modes in the telescoped range.
    pub fn partition_defect(&self) -> f64 {
        let xi = self.grid.frequency_magnitudes();
        let lo = 2f64.powi(self.j_min) * OUTER;
        let mut worst: f64 = 0.0;
        for (i, &r) in xi.iter().enumerate() {
            if r == 0.0 || r < lo {
                continue;
            }
            let mut sum = 0.0;
            for j in self.indices() {
                let k = (j - self.j_min) as usize;
                sum += self.plateaus[k + 1][i] - self.plateaus[k][i];
            }
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }

    /// ‖∂^γ f‖_q / (2^{j|γ| + jN(1/p − 1/q)} ‖f‖_p).
    pub fn bernstein_ratio(&self, f: &Field, gamma: &[usize], p: f64, q: f64, j: i32) -> Result<f64> {
        self.check_grid(f)?;
        let base = f.lp_norm(p)?;
        if base == 0.0 {
            return Err(Error::Degenerate("‖f‖_p = 0 in Bernstein ratio".into()));
        }
        let top = f.derivative(gamma)?.lp_norm(q)?;
        let order: usize = gamma.iter().sum();
        let n = self.grid.dim() as f64;
        let expo = j as f64 * order as f64 + j as f64 * n * (1.0 / p - 1.0 / q);
        Ok(top / (2f64.powf(expo) * base))
    }

    /// ‖f‖_p / (2^{-jm} max_{|β| = m} ‖∂^β f‖_p), bounded for annulus-supported f.
    pub fn reverse_bernstein_ratio(&self, f: &Field, order: usize, p: f64, j: i32) -> Result<f64> {
        self.check_grid(f)?;
        let mut best: f64 = 0.0;
        for beta in multi_indices(self.grid.dim(), order) {
            best = best.max(f.derivative(&beta)?.lp_norm(p)?);
        }
        if best == 0.0 {
            return Err(Error::Degenerate("all derivatives vanish".into()));
        }
        Ok(f.lp_norm(p)? / (2f64.powi(-j * order as i32) * best))
    }
}

/// All multi-indices of a given order in `dim` variables.
pub fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return vec![vec![order]];
    }
    let mut out = Vec::new();
    for first in 0..=order {
        for mut rest in multi_indices(dim - 1, order - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// ℓ^r sum of 2^{js} w_j b_j over j = j_min, j_min + 1, ...
pub fn dyadic_sum(j_min: i32, blocks: &[f64], s: f64, r: f64, weights: Option<&[f64]>) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::InvalidExponent(r));
    }
    let terms = blocks.iter().enumerate().map(|(i, b)| {
        let w = weights.map_or(1.0, |w| w[i]);
        2f64.powf((j_min + i as i32) as f64 * s) * w * b
    });
    Ok(if r.is_infinite() {
        terms.fold(0.0, f64::max)
    } else if r == 1.0 {
        terms.sum()
    } else {
        terms.map(|t| t.powf(r)).sum::<f64>().powf(1.0 / r)
    })
}

/// Time-indexed record of block norms ‖Δ_k f(t)‖_p.
#[derive(Clone, Debug, Serialize)]
pub struct NormSeries {
    pub p: f64,
    pub j_min: i32,
    pub times: Vec<f64>,
    /// blocks[i][k] = ‖Δ_{j_min + k} f(times[i])‖_p.
    pub blocks: Vec<Vec<f64>>,
}

/// Summary of one Chemin-Lerner evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct NormSummary {
    pub s: f64,
    pub p: f64,
    pub r: f64,
    pub q: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub value: f64,
}

impl NormSeries {
    pub fn new(p: f64, j_min: i32) -> Self {
        NormSeries { p, j_min, times: Vec::new(), blocks: Vec::new() }
    }

    pub fn push(&mut self, t: f64, blocks: Vec<f64>) {
        self.times.push(t);
        self.blocks.push(blocks);
    }

    /// Appends the block norms of `f` at time `t`.
    pub fn record(&mut self, part: &DyadicPartition, t: f64, f: &Field) -> Result<()> {
        let b = part.block_norms(f, self.p)?;
        self.push(t, b);
        Ok(())
    }

    pub fn from_fields(part: &DyadicPartition, p: f64, times: &[f64], fields: &[Field]) -> Result<Self> {
        let mut s = NormSeries::new(p, part.j_min());
        for (t, f) in times.iter().zip(fields) {
            s.record(part, *t, f)?;
        }
        Ok(s)
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    /// Samples with t ≤ horizon, linearly interpolating the end point.
    pub fn truncated(&self, horizon: f64) -> NormSeries {
        let mut out = NormSeries::new(self.p, self.j_min);
        for (i, &t) in self.times.iter().enumerate() {
            if t <= horizon {
                out.push(t, self.blocks[i].clone());
            } else {
                if i > 0 && self.times[i - 1] < horizon {
                    let t0 = self.times[i - 1];
                    let w = (horizon - t0) / (t - t0);
                    let b = self.blocks[i - 1]
                        .iter()
                        .zip(&self.blocks[i])
                        .map(|(a, c)| (1.0 - w) * a + w * c)
                        .collect();
                    out.push(horizon, b);
                }
                break;
            }
        }
        out
    }

    /// Per-block L^q norm in time (trapezoidal for finite q).
    pub fn time_norms(&self, q: f64) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::Degenerate("empty norm series".into()));
        }
        if q.is_nan() || q < 1.0 {
            return Err(Error::InvalidExponent(q));
        }
        Ok((0..self.n_blocks())
            .map(|k| {
                let col: Vec<f64> = self.blocks.iter().map(|b| b[k]).collect();
                if q.is_infinite() {
                    col.iter().fold(0.0, |m: f64, x| m.max(*x))
                } else {
                    let pw: Vec<f64> = col.iter().map(|x| x.powf(q)).collect();
                    trapezoid(&self.times, &pw).powf(1.0 / q)
                }
            })
            .collect())
    }

    /// ‖f‖_{L̃^q_T(Ḃ^s_{p,r})} over the stored samples.
    pub fn chemin_lerner_norm(&self, s: f64, q: f64, r: f64) -> Result<f64> {
        dyadic_sum(self.j_min, &self.time_norms(q)?, s, r, None)
    }

    /// Chemin-Lerner norm with an extra per-block weight.
    pub fn weighted_chemin_lerner_norm(&self, s: f64, q: f64, r: f64, weights: &[f64]) -> Result<f64> {
        dyadic_sum(self.j_min, &self.time_norms(q)?, s, r, Some(weights))
    }

    /// Besov norm at each stored time.
    pub fn besov_history(&self, s: f64, r: f64) -> Result<Vec<f64>> {
        self.blocks.iter().map(|b| dyadic_sum(self.j_min, b, s, r, None)).collect()
    }

    /// JSON-ready summary of one Chemin-Lerner norm.
    pub fn summary(&self, s: f64, q: f64, r: f64) -> Result<NormSummary> {
        Ok(NormSummary { s, p: self.p, r, q, horizon: self.horizon(), value: self.chemin_lerner_norm(s, q, r)? })
    }

    /// CSV with columns t, k, block_norm.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "t,k,block_norm")?;
        for (t, b) in self.times.iter().zip(&self.blocks) {
            for (i, v) in b.iter().enumerate() {
                writeln!(w, "{:e},{},{:e}", t, self.j_min + i as i32, v)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rank;
    use proptest::prelude::*;

    fn grid(m: usize) -> Grid {
        Grid::periodic(2, m).unwrap()
    }

    fn rough_field(g: Grid, seed: u64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::scalar(g, data).unwrap()
    }

    #[test]
    fn plateau_shape() {
        assert_eq!(theta(0.0), 1.0);
        assert_eq!(theta(0.75), 1.0);
        assert_eq!(theta(4.0 / 3.0), 0.0);
        assert!((theta(0.5 * (0.75 + 4.0 / 3.0)) - 0.5).abs() < 1e-14);
        let mut last = 1.0;
        for i in 0..400 {
            let v = theta(0.7 + i as f64 * 0.0018);
            assert!(v <= last);
            last = v;
        }
        assert_eq!(phi(0.75), 0.0);
        assert_eq!(phi(8.0 / 3.0), 0.0);
        assert!(phi(1.5) > 0.0);
    }

    #[test]
    fn mollifier_table_matches_fine_quadrature() {
        // Independent oracle: composite midpoint rule with many panels.
        let n = 400_000;
        let h = 2.0 / n as f64;
        let total: f64 = (0..n).map(|i| mollifier(-1.0 + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        let half: f64 = (0..n / 2).map(|i| mollifier(-1.0 + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        assert!((mollifier_cdf(0.0) - half / total).abs() < 1e-9);
        assert!((mollifier_table()[TABLE_PANELS] - total).abs() < 1e-9);
    }

    #[test]
    fn ranges_and_errors() {
        let p = DyadicPartition::build(grid(128), 1).unwrap();
        assert_eq!((p.j_min(), p.j_max()), (-1, 7));
        assert_eq!(DyadicPartition::covering_margin(grid(16)), 1);
        let f = rough_field(grid(128), 1);
        assert!(matches!(p.delta(&f, 8), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(p.delta(&f, -2), Err(Error::IndexOutOfRange { .. })));
        let other = rough_field(grid(64), 1);
        assert!(matches!(p.delta(&other, 0), Err(Error::GridMismatch)));
        let small = Grid::new(1, 8, 64.0).unwrap();
        assert!(DyadicPartition::build(small, 0).is_err());
    }

    #[test]
    fn partition_of_unity() {
        let p = DyadicPartition::for_grid(grid(128)).unwrap();
        assert!(p.partition_defect() < 1e-12);
    }

    #[test]
    fn reconstruction_and_almost_orthogonality() {
        let g = grid(32);
        let p = DyadicPartition::for_grid(g).unwrap();
        let f = rough_field(g, 7);
        let mut sum = Field::zeros(g, Rank::Scalar).shift(f.mean()[0]);
        for b in p.blocks(&f).unwrap() {
            sum = sum.add(&b).unwrap();
        }
        assert!(sum.sub(&f).unwrap().lp_norm(2.0).unwrap() < 1e-12 * f.lp_norm(2.0).unwrap());
        for j in p.indices() {
            for k in p.indices() {
                if (j - k).abs() >= 2 {
                    let dd = p.delta(&p.delta(&f, k).unwrap(), j).unwrap();
                    assert_eq!(dd.lp_norm(f64::INFINITY).unwrap(), 0.0);
                }
            }
        }
        // S_{j+1} − S_j = Δ_j
        let d = p.low(&f, 3).unwrap().sub(&p.low(&f, 2).unwrap()).unwrap();
        assert!(d.sub(&p.delta(&f, 2).unwrap()).unwrap().lp_norm(2.0).unwrap() < 1e-14);
        // S_{j_max+1} is the identity
        assert!(p.low(&f, p.j_max() + 1).unwrap().sub(&f).unwrap().lp_norm(2.0).unwrap() < 1e-13);
    }

    #[test]
    fn single_mode_besov_norm() {
        // cos(5x₁) sits in blocks j with φ(5 / 2^j) ≠ 0, i.e. j = 1, 2.
        let g = grid(32);
        let p = DyadicPartition::for_grid(g).unwrap();
        let f = Field::from_fn(g, |x| (5.0 * x[0]).cos()).unwrap();
        let s = 0.5;
        let oracle: f64 = (1..=2)
            .map(|j| 2f64.powf(j as f64 * s) * phi(5.0 / 2f64.powi(j)) * 0.5f64.sqrt())
            .sum();
        let got = p.besov_norm(&f, s, 2.0, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-13, "{got} vs {oracle}");
        let sup = p.besov_norm(&f, s, 2.0, f64::INFINITY).unwrap();
        let oracle_sup = (1..=2)
            .map(|j| 2f64.powf(j as f64 * s) * phi(5.0 / 2f64.powi(j)) * 0.5f64.sqrt())
            .fold(0.0, f64::max);
        assert!((sup - oracle_sup).abs() < 1e-13);
    }

    #[test]
    fn chemin_lerner_special_cases() {
        let g = grid(16);
        let p = DyadicPartition::for_grid(g).unwrap();
        let base = Field::from_fn(g, |x| (3.0 * x[0]).sin() + x[1].cos()).unwrap();
        let bg = p.besov_norm(&base, 0.3, 2.0, 1.0).unwrap();
        let times: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
        let fields: Vec<Field> = times.iter().map(|t| base.scale((-t).exp())).collect();
        let series = NormSeries::from_fields(&p, 2.0, &times, &fields).unwrap();
        let l1 = series.chemin_lerner_norm(0.3, 1.0, 1.0).unwrap();
        assert!((l1 - (1.0 - (-1.0f64).exp()) * bg).abs() < 1e-5 * bg);
        let linf = series.chemin_lerner_norm(0.3, f64::INFINITY, 1.0).unwrap();
        assert!((linf - bg).abs() < 1e-14);
        // r = 1, q = 1 equals the time integral of the Besov norm.
        let hist = series.besov_history(0.3, 1.0).unwrap();
        assert!((trapezoid(&times, &hist) - l1).abs() < 1e-12);
        assert!(NormSeries::new(2.0, 0).chemin_lerner_norm(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bernstein_degenerate_rejected() {
        let g = grid(16);
        let p = DyadicPartition::for_grid(g).unwrap();
        let z = Field::zeros(g, Rank::Scalar);
        assert!(matches!(p.bernstein_ratio(&z, &[1, 0], 2.0, 2.0, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(multi_indices(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(multi_indices(3, 1).len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn blocks_are_nonnegative_and_bounded(r in 0.0f64..20.0) {
            let v = phi(r);
            prop_assert!((0.0..=1.0).contains(&v));
            let v = theta(r);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn telescoping_sum(r in 0.01f64..100.0) {
            // Σ_{j=-8}^{8} φ(2^{-j} r) = θ(2^{-9} r) − θ(2^{8} r)
            let sum: f64 = (-8..=8).map(|j| phi(r * 2f64.powi(-j))).sum();
            let oracle = theta(r * 2f64.powi(-9)) - theta(r * 2f64.powi(8));
            prop_assert!((sum - oracle).abs() < 1e-13);
        }

        #[test]
        fn besov_norm_monotone_in_r(seed in 0u64..200) {
            let g = grid(16);
            let p = DyadicPartition::for_grid(g).unwrap();
            let f = rough_field(g, seed);
            let n1 = p.besov_norm(&f, 0.5, 2.0, 1.0).unwrap();
            let n2 = p.besov_norm(&f, 0.5, 2.0, 2.0).unwrap();
            let ninf = p.besov_norm(&f, 0.5, 2.0, f64::INFINITY).unwrap();
            prop_assert!(ninf <= n2 * (1.0 + 1e-12) && n2 <= n1 * (1.0 + 1e-12));
        }
    }
}
