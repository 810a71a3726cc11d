//! Time weights e_ℓ(t) = (1 − e^{−c 2^{2ℓ} t})^{1/2} and
//! ω_k(t) = Σ_{ℓ ≥ k} 2^{k−ℓ} e_ℓ(t), with the weighted Besov and
//! Chemin-Lerner norms built from them.
//!
//! ω is evaluated by the backward recurrence ω_k = e_k + ω_{k+1}/2 started
//! where e_ℓ has saturated to 1 in floating point (the tail is then exactly
//! 2), so the relations e_k ≤ ω_k ≤ 2, ω_{k'} ≥ 2^{k'−k} ω_k (k ≥ k') and
//! ω_k ≤ 3 ω_{k'} (k ≤ k') hold on the computed values, not just in exact
//! arithmetic.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::partition::{dyadic_sum, DyadicPartition, NormSeries};
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Number of terms summed beyond the largest requested index before the tail
/// is closed.
pub const TAIL_TERMS: i32 = 16;
const EXTENSION_CAP: i32 = 1100;

/// e_ℓ(t) for the parabolic family.
pub fn e_val(l: i32, t: f64, c: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidArgument(format!("rate {c} must be positive")));
    }
    Ok(parabolic(l, t, c))
}

fn parabolic(l: i32, t: f64, c: f64) -> f64 {
    let x = c * 4f64.powi(l) * t;
    (-(-x).exp_m1()).sqrt()
}

type WeightFn = Arc<dyn Fn(i32, f64) -> f64 + Send + Sync>;

/// The family e_ℓ(t) together with its rate parameter.
#[derive(Clone)]
pub struct WeightSequence {
    c: f64,
    e: WeightFn,
}

impl fmt::Debug for WeightSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightSequence").field("c", &self.c).finish()
    }
}

impl WeightSequence {
    pub fn parabolic(c: f64) -> Result<Self> {
        if c.is_nan() || c <= 0.0 {
            return Err(Error::InvalidArgument(format!("rate {c} must be positive")));
        }
        Ok(WeightSequence { c, e: Arc::new(move |l, t| parabolic(l, t, c)) })
    }

    /// Any family nondecreasing in ℓ and t with values in [0, 1] and
    /// e_ℓ(0) = 0. `c` is only recorded.
    pub fn custom(c: f64, e: impl Fn(i32, f64) -> f64 + Send + Sync + 'static) -> Self {
        WeightSequence { c, e: Arc::new(e) }
    }

    pub fn rate(&self) -> f64 {
        self.c
    }

    pub fn e(&self, l: i32, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
        }
        Ok((self.e)(l, t))
    }

    /// ω_k(t) for k = k_lo..=k_hi.
    pub fn omegas(&self, k_lo: i32, k_hi: i32, t: f64) -> Result<Vec<f64>> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
        }
        let mut top = k_hi + TAIL_TERMS;
        let mut e_top = (self.e)(top, t);
        while e_top > 0.0 && e_top < 1.0 && top < k_hi + EXTENSION_CAP {
            top += 1;
            e_top = (self.e)(top, t);
        }
        // Σ_{ℓ ≥ top} 2^{top−ℓ} e_ℓ: exactly 2 once saturated, else bounded by 2 e_top
        // up to an error 2^{k−top} relative to ω_k.
        let mut w = 2.0 * e_top;
        let mut out = vec![0.0; (k_hi - k_lo + 1).max(0) as usize];
        for l in (k_lo..top).rev() {
            w = (self.e)(l, t) + 0.5 * w;
            if l <= k_hi {
                out[(l - k_lo) as usize] = w;
            }
        }
        Ok(out)
    }

    pub fn omega(&self, k: i32, t: f64) -> Result<f64> {
        Ok(self.omegas(k, k, t)?[0])
    }

    /// Weight table rows (k, t, e_k(t), ω_k(t)).
    pub fn table(&self, k_lo: i32, k_hi: i32, times: &[f64]) -> Result<Vec<(i32, f64, f64, f64)>> {
        let mut rows = Vec::new();
        for &t in times {
            let om = self.omegas(k_lo, k_hi, t)?;
            for k in k_lo..=k_hi {
                rows.push((k, t, self.e(k, t)?, om[(k - k_lo) as usize]));
            }
        }
        Ok(rows)
    }

    pub fn write_table_csv(&self, w: &mut impl Write, k_lo: i32, k_hi: i32, times: &[f64]) -> Result<()> {
        writeln!(w, "k,t,e,omega")?;
        for (k, t, e, o) in self.table(k_lo, k_hi, times)? {
            writeln!(w, "{k},{t:e},{e:e},{o:e}")?;
        }
        Ok(())
    }
}

/// ω_k(T) on the partition's block range.
pub fn block_weights(part: &DyadicPartition, w: &WeightSequence, horizon: f64) -> Result<Vec<f64>> {
    w.omegas(part.j_min(), part.j_max(), horizon)
}

/// ‖f‖_{Ḃ^s_{p,r}(ω)} at horizon T.
pub fn weighted_besov_norm(
    part: &DyadicPartition,
    f: &Field,
    s: f64,
    p: f64,
    r: f64,
    w: &WeightSequence,
    horizon: f64,
) -> Result<f64> {
    let b = part.block_norms(f, p)?;
    let om = block_weights(part, w, horizon)?;
    dyadic_sum(part.j_min(), &b, s, r, Some(&om))
}

/// ‖f‖_{L̃^q_T(Ḃ^s_{p,r}(ω))}: samples up to T, blocks weighted by ω_k(T).
pub fn weighted_cl_norm(
    series: &NormSeries,
    s: f64,
    q: f64,
    r: f64,
    w: &WeightSequence,
    horizon: f64,
) -> Result<f64> {
    let cut = series.truncated(horizon);
    let om = w.omegas(series.j_min, series.j_min + series.n_blocks() as i32 - 1, horizon)?;
    cut.weighted_chemin_lerner_norm(s, q, r, &om)
}

/// Weighted L̃^∞ norm with horizon at each stored sample time.
pub fn weighted_linf_profile(series: &NormSeries, s: f64, r: f64, w: &WeightSequence) -> Result<Vec<f64>> {
    (0..series.times.len()).map(|i| linf_at(series, i, s, r, w)).collect()
}

fn linf_at(series: &NormSeries, i: usize, s: f64, r: f64, w: &WeightSequence) -> Result<f64> {
    let nb = series.n_blocks();
    let mut sup = vec![0.0f64; nb];
    for b in &series.blocks[..=i] {
        for (m, v) in sup.iter_mut().zip(b) {
            *m = m.max(*v);
        }
    }
    let om = w.omegas(series.j_min, series.j_min + nb as i32 - 1, series.times[i])?;
    dyadic_sum(series.j_min, &sup, s, r, Some(&om))
}

/// Outcome of the smallness-time search.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub enum Smallness {
    /// Largest positive sample time whose weighted L̃^∞ norm is ≤ ε.
    Found { time: f64, value: f64 },
    /// No positive sample qualifies; the smallest value seen at a positive time.
    NotFound { infimum: f64 },
}

/// Largest sampled T̃ with ‖f‖_{L̃^∞_{T̃}(Ḃ^s_{p,r}(ω))} ≤ ε, by bisection
/// (the norm is nondecreasing in T̃).
pub fn smallness_time(series: &NormSeries, s: f64, r: f64, w: &WeightSequence, eps: f64) -> Result<Smallness> {
    if series.is_empty() {
        return Err(Error::Degenerate("empty norm series".into()));
    }
    let first = series.times.iter().position(|&t| t > 0.0);
    let Some(first) = first else {
        return Err(Error::Degenerate("no positive sample time".into()));
    };
    let v_first = linf_at(series, first, s, r, w)?;
    if v_first > eps {
        return Ok(Smallness::NotFound { infimum: v_first });
    }
    let (mut lo, mut hi) = (first, series.times.len());
    let mut v_lo = v_first;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let v = linf_at(series, mid, s, r, w)?;
        if v <= eps {
            lo = mid;
            v_lo = v;
        } else {
            hi = mid;
        }
    }
    Ok(Smallness::Found { time: series.times[lo], value: v_lo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use proptest::prelude::*;

    /// Direct summation of the defining series with many terms.
    fn omega_direct(k: i32, t: f64, c: f64) -> f64 {
        (k..k + 400).map(|l| 2f64.powi(k - l) * parabolic(l, t, c)).sum()
    }

    #[test]
    fn e_val_examples() {
        assert_eq!(e_val(3, 0.0, 1.0).unwrap(), 0.0);
        assert!((e_val(0, 1.0, 1.0).unwrap() - (1.0 - (-1.0f64).exp()).sqrt()).abs() < 1e-15);
        assert!(e_val(0, -1.0, 1.0).is_err());
        assert!(e_val(0, 1.0, 0.0).is_err());
        assert_eq!(e_val(40, 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn omega_matches_direct_sum() {
        let w = WeightSequence::parabolic(1.0).unwrap();
        for &t in &[0.0, 1e-9, 1e-4, 0.01, 0.3, 5.0] {
            for k in -3..8 {
                let got = w.omega(k, t).unwrap();
                let oracle = omega_direct(k, t, 1.0);
                assert!((got - oracle).abs() <= 2f64.powi(-TAIL_TERMS) * 1e-3 + 1e-14, "{k} {t}: {got} vs {oracle}");
            }
        }
        assert_eq!(w.omega(2, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn omega_large_time_limit() {
        let w = WeightSequence::parabolic(1.0).unwrap();
        assert_eq!(w.omega(5, 1e6).unwrap(), 2.0);
    }

    #[test]
    fn custom_weight_family() {
        let w = WeightSequence::custom(1.0, |l, t| if t > 0.0 && l >= 0 { 1.0 } else { 0.0 });
        // ω_{-2} = Σ_{ℓ≥0} 2^{-2-ℓ} = 1/2
        assert!((w.omega(-2, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_cl_reduces_to_unweighted_for_unit_weights() {
        let g = Grid::periodic(2, 16).unwrap();
        let p = DyadicPartition::for_grid(g).unwrap();
        let f = Field::from_fn(g, |x| (3.0 * x[0]).sin() + (x[1] - x[0]).cos()).unwrap();
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let fields: Vec<Field> = times.iter().map(|t| f.scale(1.0 + t)).collect();
        let series = NormSeries::from_fields(&p, 2.0, &times, &fields).unwrap();
        let one = WeightSequence::custom(1.0, |_, _| 1.0);
        let a = weighted_cl_norm(&series, 0.5, 1.0, 1.0, &one, 1.0).unwrap();
        let b = series.chemin_lerner_norm(0.5, 1.0, 1.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12 * b);
    }

    #[test]
    fn smallness_time_brackets_scalar_root() {
        // Single mode inside block 3: the weighted L̃^∞ norm of constant data
        // is a(t) = Σ_k 2^{ks} φ(2^{-k}|ξ|) ω_k(t) ‖f‖_2.
        let g = Grid::periodic(2, 64).unwrap();
        let p = DyadicPartition::for_grid(g).unwrap();
        let f = Field::from_fn(g, |x| (8.0 * x[0]).cos()).unwrap();
        let mut times = vec![0.0];
        times.extend((0..=200).map(|i| 1e-10 * 10f64.powf(i as f64 * 0.04)));
        let fields = vec![f.clone(); times.len()];
        let series = NormSeries::from_fields(&p, 2.0, &times, &fields).unwrap();
        let w = WeightSequence::parabolic(1.0).unwrap();
        let eps = 1e-2;
        let norm = f.lp_norm(2.0).unwrap();
        let a = |t: f64| -> f64 {
            p.indices()
                .map(|k| crate::partition::phi(8.0 / 2f64.powi(k)) * omega_direct(k, t, 1.0) * norm)
                .sum()
        };
        let (mut lo, mut hi) = (0.0, 1e-2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if a(mid) <= eps { lo = mid } else { hi = mid }
        }
        match smallness_time(&series, 0.0, 1.0, &w, eps).unwrap() {
            Smallness::Found { time, value } => {
                assert!(value <= eps);
                let next = times[times.iter().position(|&t| t == time).unwrap() + 1];
                assert!(time <= lo && lo < next, "{time} vs root {lo}");
            }
            other => panic!("{other:?}"),
        }
        match smallness_time(&series, 0.0, 1.0, &w, 1e-12).unwrap() {
            Smallness::NotFound { infimum } => assert!(infimum > 1e-12),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weight_relations(c in 0.1f64..4.0, logt in -12.0f64..3.0, k in -4i32..10, dk in 0i32..8) {
            let w = WeightSequence::parabolic(c).unwrap();
            let t = 10f64.powf(logt);
            let om = w.omegas(k, k + dk, t).unwrap();
            let (lo, hi) = (om[0], om[dk as usize]);
            prop_assert!(hi <= 2f64.powi(dk) * lo);
            prop_assert!(lo <= 3.0 * hi);
            for (i, &o) in om.iter().enumerate() {
                prop_assert!(o <= 2.0);
                prop_assert!(w.e(k + i as i32, t).unwrap() <= o);
            }
        }

        #[test]
        fn omega_monotone_in_time(t in 0.0f64..1.0, dt in 0.0f64..1.0, k in -2i32..8) {
            let w = WeightSequence::parabolic(1.0).unwrap();
            prop_assert!(w.omega(k, t).unwrap() <= w.omega(k, t + dt).unwrap());
        }
    }
}
