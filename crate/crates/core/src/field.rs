//! Periodic grids and fields carried in physical and spectral form.
//!
//! Coefficients use the amplitude normalization f̂(k) = M^{-N} Σ_x f(x) e^{-ik·x},
//! so the mean square of the samples equals Σ|f̂(k)|² and cos(x₁) has
//! coefficients 1/2 on ±e₁. Norms are taken with respect to the normalized
//! (unit-volume) measure.

use crate::error::{Error, Result};
use crate::fft;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Uniform periodic grid with `resolution` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    resolution: usize,
    period: f64,
}

impl Grid {
    pub fn new(dim: usize, resolution: usize, period: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if resolution < 8 || !resolution.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "resolution {resolution} must be a power of two >= 8"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidGrid(format!("period {period} must be positive")));
        }
        Ok(Grid { dim, resolution, period })
    }

    /// Grid on the torus of side 2π.
    pub fn periodic(dim: usize, resolution: usize) -> Result<Self> {
        Self::new(dim, resolution, 2.0 * PI)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    /// Number of samples, M^N.
    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn spacing(&self) -> f64 {
        self.period / self.resolution as f64
    }
    /// Physical frequency of the unit lattice step, 2π/L.
    pub fn frequency_unit(&self) -> f64 {
        2.0 * PI / self.period
    }
    /// Largest resolved frequency along an axis, (M/2)·2π/L.
    pub fn nyquist_frequency(&self) -> f64 {
        (self.resolution / 2) as f64 * self.frequency_unit()
    }
    /// Largest index kept by the two-thirds rule.
    pub fn two_thirds_cutoff(&self) -> i64 {
        ((self.resolution - 1) / 3) as i64
    }

    /// Sample coordinates of a flat (row-major) index.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rem = flat;
        let h = self.spacing();
        for axis in (0..self.dim).rev() {
            x[axis] = (rem % self.resolution) as f64 * h;
            rem /= self.resolution;
        }
        x
    }

    pub(crate) fn lattice(&self) -> Arc<Lattice> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, u64), Arc<Lattice>>>> =
            OnceLock::new();
        let key = (self.dim, self.resolution, self.period.to_bits());
        let mut cache = CACHE
            .get_or_init(|| Mutex::new(HashMap::new()))
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        cache
            .entry(key)
            .or_insert_with(|| Arc::new(Lattice::build(self)))
            .clone()
    }

    /// |ξ| at every lattice point, in flat order.
    pub fn frequency_magnitudes(&self) -> Vec<f64> {
        self.lattice().xi.clone()
    }
}

/// Per-grid wavenumber tables.
pub(crate) struct Lattice {
    /// Signed integer wavenumbers; the Nyquist index maps to -M/2.
    pub ints: Vec<[i64; 3]>,
    /// Physical wave vectors, with the Nyquist component zeroed (used for odd derivatives).
    pub kvec: Vec<[f64; 3]>,
    /// |ξ| using the full signed wavenumbers.
    pub xi: Vec<f64>,
    /// True when some component sits on the Nyquist index.
    pub nyquist: Vec<bool>,
    /// Flat index of the mode -k.
    pub conj: Vec<usize>,
    unit: f64,
}

impl Lattice {
    fn build(g: &Grid) -> Self {
        let m = g.resolution;
        let half = (m / 2) as i64;
        let unit = g.frequency_unit();
        let n = g.len();
        let mut ints = Vec::with_capacity(n);
        let mut kvec = Vec::with_capacity(n);
        let mut xi = Vec::with_capacity(n);
        let mut nyquist = Vec::with_capacity(n);
        let mut conj = Vec::with_capacity(n);
        for flat in 0..n {
            let mut rem = flat;
            let mut k = [0i64; 3];
            let mut idx = [0usize; 3];
            for axis in (0..g.dim).rev() {
                let i = rem % m;
                rem /= m;
                idx[axis] = i;
                k[axis] = if (i as i64) < half { i as i64 } else { i as i64 - m as i64 };
            }
            let mut kv = [0.0; 3];
            let mut ny = false;
            let mut r2 = 0.0;
            let mut c = 0usize;
            for axis in 0..g.dim {
                let is_ny = k[axis] == -half;
                ny |= is_ny;
                kv[axis] = if is_ny { 0.0 } else { k[axis] as f64 * unit };
                r2 += (k[axis] as f64 * unit).powi(2);
                c = c * m + (m - idx[axis]) % m;
            }
            ints.push(k);
            kvec.push(kv);
            xi.push(r2.sqrt());
            nyquist.push(ny);
            conj.push(c);
        }
        Lattice { ints, kvec, xi, nyquist, conj, unit }
    }
}

/// Tensor rank of a field. Vectors have N components, matrices N².
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
        }
    }
    fn code(self) -> u64 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Matrix => 2,
        }
    }
    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(Rank::Scalar),
            1 => Ok(Rank::Vector),
            2 => Ok(Rank::Matrix),
            _ => Err(Error::Parse(format!("unknown rank code {c}"))),
        }
    }
}

/// Spectral coefficients of every component.
pub type Coefficients = Vec<Vec<Complex64>>;

/// Real field on a periodic grid. The spectral representation is computed
/// on first use and cached.
#[derive(Debug)]
pub struct Field {
    grid: Grid,
    rank: Rank,
    data: Vec<Vec<f64>>,
    spectral: OnceLock<Coefficients>,
}

impl Clone for Field {
    fn clone(&self) -> Self {
        let spectral = OnceLock::new();
        if let Some(s) = self.spectral.get() {
            let _ = spectral.set(s.clone());
        }
        Field { grid: self.grid, rank: self.rank, data: self.data.clone(), spectral }
    }
}

impl Field {
    pub fn new(grid: Grid, rank: Rank, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != rank.components(grid.dim) {
            return Err(Error::RankMismatch(format!(
                "{:?} on a {}-dimensional grid needs {} components, got {}",
                rank,
                grid.dim,
                rank.components(grid.dim),
                data.len()
            )));
        }
        for c in &data {
            if c.len() != grid.len() {
                return Err(Error::InvalidArgument(format!(
                    "component has {} samples, grid has {}",
                    c.len(),
                    grid.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("physical samples"));
            }
        }
        Ok(Field { grid, rank, data, spectral: OnceLock::new() })
    }

    pub fn scalar(grid: Grid, data: Vec<f64>) -> Result<Self> {
        Self::new(grid, Rank::Scalar, vec![data])
    }

    pub fn vector(grid: Grid, data: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(grid, Rank::Vector, data)
    }

    pub fn zeros(grid: Grid, rank: Rank) -> Self {
        let data = vec![vec![0.0; grid.len()]; rank.components(grid.dim)];
        Field { grid, rank, data, spectral: OnceLock::new() }
    }

    /// Scalar field sampled from a function of position.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let data = (0..grid.len()).map(|i| f(&grid.point(i)[..grid.dim])).collect();
        Self::scalar(grid, data)
    }

    /// Vector field sampled component by component.
    pub fn vector_from_fn(grid: Grid, f: impl Fn(&[f64], usize) -> f64) -> Result<Self> {
        let data = (0..grid.dim)
            .map(|c| (0..grid.len()).map(|i| f(&grid.point(i)[..grid.dim], c)).collect())
            .collect();
        Self::vector(grid, data)
    }

    /// Field from spectral coefficients. The physical samples are the real
    /// part of the inverse transform.
    pub fn from_spectral(grid: Grid, rank: Rank, coeffs: Coefficients) -> Result<Self> {
        if coeffs.len() != rank.components(grid.dim) {
            return Err(Error::RankMismatch("coefficient component count".into()));
        }
        let mut data = Vec::with_capacity(coeffs.len());
        for c in &coeffs {
            if c.len() != grid.len() {
                return Err(Error::InvalidArgument("coefficient array length".into()));
            }
            if c.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFinite("spectral coefficients"));
            }
            data.push(fft::inverse_real(c, grid.resolution, grid.dim));
        }
        let spectral = OnceLock::new();
        let _ = spectral.set(coeffs);
        Ok(Field { grid, rank, data, spectral })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn rank(&self) -> Rank {
        self.rank
    }
    pub fn n_components(&self) -> usize {
        self.data.len()
    }
    pub fn components(&self) -> &[Vec<f64>] {
        &self.data
    }
    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c]
    }
    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.data
    }

    /// Scalar field holding component `c`.
    pub fn component_field(&self, c: usize) -> Field {
        let spectral = OnceLock::new();
        if let Some(s) = self.spectral.get() {
            let _ = spectral.set(vec![s[c].clone()]);
        }
        Field { grid: self.grid, rank: Rank::Scalar, data: vec![self.data[c].clone()], spectral }
    }

    /// Spectral coefficients, computed on first access.
    pub fn spectral(&self) -> &Coefficients {
        self.spectral.get_or_init(|| {
            self.data
                .iter()
                .map(|c| fft::forward_real(c, self.grid.resolution, self.grid.dim))
                .collect()
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    /// Copy with the zero mode removed from every component.
    pub fn without_mean(&self) -> Field {
        let mut coeffs = self.spectral().clone();
        for c in coeffs.iter_mut() {
            c[0] = ZERO;
        }
        Field::from_spectral(self.grid, self.rank, coeffs).expect("finite coefficients")
    }

    /// Pointwise Euclidean magnitude (Frobenius for matrices).
    pub fn magnitude(&self) -> Vec<f64> {
        if self.data.len() == 1 {
            return self.data[0].iter().map(|x| x.abs()).collect();
        }
        (0..self.grid.len())
            .map(|i| self.data.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .collect()
    }

    /// L^p norm of the pointwise magnitude with respect to the normalized measure.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_of_samples(&self.magnitude(), p)
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.rank != other.rank {
            return Err(Error::RankMismatch(format!("{:?} vs {:?}", self.rank, other.rank)));
        }
        Ok(())
    }

    /// self + alpha * other.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.check_same(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect())
            .collect();
        Field::new(self.grid, self.rank, data)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> Field {
        let data = self.data.iter().map(|c| c.iter().map(|x| alpha * x).collect()).collect();
        let out = Field::new(self.grid, self.rank, data).expect("scaled finite field");
        // Carry exact spectral zeros over when the spectrum is already known.
        if let Some(c) = self.spectral.get() {
            let _ = out.spectral.set(c.iter().map(|v| v.iter().map(|z| z * alpha).collect()).collect());
        }
        out
    }

    /// Adds a constant to every component.
    pub fn shift(&self, value: f64) -> Field {
        let data = self.data.iter().map(|c| c.iter().map(|x| x + value).collect()).collect();
        Field::new(self.grid, self.rank, data).expect("shifted finite field")
    }

    /// Applies a real Fourier multiplier m(k) to every component.
    pub fn multiplier(&self, m: impl Fn(usize) -> f64) -> Field {
        let coeffs = self
            .spectral()
            .iter()
            .map(|c| c.iter().enumerate().map(|(i, z)| z * m(i)).collect())
            .collect();
        Field::from_spectral(self.grid, self.rank, coeffs).expect("finite multiplier")
    }

    /// ∂^γ applied componentwise; odd derivatives vanish on Nyquist modes.
    pub fn derivative(&self, gamma: &[usize]) -> Result<Field> {
        if gamma.len() != self.grid.dim {
            return Err(Error::InvalidArgument(format!(
                "multi-index of length {} on a {}-dimensional grid",
                gamma.len(),
                self.grid.dim
            )));
        }
        let lat = self.grid.lattice();
        let coeffs = self
            .spectral()
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(i, z)| z * derivative_symbol(&lat, i, gamma))
                    .collect()
            })
            .collect();
        Field::from_spectral(self.grid, self.rank, coeffs)
    }

    fn partial(&self, axis: usize) -> Field {
        let mut g = vec![0; self.grid.dim];
        g[axis] = 1;
        self.derivative(&g).expect("valid multi-index")
    }

    /// Gradient of a scalar (vector result) or of a vector
    /// (matrix result with entry (i, j) = ∂_j u^i).
    pub fn gradient(&self) -> Result<Field> {
        let n = self.grid.dim;
        match self.rank {
            Rank::Scalar => {
                let data = (0..n).map(|a| self.partial(a).data.remove_first()).collect();
                Field::new(self.grid, Rank::Vector, data)
            }
            Rank::Vector => {
                let mut data = Vec::with_capacity(n * n);
                for i in 0..n {
                    let ui = self.component_field(i);
                    for j in 0..n {
                        data.push(ui.partial(j).data.remove_first());
                    }
                }
                Field::new(self.grid, Rank::Matrix, data)
            }
            Rank::Matrix => Err(Error::RankMismatch("gradient of a matrix field".into())),
        }
    }

    pub fn divergence(&self) -> Result<Field> {
        if self.rank != Rank::Vector {
            return Err(Error::RankMismatch("divergence needs a vector field".into()));
        }
        let lat = self.grid.lattice();
        let spec = self.spectral();
        let coeffs: Vec<Complex64> = (0..self.grid.len())
            .map(|i| {
                let mut acc = ZERO;
                for (a, c) in spec.iter().enumerate() {
                    acc += c[i] * Complex64::new(0.0, lat.kvec[i][a]);
                }
                acc
            })
            .collect();
        Field::from_spectral(self.grid, Rank::Scalar, vec![coeffs])
    }

    /// Antisymmetric matrix w^{ij} = ∂_j u^i − ∂_i u^j.
    pub fn curl(&self) -> Result<Field> {
        if self.rank != Rank::Vector {
            return Err(Error::RankMismatch("curl needs a vector field".into()));
        }
        let n = self.grid.dim;
        let lat = self.grid.lattice();
        let spec = self.spectral();
        let mut coeffs = vec![vec![ZERO; self.grid.len()]; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for m in 0..self.grid.len() {
                    let ik = |a: usize| Complex64::new(0.0, lat.kvec[m][a]);
                    coeffs[i * n + j][m] = ik(j) * spec[i][m] - ik(i) * spec[j][m];
                }
            }
        }
        Field::from_spectral(self.grid, Rank::Matrix, coeffs)
    }

    /// Symmetric strain D(u) = (∇u + ∇uᵀ)/2.
    pub fn strain(&self) -> Result<Field> {
        if self.rank != Rank::Vector {
            return Err(Error::RankMismatch("strain needs a vector field".into()));
        }
        let g = self.gradient()?;
        let n = self.grid.dim;
        let data = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                g.data[i * n + j].iter().zip(&g.data[j * n + i]).map(|(a, b)| 0.5 * (a + b)).collect()
            })
            .collect();
        Field::new(self.grid, Rank::Matrix, data)
    }

    /// Trigonometric interpolation onto another grid of the same dimension and
    /// period (truncating or zero-padding the spectrum; Nyquist modes dropped).
    pub fn resample(&self, target: Grid) -> Result<Field> {
        if target.dim != self.grid.dim || target.period != self.grid.period {
            return Err(Error::GridMismatch);
        }
        if target == self.grid {
            return Ok(self.clone());
        }
        let map = mode_map(self.grid, target.resolution);
        let coeffs = self
            .spectral()
            .iter()
            .map(|c| {
                let mut out = vec![ZERO; target.len()];
                for (i, &t) in map.iter().enumerate() {
                    if t != usize::MAX {
                        out[t] = c[i];
                    }
                }
                out
            })
            .collect();
        Field::from_spectral(target, self.rank, coeffs)
    }

    /// Dealiased pointwise product. A scalar may multiply any field; two
    /// vectors give the componentwise product. Spectral support is tracked so
    /// that coefficients the exact product must vanish on are exactly zero.
    pub fn product(&self, other: &Field) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let (scalar, rest) = match (self.rank, other.rank) {
            (Rank::Scalar, _) => (self, other),
            (_, Rank::Scalar) => (other, self),
            (a, b) if a == b => {
                let comps = (0..self.n_components())
                    .map(|c| {
                        self.component_field(c)
                            .product(&other.component_field(c))
                            .map(|f| f.spectral()[0].clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                return Field::from_spectral(self.grid, self.rank, comps);
            }
            _ => return Err(Error::RankMismatch("product of incompatible ranks".into())),
        };
        let s = &scalar.spectral()[0];
        let lat = self.grid.lattice();
        let mut out = Vec::with_capacity(rest.n_components());
        for c in rest.spectral() {
            let mut prod = eval_padded(self.grid, &[s, c], 1, |x, y| y[0] = x[0] * x[1])
                .pop()
                .expect("one output");
            if let (Some(a), Some(b)) = (support_band(&lat, s), support_band(&lat, c)) {
                let hi = a.1 + b.1;
                let lo = (b.0 - a.1).max(a.0 - b.1).max(0.0);
                let slack = 1e-9 * (1.0 + hi);
                for (i, z) in prod.iter_mut().enumerate() {
                    if lat.xi[i] > hi + slack || lat.xi[i] < lo - slack {
                        *z = ZERO;
                    }
                }
            }
            out.push(prod);
        }
        Field::from_spectral(self.grid, rest.rank, out)
    }

    /// Pointwise composition F(f) evaluated on the 3/2-padded grid.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> Field {
        let comps = self
            .spectral()
            .iter()
            .map(|c| eval_padded(self.grid, &[c], 1, |x, y| y[0] = f(x[0])).pop().expect("one output"))
            .collect();
        Field::from_spectral(self.grid, self.rank, comps).expect("finite composition")
    }

    /// Binary format: dim, resolution, rank code, period as little-endian
    /// 64-bit values, then each component's samples in row-major order.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        w.write_all(&(self.grid.resolution as u64).to_le_bytes())?;
        w.write_all(&self.rank.code().to_le_bytes())?;
        w.write_all(&self.grid.period.to_le_bytes())?;
        for c in &self.data {
            for x in c {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Field> {
        let mut b = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let dim = u64::from_le_bytes(next(r)?) as usize;
        let res = u64::from_le_bytes(next(r)?) as usize;
        let rank = Rank::from_code(u64::from_le_bytes(next(r)?))?;
        let period = f64::from_le_bytes(next(r)?);
        let grid = Grid::new(dim, res, period)?;
        let mut data = Vec::new();
        for _ in 0..rank.components(dim) {
            let mut c = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                c.push(f64::from_le_bytes(next(r)?));
            }
            data.push(c);
        }
        Field::new(grid, rank, data)
    }

    /// CSV with integer indices followed by one column per component.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let n = self.grid.dim;
        let idx: Vec<String> = (0..n).map(|a| format!("i{a}")).collect();
        let comps: Vec<String> = (0..self.n_components()).map(|c| format!("c{c}")).collect();
        writeln!(w, "{},{}", idx.join(","), comps.join(","))?;
        let m = self.grid.resolution;
        for p in 0..self.grid.len() {
            let mut rem = p;
            let mut ii = vec![0; n];
            for a in (0..n).rev() {
                ii[a] = rem % m;
                rem /= m;
            }
            let mut line: Vec<String> = ii.iter().map(|i| i.to_string()).collect();
            line.extend(self.data.iter().map(|c| format!("{:e}", c[p])));
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

trait RemoveFirst {
    fn remove_first(self) -> Vec<f64>;
}
impl RemoveFirst for Vec<Vec<f64>> {
    fn remove_first(mut self) -> Vec<f64> {
        self.swap_remove(0)
    }
}

/// L^p norm of raw samples with respect to the normalized measure.
pub fn lp_of_samples(v: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = if p == 2.0 {
        v.iter().map(|x| (x / scale).powi(2)).sum()
    } else {
        v.iter().map(|x| (x.abs() / scale).powf(p)).sum()
    };
    Ok(scale * (sum / v.len() as f64).powf(1.0 / p))
}

pub(crate) fn derivative_symbol(lat: &Lattice, i: usize, gamma: &[usize]) -> Complex64 {
    let mut sym = Complex64::new(1.0, 0.0);
    for (a, &g) in gamma.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let k = if g % 2 == 1 {
            lat.kvec[i][a]
        } else {
            // Even orders are real and symmetric, so the Nyquist value is kept.
            lat.ints[i][a] as f64 * (lat.xi_unit())
        };
        sym *= Complex64::new(0.0, k).powu(g as u32);
    }
    sym
}

impl Lattice {
    fn xi_unit(&self) -> f64 {
        self.unit
    }
}

/// Smallest and largest |ξ| carrying a nonzero coefficient.
pub(crate) fn support_band(lat: &Lattice, c: &[Complex64]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, z) in c.iter().enumerate() {
        if z.re != 0.0 || z.im != 0.0 {
            lo = lo.min(lat.xi[i]);
            hi = hi.max(lat.xi[i]);
        }
    }
    (hi >= lo).then_some((lo, hi))
}

/// For each mode of `grid`, the flat index of the same wavenumber on a grid
/// with `target` points per axis, or usize::MAX if it is a Nyquist mode or
/// does not fit.
pub(crate) fn mode_map(grid: Grid, target: usize) -> Vec<usize> {
    let lat = grid.lattice();
    let tgt_half = (target / 2) as i64;
    lat.ints
        .iter()
        .zip(&lat.nyquist)
        .map(|(k, &ny)| {
            if ny {
                return usize::MAX;
            }
            let mut flat = 0usize;
            for &ka in &k[..grid.dim] {
                if ka.abs() >= tgt_half {
                    return usize::MAX;
                }
                flat = flat * target + ka.rem_euclid(target as i64) as usize;
            }
            flat
        })
        .collect()
}

fn padded_size(m: usize) -> usize {
    3 * m / 2
}

/// Samples of a band-limited component on the 3/2-padded grid.
pub(crate) fn padded_physical(grid: Grid, c: &[Complex64]) -> Vec<f64> {
    let p = padded_size(grid.resolution);
    let map = padded_map(grid);
    let mut big = vec![ZERO; p.pow(grid.dim as u32)];
    for (i, &t) in map.iter().enumerate() {
        if t != usize::MAX {
            big[t] = c[i];
        }
    }
    fft::fft_nd(&mut big, p, grid.dim, true);
    big.into_iter().map(|z| z.re).collect()
}

/// Retained spectrum of samples on the 3/2-padded grid.
pub(crate) fn from_padded_physical(grid: Grid, data: &[f64]) -> Vec<Complex64> {
    let p = padded_size(grid.resolution);
    let map = padded_map(grid);
    let spec = fft::forward_real(data, p, grid.dim);
    map.iter().map(|&t| if t == usize::MAX { ZERO } else { spec[t] }).collect()
}

/// Evaluates a pointwise map of several scalar inputs on the 3/2-padded grid
/// and returns the truncated spectra of its outputs. Quadratic maps are
/// alias-free on every retained mode.
pub fn eval_padded(
    grid: Grid,
    inputs: &[&[Complex64]],
    n_out: usize,
    f: impl Fn(&[f64], &mut [f64]),
) -> Vec<Vec<Complex64>> {
    let phys: Vec<Vec<f64>> = inputs.iter().map(|c| padded_physical(grid, c)).collect();
    let total = padded_size(grid.resolution).pow(grid.dim as u32);
    let mut outs = vec![vec![0.0; total]; n_out];
    let mut x = vec![0.0; inputs.len()];
    let mut y = vec![0.0; n_out];
    for pt in 0..total {
        for (k, ph) in phys.iter().enumerate() {
            x[k] = ph[pt];
        }
        f(&x, &mut y);
        for (k, o) in outs.iter_mut().enumerate() {
            o[pt] = y[k];
        }
    }
    outs.iter().map(|o| from_padded_physical(grid, o)).collect()
}

fn padded_map(grid: Grid) -> Arc<Vec<usize>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<usize>>>>> = OnceLock::new();
    let key = (grid.dim, grid.resolution);
    let mut cache = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    cache
        .entry(key)
        .or_insert_with(|| Arc::new(mode_map(grid, padded_size(grid.resolution))))
        .clone()
}

/// Evaluates a pointwise map on the native grid after truncating inputs to
/// the two-thirds band, and truncates the outputs to the same band.
pub fn eval_two_thirds(
    grid: Grid,
    inputs: &[&[Complex64]],
    n_out: usize,
    f: impl Fn(&[f64], &mut [f64]),
) -> Vec<Vec<Complex64>> {
    let lat = grid.lattice();
    let cut = grid.two_thirds_cutoff();
    let keep: Vec<bool> = lat
        .ints
        .iter()
        .map(|k| k[..grid.dim].iter().all(|&a| a.abs() <= cut))
        .collect();
    let (m, dim, total) = (grid.resolution, grid.dim, grid.len());
    let phys: Vec<Vec<f64>> = inputs
        .iter()
        .map(|c| {
            let masked: Vec<Complex64> =
                c.iter().zip(&keep).map(|(z, &k)| if k { *z } else { ZERO }).collect();
            fft::inverse_real(&masked, m, dim)
        })
        .collect();
    let mut outs = vec![vec![0.0; total]; n_out];
    let mut x = vec![0.0; inputs.len()];
    let mut y = vec![0.0; n_out];
    for pt in 0..total {
        for (k, ph) in phys.iter().enumerate() {
            x[k] = ph[pt];
        }
        f(&x, &mut y);
        for (k, o) in outs.iter_mut().enumerate() {
            o[pt] = y[k];
        }
    }
    outs.into_iter()
        .map(|o| {
            let mut spec = fft::forward_real(&o, m, dim);
            for (z, &k) in spec.iter_mut().zip(&keep) {
                if !k {
                    *z = ZERO;
                }
            }
            spec
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g2(m: usize) -> Grid {
        Grid::periodic(2, m).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::periodic(2, 12).is_err());
        assert!(Grid::periodic(2, 4).is_err());
        assert!(Grid::periodic(4, 16).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
        assert!(Grid::periodic(3, 8).is_ok());
    }

    #[test]
    fn cosine_has_half_amplitude_modes() {
        let g = g2(16);
        let f = Field::from_fn(g, |x| x[0].cos()).unwrap();
        let s = &f.spectral()[0];
        let lat = g.lattice();
        for (i, z) in s.iter().enumerate() {
            let k = lat.ints[i];
            let expected = if (k[0] == 1 || k[0] == -1) && k[1] == 0 { 0.5 } else { 0.0 };
            assert!((z.re - expected).abs() < 1e-14 && z.im.abs() < 1e-14, "{k:?} {z}");
        }
    }

    #[test]
    fn cosine_norms() {
        let g = Grid::periodic(1, 64).unwrap();
        let f = Field::from_fn(g, |x| x[0].cos()).unwrap();
        assert_relative_eq!(f.lp_norm(2.0).unwrap(), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(f.lp_norm(4.0).unwrap(), 0.375f64.powf(0.25), epsilon = 1e-14);
        assert_relative_eq!(f.lp_norm(f64::INFINITY).unwrap(), 1.0, epsilon = 1e-14);
        assert!(matches!(f.lp_norm(0.5), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let g = g2(8);
        let mut d = vec![0.0; g.len()];
        d[3] = f64::NAN;
        assert!(matches!(Field::scalar(g, d), Err(Error::NonFinite(_))));
    }

    #[test]
    fn derivatives_of_trig_functions() {
        let g = g2(32);
        let f = Field::from_fn(g, |x| (2.0 * x[0]).sin() * (3.0 * x[1]).cos()).unwrap();
        let dxy = f.derivative(&[1, 1]).unwrap();
        let oracle = Field::from_fn(g, |x| -6.0 * (2.0 * x[0]).cos() * (3.0 * x[1]).sin()).unwrap();
        assert!(dxy.sub(&oracle).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
        let lap = f.derivative(&[2, 0]).unwrap().add(&f.derivative(&[0, 2]).unwrap()).unwrap();
        assert!(lap.axpy(13.0, &f).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-11);
    }

    #[test]
    fn period_scales_wavenumbers() {
        let g = Grid::new(1, 32, 1.0).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).sin()).unwrap();
        let d = f.derivative(&[1]).unwrap();
        let oracle = Field::from_fn(g, |x| 2.0 * PI * (2.0 * PI * x[0]).cos()).unwrap();
        assert!(d.sub(&oracle).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
    }

    #[test]
    fn vector_calculus_identities() {
        let g = g2(32);
        let u = Field::vector_from_fn(g, |x, c| {
            if c == 0 { x[1].sin() + (2.0 * x[0]).cos() } else { x[0].cos() * x[1].sin() }
        })
        .unwrap();
        let d = u.divergence().unwrap();
        let oracle = Field::from_fn(g, |x| -2.0 * (2.0 * x[0]).sin() + x[0].cos() * x[1].cos()).unwrap();
        assert!(d.sub(&oracle).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
        let w = u.curl().unwrap();
        // w^{01} = ∂_1 u^0 − ∂_0 u^1
        let w01 = Field::from_fn(g, |x| x[1].cos() + x[0].sin() * x[1].sin()).unwrap();
        assert!(w.component_field(1).sub(&w01).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-12);
        assert!(w.component_field(1).add(&w.component_field(2)).unwrap().lp_norm(2.0).unwrap() < 1e-14);
        // curl of a gradient and divergence of a curl-free field
        let phi = Field::from_fn(g, |x| (x[0] + 2.0 * x[1]).sin()).unwrap();
        let cg = phi.gradient().unwrap().curl().unwrap();
        assert!(cg.lp_norm(f64::INFINITY).unwrap() < 1e-12);
        let s = u.strain().unwrap();
        assert!(s.component_field(1).sub(&s.component_field(2)).unwrap().lp_norm(2.0).unwrap() < 1e-15);
        assert!(phi.curl().is_err());
        assert!(phi.divergence().is_err());
    }

    #[test]
    fn product_is_alias_free() {
        let g = Grid::periodic(1, 16).unwrap();
        // Modes 7 and 6 combine to 13 and 1; 13 is unresolved and must not alias onto -3.
        let a = Field::from_fn(g, |x| (7.0 * x[0]).cos()).unwrap();
        let b = Field::from_fn(g, |x| (6.0 * x[0]).cos()).unwrap();
        let p = a.product(&b).unwrap();
        let oracle = Field::from_fn(g, |x| 0.5 * x[0].cos()).unwrap();
        assert!(p.sub(&oracle).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-14);
    }

    #[test]
    fn binary_round_trip() {
        let g = g2(8);
        let f = Field::vector_from_fn(g, |x, c| x[c] * 0.5 + c as f64).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 2 * 64);
        let back = Field::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.components(), f.components());
        assert_eq!(back.rank(), Rank::Vector);
    }

    #[test]
    fn resample_preserves_band_limited_fields() {
        let g = g2(16);
        let f = Field::from_fn(g, |x| (3.0 * x[0] - x[1]).sin()).unwrap();
        let big = f.resample(g2(32)).unwrap();
        let oracle = Field::from_fn(g2(32), |x| (3.0 * x[0] - x[1]).sin()).unwrap();
        assert!(big.sub(&oracle).unwrap().lp_norm(f64::INFINITY).unwrap() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn plancherel_and_round_trip(seed in 0u64..1000) {
            let g = g2(16);
            let f = Field::from_fn(g, |x| {
                let s = seed as f64;
                (x[0] * 3.0 + s).sin() * (x[1] + 0.1 * s).cos() + 0.3 * (s * x[1]).sin()
            }).unwrap();
            let energy: f64 = f.spectral()[0].iter().map(|z| z.norm_sqr()).sum();
            let ms = f.lp_norm(2.0).unwrap().powi(2);
            prop_assert!((energy - ms).abs() <= 1e-12 * (1.0 + ms));
            let back = Field::from_spectral(g, Rank::Scalar, f.spectral().clone()).unwrap();
            let err = back.sub(&f).unwrap().lp_norm(2.0).unwrap();
            prop_assert!(err <= 1e-12 * f.lp_norm(2.0).unwrap().max(1e-300));
        }

        #[test]
        fn hermitian_symmetry(seed in 0u64..1000) {
            let g = g2(8);
            let f = Field::from_fn(g, |x| ((seed as f64 + 1.0) * x[0]).sin() + x[1].cos() * (seed % 3) as f64).unwrap();
            let lat = g.lattice();
            let s = &f.spectral()[0];
            for i in 0..g.len() {
                prop_assert!((s[i] - s[lat.conj[i]].conj()).norm() < 1e-14);
            }
        }
    }
}
