//! Frequency-domain assembly of the identification system.
//!
//! Each evaluated term field is transformed along every axis and only the
//! low-frequency block `|k_a| < K_a` is kept. Because the transform is
//! linear, a relation `lhs = sum_i xi_i term_i` that holds pointwise holds
//! exactly mode by mode, whatever the noise content of the data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, Axis, Dimension, IxDyn, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::candlib::{evaluate_library, EvaluatedLibrary, LibrarySpec, TermDescriptor};
use crate::deriv::DiffConfig;
use crate::error::{Error, Result};
use crate::field::Field;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffSpec {
    /// Per-axis count `K_a`: modes `0, ±1, .., ±(K_a - 1)` are kept.
    pub modes: Vec<usize>,
}

impl CutoffSpec {
    pub fn new(modes: Vec<usize>) -> Self {
        CutoffSpec { modes }
    }

    pub fn uniform(k: usize, axes: usize) -> Self {
        CutoffSpec {
            modes: vec![k; axes],
        }
    }

    /// 1-D data keeps (12, 6); 2-D keeps 8 and 3-D keeps 5 on every axis.
    pub fn default_for(spatial_dims: usize) -> Self {
        match spatial_dims {
            1 => Self::new(vec![12, 6]),
            2 => Self::uniform(8, 3),
            _ => Self::uniform(5, spatial_dims + 1),
        }
    }

    /// Filter block of the low-pass baseline: 24, 16 or 10 per axis.
    pub fn lowpass_default_for(spatial_dims: usize) -> Self {
        let k = match spatial_dims {
            1 => 24,
            2 => 16,
            _ => 10,
        };
        Self::uniform(k, spatial_dims + 1)
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        if self.modes.len() != dims.len() {
            return Err(Error::Config(format!(
                "cutoff has {} entries for {} axes",
                self.modes.len(),
                dims.len()
            )));
        }
        for (a, (&k, &n)) in self.modes.iter().zip(dims).enumerate() {
            if k == 0 || 2 * k - 1 > n {
                return Err(Error::Config(format!(
                    "cutoff {k} on axis {a} needs {} samples, axis has {n}",
                    2 * k.max(1) - 1
                )));
            }
        }
        Ok(())
    }

    /// Number of signed mode tuples in the block, before removing conjugates.
    pub fn block_len(&self) -> usize {
        self.modes.iter().map(|k| 2 * k - 1).product()
    }

    /// Retained tuples with conjugate-redundant partners removed.
    pub fn retained_modes(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.block_len() / 2 + 1);
        let mut tuple: Vec<i64> = self.modes.iter().map(|&k| -(k as i64 - 1)).collect();
        loop {
            if is_canonical(&tuple) {
                out.push(tuple.clone());
            }
            // Odometer increment, last axis fastest.
            let mut a = tuple.len();
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if tuple[a] < self.modes[a] as i64 - 1 {
                    tuple[a] += 1;
                    break;
                }
                tuple[a] = -(self.modes[a] as i64 - 1);
            }
        }
    }
}

fn is_canonical(tuple: &[i64]) -> bool {
    tuple.iter().find(|&&k| k != 0).is_none_or(|&k| k > 0)
}

/// Block position of signed mode `k` for cutoff `cut` (`2K - 1` slots).
fn block_index(k: i64, cut: usize) -> usize {
    if k >= 0 {
        k as usize
    } else {
        (2 * cut as i64 - 1 + k) as usize
    }
}

fn full_index(k: i64, n: usize) -> usize {
    if k >= 0 {
        k as usize
    } else {
        (n as i64 + k) as usize
    }
}

struct Planner {
    inner: FftPlanner<f64>,
}

impl Planner {
    fn new() -> Self {
        Planner {
            inner: FftPlanner::new(),
        }
    }

    fn plan(&mut self, n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        if inverse {
            self.inner.plan_fft_inverse(n)
        } else {
            self.inner.plan_fft_forward(n)
        }
    }
}

/// In-place unnormalized transform along one axis.
fn fft_axis(values: &mut ArrayD<Complex64>, axis: usize, inverse: bool, planner: &mut Planner) {
    let n = values.shape()[axis];
    let fft = planner.plan(n, inverse);
    let mut buf = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for mut lane in values.lanes_mut(Axis(axis)) {
        buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
        fft.process_with_scratch(&mut buf, &mut scratch);
        lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
    }
}

fn to_complex(values: &ArrayD<f64>) -> ArrayD<Complex64> {
    values.mapv(|v| Complex64::new(v, 0.0))
}

/// Unnormalized forward DFT along every axis.
pub fn dft_nd(f: &Field) -> ArrayD<Complex64> {
    let order: Vec<usize> = (0..f.ndim()).collect();
    dft_in_order(f.values(), &order)
}

/// Forward DFT applying the axes in the given order.
pub fn dft_in_order(values: &ArrayD<f64>, order: &[usize]) -> ArrayD<Complex64> {
    let mut out = to_complex(values);
    let mut planner = Planner::new();
    for &a in order {
        fft_axis(&mut out, a, false, &mut planner);
    }
    out
}

/// Normalized inverse of [`dft_nd`].
pub fn idft_nd(spectrum: &ArrayD<Complex64>) -> ArrayD<Complex64> {
    let mut out = spectrum.clone();
    let mut planner = Planner::new();
    for a in 0..out.ndim() {
        fft_axis(&mut out, a, true, &mut planner);
    }
    let scale = 1.0 / out.len() as f64;
    out.mapv_inplace(|v| v * scale);
    out
}

/// Low-frequency block of the full transform, computed axis by axis and
/// discarding high modes after each pass. Shape is `2K_a - 1` per axis.
fn low_block_in_order(values: &ArrayD<f64>, cut: &CutoffSpec, order: &[usize], planner: &mut Planner) -> ArrayD<Complex64> {
    let mut cur = to_complex(values);
    for &a in order {
        let n = cur.shape()[a];
        let k = cut.modes[a];
        let m = 2 * k - 1;
        let fft = planner.plan(n, false);
        let mut shape = cur.shape().to_vec();
        shape[a] = m;
        let mut next = ArrayD::<Complex64>::zeros(IxDyn(&shape));
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Zip::from(cur.lanes(Axis(a)))
            .and(next.lanes_mut(Axis(a)))
            .for_each(|src, mut dst| {
                buf.iter_mut().zip(src.iter()).for_each(|(b, v)| *b = *v);
                fft.process_with_scratch(&mut buf, &mut scratch);
                for p in 0..m {
                    let signed = if p < k { p as i64 } else { p as i64 - m as i64 };
                    dst[p] = buf[full_index(signed, n)];
                }
            });
        cur = next;
    }
    cur
}

fn low_block(values: &ArrayD<f64>, cut: &CutoffSpec, planner: &mut Planner) -> ArrayD<Complex64> {
    let order: Vec<usize> = (0..values.ndim()).collect();
    low_block_in_order(values, cut, &order, planner)
}

fn gather(block: &ArrayD<Complex64>, modes: &[Vec<i64>], cut: &CutoffSpec) -> Vec<Complex64> {
    let mut ix = vec![0usize; cut.modes.len()];
    modes
        .iter()
        .map(|tuple| {
            for (a, &k) in tuple.iter().enumerate() {
                ix[a] = block_index(k, cut.modes[a]);
            }
            block[IxDyn(&ix)]
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Scale every column to unit 2-norm (recorded in `column_norms`).
    pub normalize: bool,
    /// Accept fewer than three rows per column.
    pub allow_few_rows: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            normalize: true,
            allow_few_rows: false,
        }
    }
}

/// Complex frequency-domain system `rhs = matrix * xi`, one row per retained
/// non-redundant mode tuple and one column per candidate term.
#[derive(Clone, Debug)]
pub struct FreqSystem {
    pub matrix: DMatrix<Complex64>,
    pub rhs: DVector<Complex64>,
    pub terms: Vec<TermDescriptor>,
    pub column_names: Vec<String>,
    pub modes: Vec<Vec<i64>>,
    /// Original 2-norm of every column; 1 when normalization is off.
    pub column_norms: Vec<f64>,
    pub lhs_order: u32,
}

impl FreqSystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// CSV lines `mode,column,re,im` for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,column,re,im\n");
        for (r, mode) in self.modes.iter().enumerate() {
            let tag = mode.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
            for c in 0..self.cols() {
                let z = self.matrix[(r, c)];
                out.push_str(&format!("{tag},{},{:e},{:e}\n", self.column_names[c], z.re, z.im));
            }
            let z = self.rhs[r];
            out.push_str(&format!("{tag},lhs,{:e},{:e}\n", z.re, z.im));
        }
        out
    }
}

fn check_rows(rows: usize, cols: usize, opts: &AssemblyOptions) -> Result<()> {
    if rows < cols {
        return Err(Error::Config(format!(
            "{rows} rows cannot determine {cols} coefficients"
        )));
    }
    if rows < 3 * cols {
        if !opts.allow_few_rows {
            return Err(Error::Config(format!(
                "{rows} rows for {cols} columns; at least {} required (override with allow_few_rows)",
                3 * cols
            )));
        }
        log::warn!("only {rows} rows for {cols} columns");
    }
    Ok(())
}

fn column_norm<T: Copy>(col: &[T], abs2: impl Fn(T) -> f64) -> f64 {
    col.iter().map(|&v| abs2(v)).sum::<f64>().sqrt()
}

pub fn assemble_freq_system(lib: &EvaluatedLibrary, cut: &CutoffSpec) -> Result<FreqSystem> {
    assemble_freq_system_with(lib, cut, &AssemblyOptions::default())
}

pub fn assemble_freq_system_with(
    lib: &EvaluatedLibrary,
    cut: &CutoffSpec,
    opts: &AssemblyOptions,
) -> Result<FreqSystem> {
    cut.validate(lib.dims())?;
    let modes = cut.retained_modes();
    let (rows, cols) = (modes.len(), lib.len());
    check_rows(rows, cols, opts)?;

    let mut planner = Planner::new();
    let mut matrix = DMatrix::<Complex64>::zeros(rows, cols);
    let mut column_norms = vec![1.0; cols];
    for c in 0..cols {
        let block = low_block(&lib.term_values(c), cut, &mut planner);
        let mut col = gather(&block, &modes, cut);
        if opts.normalize {
            let norm = column_norm(&col, |z| z.norm_sqr());
            column_norms[c] = norm;
            if norm > 0.0 {
                col.iter_mut().for_each(|z| *z /= norm);
            }
        }
        matrix.column_mut(c).iter_mut().zip(col).for_each(|(m, z)| *m = z);
    }
    let rhs_block = low_block(lib.lhs_field().values(), cut, &mut planner);
    let rhs = DVector::from_vec(gather(&rhs_block, &modes, cut));

    Ok(FreqSystem {
        matrix,
        rhs,
        terms: lib.spec().terms.clone(),
        column_names: lib.names(),
        modes,
        column_norms,
        lhs_order: lib.spec().lhs_order,
    })
}

/// Real system built from grid samples of the interior.
#[derive(Clone, Debug)]
pub struct RealSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub terms: Vec<TermDescriptor>,
    pub column_names: Vec<String>,
    pub column_norms: Vec<f64>,
    pub lhs_order: u32,
}

impl RealSystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Flat row-major offsets of the points whose every index is a multiple of
/// `stride`.
fn strided_offsets(dims: &[usize], stride: usize) -> Vec<usize> {
    let mut offsets = vec![0usize];
    for &n in dims {
        offsets = offsets
            .iter()
            .flat_map(|&o| (0..n).step_by(stride).map(move |i| o * n + i))
            .collect();
    }
    offsets
}

pub fn assemble_timespace_system(lib: &EvaluatedLibrary, sample_stride: usize) -> Result<RealSystem> {
    assemble_timespace_system_with(lib, sample_stride, &AssemblyOptions::default())
}

pub fn assemble_timespace_system_with(
    lib: &EvaluatedLibrary,
    sample_stride: usize,
    opts: &AssemblyOptions,
) -> Result<RealSystem> {
    if sample_stride == 0 {
        return Err(Error::Config("sample stride must be at least 1".into()));
    }
    let offsets = strided_offsets(lib.dims(), sample_stride);
    let (rows, cols) = (offsets.len(), lib.len());
    if rows < cols {
        return Err(Error::Config(format!(
            "stride {sample_stride} leaves {rows} rows for {cols} columns"
        )));
    }
    let mut matrix = DMatrix::<f64>::zeros(rows, cols);
    let mut column_norms = vec![1.0; cols];
    for c in 0..cols {
        let values = lib.term_values(c);
        let flat = values.as_slice().expect("standard layout");
        let mut col: Vec<f64> = offsets.iter().map(|&o| flat[o]).collect();
        if opts.normalize {
            let norm = column_norm(&col, |v| v * v);
            column_norms[c] = norm;
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
        matrix.column_mut(c).iter_mut().zip(col).for_each(|(m, v)| *m = v);
    }
    let lhs = lib.lhs_field().data();
    let rhs = DVector::from_iterator(rows, offsets.iter().map(|&o| lhs[o]));
    Ok(RealSystem {
        matrix,
        rhs,
        terms: lib.spec().terms.clone(),
        column_names: lib.names(),
        column_norms,
        lhs_order: lib.spec().lhs_order,
    })
}

/// Projects `f` onto the low-frequency block: transform, zero every mode
/// outside `|k_a| < K_a`, transform back and keep the real part.
pub fn lowpass_filter(f: &Field, cut: &CutoffSpec) -> Result<Field> {
    cut.validate(f.dims())?;
    let mut spec = dft_nd(f);
    let dims = f.dims().to_vec();
    for (ix, v) in spec.indexed_iter_mut() {
        let keep = ix.slice().iter().zip(&dims).zip(&cut.modes).all(|((&i, &n), &k)| {
            let signed = if i <= n / 2 { i } else { n - i };
            signed < k
        });
        if !keep {
            *v = Complex64::default();
        }
    }
    let back = idft_nd(&spec);
    Ok(f.with_values(back.mapv(|z| z.re)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

impl ErrorStats {
    fn from_pairs<T: Copy>(clean: &[T], noisy: &[T], abs: impl Fn(T) -> f64, sub: impl Fn(T, T) -> T) -> Self {
        let mut rel: Vec<f64> = clean
            .iter()
            .zip(noisy)
            .filter(|(c, _)| abs(**c) > 0.0)
            .map(|(&c, &n)| abs(sub(n, c)) / abs(c))
            .collect();
        let count = rel.len();
        if count == 0 {
            return ErrorStats {
                mean: 0.0,
                median: 0.0,
                count,
            };
        }
        let mean = rel.iter().sum::<f64>() / count as f64;
        rel.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            rel[count / 2]
        } else {
            0.5 * (rel[count / 2 - 1] + rel[count / 2])
        };
        ErrorStats {
            mean,
            median,
            count,
        }
    }
}

/// Relative error between a term computed on clean and on noisy data, seen
/// on the raw grid, in the low block after a time-only transform, and in
/// the low block after the full transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralErrorProfile {
    pub raw: ErrorStats,
    pub time_only: ErrorStats,
    pub full: ErrorStats,
}

pub fn spectral_error_profile(
    clean: &Field,
    noisy: &Field,
    term: &TermDescriptor,
    cfg: &DiffConfig,
    cut: &CutoffSpec,
) -> Result<SpectralErrorProfile> {
    if !clean.same_grid(noisy) {
        return Err(Error::Config("clean and noisy fields differ in grid".into()));
    }
    let spec = LibrarySpec::new(vec![*term], 1)?;
    let c = evaluate_library(clean, &spec, cfg)?.term_values(0);
    let n = evaluate_library(noisy, &spec, cfg)?.term_values(0);
    cut.validate(c.shape())?;

    let raw = ErrorStats::from_pairs(
        c.as_slice().unwrap(),
        n.as_slice().unwrap(),
        f64::abs,
        |a, b| a - b,
    );

    // Time-only: keep every spatial position, low temporal modes.
    let t_axis = c.ndim() - 1;
    let mut planner = Planner::new();
    let tc = low_block_in_order(&c, cut, &[t_axis], &mut planner);
    let tn = low_block_in_order(&n, cut, &[t_axis], &mut planner);
    let time_only = ErrorStats::from_pairs(
        tc.as_slice().unwrap(),
        tn.as_slice().unwrap(),
        |z: Complex64| z.norm(),
        |a, b| a - b,
    );

    let fc = low_block(&c, cut, &mut planner);
    let fnz = low_block(&n, cut, &mut planner);
    let full = ErrorStats::from_pairs(
        fc.as_slice().unwrap(),
        fnz.as_slice().unwrap(),
        |z: Complex64| z.norm(),
        |a, b| a - b,
    );
    Ok(SpectralErrorProfile {
        raw,
        time_only,
        full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candlib::{standard_library, TermDescriptor};
    use crate::field::AxisLabel;
    use std::f64::consts::PI;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
    }

    fn random_field(dims: &[usize], seed: u64) -> Field {
        let mut r = lcg(seed);
        Field::from_fn(dims, &vec![0.1; dims.len()], |_| r()).unwrap()
    }

    /// Naive O(N^2) multi-dimensional DFT.
    fn naive_dft(f: &Field) -> ArrayD<Complex64> {
        let dims = f.dims().to_vec();
        ArrayD::from_shape_fn(IxDyn(&dims), |k| {
            let mut sum = Complex64::default();
            for (x, &v) in f.values().indexed_iter() {
                let phase: f64 = (0..dims.len())
                    .map(|a| (k[a] * x[a]) as f64 / dims[a] as f64)
                    .sum();
                sum += v * Complex64::from_polar(1.0, -2.0 * PI * phase);
            }
            sum
        })
    }

    #[test]
    fn constant_field_spectrum() {
        let n = 16;
        let f = Field::from_fn(&[n, 2], &[1.0, 1.0], |_| 2.5).unwrap();
        let s = dft_nd(&f);
        let total = 2.5 * (2 * n) as f64;
        for (ix, z) in s.indexed_iter() {
            let expect = if ix.slice().iter().all(|&i| i == 0) { total } else { 0.0 };
            assert!((z - expect).norm() <= 1e-12 * total);
        }
    }

    #[test]
    fn single_tone() {
        let n = 32;
        let f = Field::from_fn(&[n, 1], &[1.0, 1.0], |ix| (2.0 * PI * ix[0] as f64 / n as f64).cos()).unwrap();
        let s = dft_nd(&f);
        for i in 0..n {
            let expect = if i == 1 || i == n - 1 { n as f64 / 2.0 } else { 0.0 };
            assert!((s[[i, 0]] - expect).norm() < 1e-12, "{i}");
        }
    }

    #[test]
    fn matches_naive_dft() {
        for dims in [vec![4, 4], vec![3, 5, 4], vec![2, 3, 2, 5]] {
            let f = random_field(&dims, 7);
            let fast = dft_nd(&f);
            let slow = naive_dft(&f);
            let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn parseval() {
        let f = random_field(&[8, 6, 10], 3);
        let energy: f64 = f.data().iter().map(|v| v * v).sum();
        let spec: f64 = dft_nd(&f).iter().map(|z| z.norm_sqr()).sum::<f64>() / f.len() as f64;
        assert!((energy - spec).abs() <= 1e-10 * energy);
    }

    #[test]
    fn axis_order_does_not_matter() {
        let f = random_field(&[6, 5, 7], 11);
        let a = dft_in_order(f.values(), &[0, 1, 2]);
        let b = dft_in_order(f.values(), &[2, 0, 1]);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
        let cut = CutoffSpec::new(vec![2, 3, 2]);
        let mut p = Planner::new();
        let lb = low_block_in_order(f.values(), &cut, &[1, 2, 0], &mut p);
        for tuple in cut.retained_modes() {
            let ix: Vec<usize> = tuple.iter().zip(f.dims()).map(|(&k, &n)| full_index(k, n)).collect();
            let bx: Vec<usize> = tuple.iter().zip(&cut.modes).map(|(&k, &c)| block_index(k, c)).collect();
            assert!((a[IxDyn(&ix)] - lb[IxDyn(&bx)]).norm() < 1e-10);
        }
    }

    #[test]
    fn conjugate_removal_counts() {
        let cut = CutoffSpec::new(vec![2, 2]);
        let modes = cut.retained_modes();
        assert_eq!(cut.block_len(), 9);
        assert_eq!(modes.len(), 5);
        // Enumeration oracle: pair every tuple with its negation modulo 16.
        let n = 16i64;
        let mut all = vec![];
        for a in -1..=1i64 {
            for b in -1..=1i64 {
                all.push([a.rem_euclid(n), b.rem_euclid(n)]);
            }
        }
        let mut classes = std::collections::BTreeSet::new();
        for t in &all {
            let neg = [(-t[0]).rem_euclid(n), (-t[1]).rem_euclid(n)];
            classes.insert(std::cmp::min(*t, neg));
        }
        assert_eq!(classes.len(), modes.len());
        assert_eq!(CutoffSpec::new(vec![12, 12]).retained_modes().len(), 265);
    }

    #[test]
    fn cutoff_validation() {
        assert!(CutoffSpec::new(vec![9, 2]).validate(&[16, 16]).is_err());
        assert!(CutoffSpec::new(vec![8, 2]).validate(&[15, 16]).is_ok());
        assert!(CutoffSpec::new(vec![0, 2]).validate(&[16, 16]).is_err());
        assert!(CutoffSpec::new(vec![2]).validate(&[16, 16]).is_err());
    }

    fn noisy_lib(dims: &[usize], seed: u64) -> EvaluatedLibrary {
        let f = random_field(dims, seed);
        evaluate_library(&f, &standard_library(dims.len() - 1).unwrap(), &DiffConfig::default()).unwrap()
    }

    #[test]
    fn proportional_lhs_maps_exactly() {
        let lib = noisy_lib(&[24, 20], 5);
        let lhs = lib.term_field(3);
        let lhs = lhs.with_values(lhs.values() * 2.0);
        let lib = lib.with_lhs(lhs).unwrap();
        let sys = assemble_freq_system(&lib, &CutoffSpec::new(vec![7, 7])).unwrap();
        for r in 0..sys.rows() {
            let expect = sys.matrix[(r, 3)] * (2.0 * sys.column_norms[3]);
            assert!((sys.rhs[r] - expect).norm() <= 1e-12 * sys.column_norms[3]);
        }
        let ts = assemble_timespace_system(&lib, 1).unwrap();
        for r in 0..ts.rows() {
            let expect = ts.matrix[(r, 3)] * 2.0 * ts.column_norms[3];
            assert!((ts.rhs[r] - expect).abs() <= 1e-12 * ts.column_norms[3]);
        }
    }

    #[test]
    fn linear_transform_exactness_on_noise() {
        let lib = noisy_lib(&[20, 18], 9);
        let mut r = lcg(4);
        let coefs: Vec<f64> = (0..lib.len()).map(|_| 4.0 * r()).collect();
        let mut lhs = ArrayD::<f64>::zeros(lib.dims());
        for (i, c) in coefs.iter().enumerate() {
            lhs = lhs + lib.term_values(i) * *c;
        }
        let lhs = lib.base().with_values(lhs);
        let lib = lib.with_lhs(lhs).unwrap();
        let sys = assemble_freq_system(&lib, &CutoffSpec::new(vec![6, 6])).unwrap();
        let xi = DVector::from_iterator(
            coefs.len(),
            coefs.iter().zip(&sys.column_norms).map(|(c, n)| Complex64::new(c * n, 0.0)),
        );
        let pred = &sys.matrix * xi;
        let scale = sys.rhs.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in pred.iter().zip(sys.rhs.iter()) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn smaller_cutoff_is_row_subset() {
        let lib = noisy_lib(&[24, 22], 2);
        let opts = AssemblyOptions { normalize: false, allow_few_rows: true };
        let big = assemble_freq_system_with(&lib, &CutoffSpec::new(vec![6, 6]), &opts).unwrap();
        let small = assemble_freq_system_with(&lib, &CutoffSpec::new(vec![4, 5]), &opts).unwrap();
        for (r, m) in small.modes.iter().enumerate() {
            let rb = big.modes.iter().position(|x| x == m).unwrap();
            for c in 0..small.cols() {
                assert!((small.matrix[(r, c)] - big.matrix[(rb, c)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn timespace_rows_follow_grid() {
        let f = Field::from_fn(&[9, 9], &[1.0, 1.0], |ix| (ix[0] * 100 + ix[1]) as f64).unwrap();
        let spec = LibrarySpec::new(vec![TermDescriptor::power(1), TermDescriptor::power(2)], 1).unwrap();
        let lib = evaluate_library(&f, &spec, &DiffConfig::default()).unwrap();
        assert_eq!(lib.dims(), &[9, 7]);
        let opts = AssemblyOptions { normalize: false, allow_few_rows: true };
        let sys = assemble_timespace_system_with(&lib, 1, &opts).unwrap();
        assert_eq!(sys.rows(), 63);
        let sub = trim_for_test(&f);
        let sys2 = assemble_timespace_system_with(&lib, 2, &opts).unwrap();
        let mut r = 0;
        for i in (0..9).step_by(2) {
            for j in (0..7).step_by(2) {
                assert_eq!(sys2.matrix[(r, 0)], sub[[i, j]]);
                assert_eq!(sys2.matrix[(r, 1)], sub[[i, j]].powi(2));
                r += 1;
            }
        }
        assert_eq!(r, sys2.rows());
        assert!(assemble_timespace_system(&lib, 40).is_err());
    }

    fn trim_for_test(f: &Field) -> ArrayD<f64> {
        crate::field::trim_interior(f, &[(0, 0), (1, 1)]).unwrap().into_values()
    }

    #[test]
    fn lowpass_projection() {
        let (nx, nt) = (32, 24);
        let band = Field::from_fn(&[nx, nt], &[1.0, 1.0], |ix| {
            let x = 2.0 * PI * ix[0] as f64 / nx as f64;
            let t = 2.0 * PI * ix[1] as f64 / nt as f64;
            1.0 + (2.0 * x).cos() + (x + 3.0 * t).sin()
        })
        .unwrap();
        let cut = CutoffSpec::new(vec![4, 4]);
        let out = lowpass_filter(&band, &cut).unwrap();
        for (a, b) in out.data().iter().zip(band.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let noise = random_field(&[nx, nt], 1);
        let once = lowpass_filter(&noise, &cut).unwrap();
        let twice = lowpass_filter(&once, &cut).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let tone = Field::from_fn(&[nx, nt], &[1.0, 1.0], |ix| (2.0 * PI * 6.0 * ix[0] as f64 / nx as f64).cos()).unwrap();
        let killed = lowpass_filter(&tone, &cut).unwrap();
        assert!(killed.data().iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn identical_inputs_have_zero_spectral_error() {
        let f = random_field(&[30, 30], 8);
        let term = TermDescriptor::deriv(0, AxisLabel::X, 3);
        let p = spectral_error_profile(&f, &f, &term, &DiffConfig::default(), &CutoffSpec::new(vec![4, 4])).unwrap();
        assert_eq!((p.raw.mean, p.time_only.mean, p.full.mean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spectral_error_matches_naive_recomputation() {
        let clean = Field::from_fn(&[14, 12], &[0.2, 0.1], |ix| {
            (0.4 * ix[0] as f64).sin() * (1.0 + 0.1 * ix[1] as f64)
        })
        .unwrap();
        let mut r = lcg(21);
        let noisy = clean.with_values(clean.values().mapv(|v| v + 0.05 * r()));
        let term = TermDescriptor::deriv(1, AxisLabel::X, 1);
        let cfg = DiffConfig::default();
        let cut = CutoffSpec::new(vec![3, 3]);
        let p = spectral_error_profile(&clean, &noisy, &term, &cfg, &cut).unwrap();

        let spec = LibrarySpec::new(vec![term], 1).unwrap();
        let tc = evaluate_library(&clean, &spec, &cfg).unwrap().term_field(0);
        let tn = evaluate_library(&noisy, &spec, &cfg).unwrap().term_field(0);
        let raw: Vec<f64> = tc.data().iter().zip(tn.data()).map(|(c, n)| ((n - c) / c).abs()).collect();
        let raw_mean = raw.iter().sum::<f64>() / raw.len() as f64;
        assert!((raw_mean - p.raw.mean).abs() <= 1e-10 * raw_mean);

        let (dc, dn) = (naive_dft(&tc), naive_dft(&tn));
        let (n0, n1) = (tc.dims()[0], tc.dims()[1]);
        let mut full = vec![];
        for a in -2..=2i64 {
            for b in -2..=2i64 {
                let ix = [full_index(a, n0), full_index(b, n1)];
                full.push(((dn[ix] - dc[ix]).norm()) / dc[ix].norm());
            }
        }
        let full_mean = full.iter().sum::<f64>() / full.len() as f64;
        assert!((full_mean - p.full.mean).abs() <= 1e-10 * full_mean);

        let mut time = vec![];
        for x in 0..n0 {
            for b in -2..=2i64 {
                let mut sc = Complex64::default();
                let mut sn = Complex64::default();
                for t in 0..n1 {
                    let w = Complex64::from_polar(1.0, -2.0 * PI * (b * t as i64) as f64 / n1 as f64);
                    sc += tc.values()[[x, t]] * w;
                    sn += tn.values()[[x, t]] * w;
                }
                time.push((sn - sc).norm() / sc.norm());
            }
        }
        let time_mean = time.iter().sum::<f64>() / time.len() as f64;
        assert!((time_mean - p.time_only.mean).abs() <= 1e-10 * time_mean);
    }
}
