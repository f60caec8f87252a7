//! Scalar fields sampled on uniform, axis-aligned space-time grids.
//!
//! Samples are stored row-major with the time axis last, so a single
//! temporal trace is contiguous in memory. A field has between one and
//! three spatial axes followed by exactly one time axis.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, Dimension, IxDyn, Slice};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_AXES: usize = 4;
const MAGIC: &[u8; 4] = b"FDI1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisLabel {
    X,
    Y,
    Z,
    T,
}

impl AxisLabel {
    pub const SPATIAL: [AxisLabel; 3] = [AxisLabel::X, AxisLabel::Y, AxisLabel::Z];

    pub fn code(self) -> u8 {
        match self {
            AxisLabel::X => 0,
            AxisLabel::Y => 1,
            AxisLabel::Z => 2,
            AxisLabel::T => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AxisLabel::X),
            1 => Some(AxisLabel::Y),
            2 => Some(AxisLabel::Z),
            3 => Some(AxisLabel::T),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AxisLabel::X => "x",
            AxisLabel::Y => "y",
            AxisLabel::Z => "z",
            AxisLabel::T => "t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(AxisLabel::X),
            "y" => Some(AxisLabel::Y),
            "z" => Some(AxisLabel::Z),
            "t" => Some(AxisLabel::T),
            _ => None,
        }
    }

    /// Labels for a grid with `spatial` space axes: `x[, y[, z]], t`.
    pub fn standard(spatial: usize) -> Vec<AxisLabel> {
        let mut labels: Vec<_> = Self::SPATIAL.iter().copied().take(spatial).collect();
        labels.push(AxisLabel::T);
        labels
    }
}

impl fmt::Display for AxisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    values: ArrayD<f64>,
    spacings: Vec<f64>,
    labels: Vec<AxisLabel>,
}

impl Field {
    pub fn new(
        dims: &[usize],
        spacings: &[f64],
        labels: &[AxisLabel],
        data: Vec<f64>,
    ) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.is_empty() {
            return Err(Error::InvalidField("empty dims".into()));
        }
        if len != data.len() {
            return Err(Error::InvalidField(format!(
                "dims {dims:?} hold {len} samples but {} were given",
                data.len()
            )));
        }
        let values = ArrayD::from_shape_vec(IxDyn(dims), data)
            .map_err(|e| Error::InvalidField(e.to_string()))?;
        Self::from_array(values, spacings.to_vec(), labels.to_vec())
    }

    pub fn from_array(
        values: ArrayD<f64>,
        spacings: Vec<f64>,
        labels: Vec<AxisLabel>,
    ) -> Result<Self> {
        let n = values.ndim();
        if !(2..=MAX_AXES).contains(&n) {
            return Err(Error::InvalidField(format!(
                "expected 2 to {MAX_AXES} axes, got {n}"
            )));
        }
        if spacings.len() != n || labels.len() != n {
            return Err(Error::InvalidField(format!(
                "{n} axes but {} spacings and {} labels",
                spacings.len(),
                labels.len()
            )));
        }
        if values.shape().iter().any(|&d| d == 0) {
            return Err(Error::InvalidField("zero-length axis".into()));
        }
        if let Some(h) = spacings.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::InvalidField(format!("non-positive spacing {h}")));
        }
        if labels[n - 1] != AxisLabel::T {
            return Err(Error::InvalidField("time must be the last axis".into()));
        }
        let spatial = &labels[..n - 1];
        if spatial.contains(&AxisLabel::T) || spatial.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidField(format!(
                "spatial labels {spatial:?} must be distinct and ordered x, y, z"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Field {
            values,
            spacings,
            labels,
        })
    }

    /// Builds a field by evaluating `f` at every multi-index.
    pub fn from_fn(
        dims: &[usize],
        spacings: &[f64],
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self> {
        let labels = AxisLabel::standard(dims.len().saturating_sub(1));
        let values = ArrayD::from_shape_fn(IxDyn(dims), |ix| f(ix.slice()));
        Self::from_array(values, spacings.to_vec(), labels)
    }

    /// Same grid, new samples. Callers guarantee the shape matches and that
    /// the samples are finite whenever `self` is.
    pub(crate) fn with_values(&self, values: ArrayD<f64>) -> Field {
        debug_assert_eq!(values.shape(), self.values.shape());
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Field {
            values,
            spacings: self.spacings.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn labels(&self) -> &[AxisLabel] {
        &self.labels
    }

    pub fn values(&self) -> &ArrayD<f64> {
        &self.values
    }

    pub fn into_values(self) -> ArrayD<f64> {
        self.values
    }

    /// Row-major samples, time fastest.
    pub fn data(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("field samples are kept in standard layout")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.values.ndim()
    }

    pub fn spatial_dims(&self) -> usize {
        self.ndim() - 1
    }

    pub fn time_axis(&self) -> usize {
        self.ndim() - 1
    }

    pub fn axis_of(&self, label: AxisLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.dims() == other.dims()
            && self.spacings == other.spacings
            && self.labels == other.labels
    }

    pub fn stats(&self) -> FieldStats {
        field_stats(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    /// Population standard deviation (N denominator).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics over every sample of the field jointly.
pub fn field_stats(f: &Field) -> FieldStats {
    // Welford's update keeps the variance stable for large offsets.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in f.data().iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
        min = min.min(v);
        max = max.max(v);
    }
    let std = (m2 / f.len() as f64).max(0.0).sqrt();
    FieldStats {
        mean: mean.clamp(min, max),
        std,
        min,
        max,
    }
}

/// Removes `margins[a].0` leading and `margins[a].1` trailing samples along
/// every axis `a`. Each remaining axis must keep at least four samples.
pub fn trim_interior(f: &Field, margins: &[(usize, usize)]) -> Result<Field> {
    if margins.len() != f.ndim() {
        return Err(Error::Config(format!(
            "{} margin pairs for a {}-axis field",
            margins.len(),
            f.ndim()
        )));
    }
    for (axis, (&n, &(lo, hi))) in f.dims().iter().zip(margins).enumerate() {
        if lo + hi + 4 > n {
            return Err(Error::DegenerateGrid(format!(
                "margins ({lo}, {hi}) leave fewer than 4 of {n} samples on axis {}",
                f.labels[axis]
            )));
        }
    }
    if margins.iter().all(|&(lo, hi)| lo == 0 && hi == 0) {
        return Ok(f.clone());
    }
    let view = f.values.slice_each_axis(|ax| {
        let (lo, hi) = margins[ax.axis.index()];
        Slice::from(lo..ax.len - hi)
    });
    Ok(Field {
        values: view.as_standard_layout().into_owned(),
        spacings: f.spacings.clone(),
        labels: f.labels.clone(),
    })
}

/// Serializes a field into the `FDI1` bundle layout.
pub fn encode_field(f: &Field) -> Vec<u8> {
    let n = f.ndim();
    let mut out = Vec::with_capacity(5 + n * 17 + f.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(n as u8);
    for &d in f.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &h in f.spacings() {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend(f.labels().iter().map(|l| l.code()));
    for &v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn error(&self, reason: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason,
        }
    }
}

/// Parses an `FDI1` bundle.
pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}"),
        });
    }
    let n = r.take(1, "axis count")?[0] as usize;
    if n == 0 {
        return Err(Error::InvalidField("empty dims".into()));
    }
    if n > MAX_AXES {
        return Err(Error::Format {
            offset: 4,
            reason: format!("axis count {n} exceeds {MAX_AXES}"),
        });
    }
    let mut dims = Vec::with_capacity(n);
    let mut count: usize = 1;
    for _ in 0..n {
        let at = r.pos;
        let d = r.u64("dims")?;
        let d = usize::try_from(d).ok().filter(|&d| d > 0);
        count = match d.and_then(|d| count.checked_mul(d)) {
            Some(c) if c.checked_mul(8).is_some() => c,
            _ => {
                return Err(Error::Format {
                    offset: at as u64,
                    reason: "dimension is zero or overflows".into(),
                })
            }
        };
        dims.push(d.unwrap());
    }
    let spacings = (0..n)
        .map(|_| r.f64("spacings"))
        .collect::<Result<Vec<_>>>()?;
    let codes = r.take(n, "axis labels")?;
    let mut labels = Vec::with_capacity(n);
    for (i, &c) in codes.iter().enumerate() {
        let label = AxisLabel::from_code(c).ok_or_else(|| Error::Format {
            offset: (r.pos - n + i) as u64,
            reason: format!("unknown axis label code {c}"),
        })?;
        labels.push(label);
    }
    let payload = r.take(count * 8, "sample payload")?;
    if r.pos != bytes.len() {
        return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Field::new(&dims, &spacings, &labels, data)
}

pub fn write_field(f: &Field, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_field(f))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

/// `foo.fdi` -> `foo.json`.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("json")
}

pub fn write_sidecar(path: impl AsRef<Path>, meta: &serde_json::Value) -> Result<()> {
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Provenance metadata stored next to a bundle, if any.
pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Option<serde_json::Value>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_1d(data: Vec<f64>, nt: usize) -> Field {
        let nx = data.len() / nt;
        Field::new(&[nx, nt], &[0.1, 0.01], &AxisLabel::standard(1), data).unwrap()
    }

    fn counter(dims: &[usize]) -> Field {
        let mut c = 0.0;
        Field::from_fn(dims, &vec![1.0; dims.len()], |_| {
            c += 1.0;
            c
        })
        .unwrap()
    }

    #[test]
    fn constant_field_has_zero_spread() {
        let s = field_1d(vec![3.0; 12], 4).stats();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.std, 0.0);
        assert_eq!((s.min, s.max), (3.0, 3.0));
    }

    #[test]
    fn population_std_of_pair() {
        let f = Field::new(&[1, 2], &[1.0, 1.0], &AxisLabel::standard(1), vec![-1.0, 1.0]).unwrap();
        let s = f.stats();
        assert_eq!(s.mean, 0.0);
        assert!((s.std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn std_matches_two_pass_sum() {
        let data: Vec<f64> = (0..64).map(|i| (0.37 * i as f64).sin() + 5.0).collect();
        let f = field_1d(data.clone(), 8);
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = f.stats();
        assert!((s.std - var.sqrt()).abs() <= 1e-12 * var.sqrt());
        assert!((s.mean - mean).abs() <= 1e-12 * mean.abs());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Field::new(&[], &[], &[], vec![]).is_err());
        assert!(Field::new(&[4], &[1.0], &[AxisLabel::T], vec![0.0; 4]).is_err());
        assert!(Field::new(&[2, 2], &[1.0, 0.0], &AxisLabel::standard(1), vec![0.0; 4]).is_err());
        assert!(Field::new(&[2, 2], &[1.0, 1.0], &[AxisLabel::T, AxisLabel::X], vec![0.0; 4]).is_err());
        assert!(Field::new(&[2, 2], &[1.0, 1.0], &AxisLabel::standard(1), vec![f64::NAN; 4]).is_err());
        assert!(Field::new(&[2, 3], &[1.0, 1.0], &AxisLabel::standard(1), vec![0.0; 4]).is_err());
    }

    #[test]
    fn zero_margins_are_identity() {
        let f = counter(&[6, 7]);
        assert_eq!(trim_interior(&f, &[(0, 0), (0, 0)]).unwrap(), f);
    }

    #[test]
    fn trimmed_dims() {
        let f = counter(&[10, 10]);
        let t = trim_interior(&f, &[(2, 2), (1, 1)]).unwrap();
        assert_eq!(t.dims(), &[6, 8]);
        assert_eq!(t.spacings(), f.spacings());
    }

    #[test]
    fn trimmed_samples_follow_index_map() {
        let f = Field::from_fn(&[5, 5], &[1.0, 1.0], |ix| (ix[0] * 5 + ix[1]) as f64).unwrap();
        for lo0 in 0..=1 {
            for hi1 in 0..=1 {
                let t = trim_interior(&f, &[(lo0, 0), (0, hi1)]).unwrap();
                for i in 0..t.dims()[0] {
                    for j in 0..t.dims()[1] {
                        assert_eq!(t.values()[[i, j]], f.values()[[i + lo0, j]]);
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_margins_are_degenerate() {
        let f = counter(&[10, 10]);
        let err = trim_interior(&f, &[(3, 4), (0, 0)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGrid(_)));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_field(&counter(&[3, 4]));
        bytes[0] = b'X';
        assert!(matches!(decode_field(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode_field(&counter(&[3, 4]));
        let header = 5 + 2 * 17;
        let err = decode_field(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, header as u64),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dim_overflow_is_rejected() {
        let mut bytes = encode_field(&counter(&[3, 4]));
        bytes[5..13].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_field(&bytes), Err(Error::Format { offset: 5, .. })));
    }

    #[test]
    fn empty_dims_rejected_on_read() {
        let mut bytes = b"FDI1".to_vec();
        bytes.push(0);
        assert!(matches!(decode_field(&bytes), Err(Error::InvalidField(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.fdi");
        write_field(&counter(&[3, 4]), &path).unwrap();
        assert!(read_sidecar(&path).unwrap().is_none());
        let meta = serde_json::json!({"equation": "burgers1d"});
        write_sidecar(&path, &meta).unwrap();
        assert_eq!(read_sidecar(&path).unwrap(), Some(meta));
    }
}
