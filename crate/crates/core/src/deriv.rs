//! Numerical differentiation along one grid axis.
//!
//! Two stencil families are supported: central finite differences of a given
//! even order of accuracy (Fornberg weights), and local least-squares
//! polynomial fits over a centred window (Savitzky-Golay weights). Both can
//! use a coarsened step of `step_stride` grid points. Points closer to the
//! boundary than the stencil half-width get one-sided stencils with the same
//! node count; they are reported through [`Derivative::margin`] and are
//! trimmed before any system is assembled.

use nalgebra::DMatrix;
use ndarray::{ArrayD, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMethod {
    FiniteDifference,
    LocalPolynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffConfig {
    pub method: DiffMethod,
    pub fd_order_of_accuracy: usize,
    pub poly_degree: usize,
    pub poly_window: usize,
    pub step_stride: usize,
}

impl DiffConfig {
    pub fn finite_difference(order_of_accuracy: usize) -> Self {
        DiffConfig {
            method: DiffMethod::FiniteDifference,
            fd_order_of_accuracy: order_of_accuracy,
            ..Self::default()
        }
    }

    pub fn local_polynomial(degree: usize, window: usize) -> Self {
        DiffConfig {
            method: DiffMethod::LocalPolynomial,
            poly_degree: degree,
            poly_window: window,
            ..Self::default()
        }
    }

    /// Degree 6 over 21 points: enough headroom for fourth derivatives.
    pub fn noisy_default() -> Self {
        Self::local_polynomial(6, 21)
    }

    /// Fourth-order differences for clean 1-D data, `noisy_default` for
    /// noisy 1-D data, second-order differences in 2-D and second-order
    /// differences over stride 2 in 3-D.
    pub fn default_for(spatial_dims: usize, noisy: bool) -> Self {
        match spatial_dims {
            1 if noisy => Self::noisy_default(),
            1 => Self::finite_difference(4),
            2 => Self::finite_difference(2),
            _ => Self::finite_difference(2).with_stride(2),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.step_stride = stride;
        self
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Config(format!(
                "derivative order {order} outside 1..={MAX_ORDER}"
            )));
        }
        if self.step_stride == 0 {
            return Err(Error::Config("step_stride must be at least 1".into()));
        }
        match self.method {
            DiffMethod::FiniteDifference => {
                let p = self.fd_order_of_accuracy;
                if p < 2 || p % 2 != 0 {
                    return Err(Error::Config(format!(
                        "fd order of accuracy must be even and >= 2, got {p}"
                    )));
                }
            }
            DiffMethod::LocalPolynomial => {
                if self.poly_degree < order {
                    return Err(Error::Config(format!(
                        "polynomial degree {} cannot represent derivative order {order}",
                        self.poly_degree
                    )));
                }
                if self.poly_window % 2 == 0 || self.poly_window <= self.poly_degree {
                    return Err(Error::Config(format!(
                        "polynomial window {} must be odd and exceed degree {}",
                        self.poly_window, self.poly_degree
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stencil half-width in stencil steps (not grid points).
    fn half_width(&self, order: usize) -> usize {
        match self.method {
            DiffMethod::FiniteDifference => (order + 1) / 2 - 1 + self.fd_order_of_accuracy / 2,
            DiffMethod::LocalPolynomial => self.poly_window / 2,
        }
    }

    /// Grid points per end whose stencil would leave the axis.
    pub fn margin(&self, order: usize) -> usize {
        self.half_width(order) * self.step_stride
    }
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            method: DiffMethod::FiniteDifference,
            fd_order_of_accuracy: 2,
            poly_degree: 6,
            poly_window: 21,
            step_stride: 1,
        }
    }
}

/// A differentiated field together with the number of stencil-incomplete
/// points at each end of the differentiated axis.
#[derive(Clone, Debug)]
pub struct Derivative {
    pub field: Field,
    pub axis: usize,
    pub margin: usize,
}

/// Fornberg's recursion: weights at `nodes` for the `order`-th derivative of
/// the interpolating polynomial, evaluated at 0.
pub fn interpolation_weights(nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Weights for the `order`-th derivative at 0 of the least-squares
/// polynomial of `degree` through `nodes`.
pub fn least_squares_weights(nodes: &[f64], degree: usize, order: usize) -> Vec<f64> {
    // Scaling nodes into [-1, 1] keeps the Vandermonde matrix well conditioned.
    let scale = nodes.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let vander = DMatrix::from_fn(nodes.len(), degree + 1, |j, k| {
        (nodes[j] / scale).powi(k as i32)
    });
    let pinv = vander
        .pseudo_inverse(1e-14)
        .expect("vandermonde pseudo-inverse");
    let factorial: f64 = (1..=order).map(|k| k as f64).product();
    let factor = factorial / scale.powi(order as i32);
    pinv.row(order).iter().map(|w| w * factor).collect()
}

struct Stencil {
    width: usize,
    half: usize,
    stride: usize,
    /// `by_offset[c]`: weights when the evaluation point is node `c`.
    by_offset: Vec<Vec<f64>>,
}

impl Stencil {
    fn new(cfg: &DiffConfig, order: usize, spacing: f64) -> Self {
        let half = cfg.half_width(order);
        let width = 2 * half + 1;
        let scale = (spacing * cfg.step_stride as f64).powi(order as i32).recip();
        let by_offset = (0..width)
            .map(|c| {
                let nodes: Vec<f64> = (0..width).map(|j| j as f64 - c as f64).collect();
                let w = match cfg.method {
                    DiffMethod::FiniteDifference => interpolation_weights(&nodes, order),
                    DiffMethod::LocalPolynomial => {
                        least_squares_weights(&nodes, cfg.poly_degree, order)
                    }
                };
                w.into_iter().map(|w| w * scale).collect()
            })
            .collect();
        Stencil {
            width,
            half,
            stride: cfg.step_stride,
            by_offset,
        }
    }

    fn apply(&self, src: &[f64], dst: &mut [f64]) {
        let n = src.len();
        let s = self.stride;
        for (i, out) in dst.iter_mut().enumerate() {
            let left = i / s;
            let right = (n - 1 - i) / s;
            let c = if left < self.half {
                left
            } else if right < self.half {
                self.width - 1 - right
            } else {
                self.half
            };
            let start = i - c * s;
            *out = self.by_offset[c]
                .iter()
                .enumerate()
                .map(|(j, w)| w * src[start + j * s])
                .sum();
        }
    }
}

/// Approximates the `order`-th derivative of `f` along `axis`.
pub fn differentiate(f: &Field, axis: usize, order: usize, cfg: &DiffConfig) -> Result<Derivative> {
    cfg.validate(order)?;
    if axis >= f.ndim() {
        return Err(Error::Config(format!(
            "axis {axis} out of range for a {}-axis field",
            f.ndim()
        )));
    }
    let n = f.dims()[axis];
    let half = cfg.half_width(order);
    let needed = (2 * half + 2) * cfg.step_stride;
    if n < needed {
        return Err(Error::Config(format!(
            "stencil of {} points at stride {} needs {needed} samples on axis {}, found {n}",
            2 * half + 1,
            cfg.step_stride,
            f.labels()[axis]
        )));
    }
    let stencil = Stencil::new(cfg, order, f.spacings()[axis]);
    let mut out = ArrayD::<f64>::zeros(f.dims());
    let mut src = vec![0.0; n];
    let mut dst = vec![0.0; n];
    Zip::from(f.values().lanes(Axis(axis)))
        .and(out.lanes_mut(Axis(axis)))
        .for_each(|lane, mut target| {
            src.iter_mut().zip(lane.iter()).for_each(|(s, v)| *s = *v);
            stencil.apply(&src, &mut dst);
            target.iter_mut().zip(&dst).for_each(|(t, v)| *t = *v);
        });
    Ok(Derivative {
        field: f.with_values(out),
        axis,
        margin: cfg.margin(order),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AxisLabel;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Field varying along x only, with a short time axis.
    fn along_x(n: usize, h: f64, x0: f64, f: impl Fn(f64) -> f64) -> Field {
        let nt = 3;
        let data = (0..n)
            .flat_map(|i| std::iter::repeat(f(x0 + i as f64 * h)).take(nt))
            .collect();
        Field::new(&[n, nt], &[h, 1.0], &AxisLabel::standard(1), data).unwrap()
    }

    fn interior(d: &Derivative) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = d.field.dims()[0];
        let nt = d.field.dims()[1];
        (d.margin..n - d.margin).map(move |i| (i, d.field.data()[i * nt]))
    }

    #[test]
    fn central_difference_exact_on_quadratic() {
        let f = along_x(40, 0.1, -2.0, |x| x * x);
        let d = differentiate(&f, 0, 2, &DiffConfig::finite_difference(2)).unwrap();
        for (_, v) in interior(&d) {
            assert!((v - 2.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn first_derivative_within_truncation_bound() {
        let n = 256;
        let h = 2.0 * PI / n as f64;
        let f = along_x(n, h, 0.0, f64::sin);
        let d = differentiate(&f, 0, 1, &DiffConfig::finite_difference(2)).unwrap();
        let bound = h * h / 6.0 * (1.0 + 1e-6);
        for (i, v) in interior(&d) {
            let exact = (i as f64 * h).cos();
            assert!((v - exact).abs() <= bound, "i={i}");
        }
    }

    #[test]
    fn local_polynomial_exact_on_quintic() {
        let p = |x: f64| 0.3 * x.powi(5) - x.powi(4) + 2.0 * x.powi(3) - x + 1.0;
        let p3 = |x: f64| 18.0 * x * x - 24.0 * x + 12.0;
        let h = 0.05;
        let f = along_x(60, h, -1.5, p);
        let d = differentiate(&f, 0, 3, &DiffConfig::local_polynomial(6, 21)).unwrap();
        // Polynomial reproduction holds for the one-sided edge stencils too.
        for i in 0..60 {
            let v = d.field.data()[i * 3];
            assert!((v - p3(-1.5 + i as f64 * h)).abs() < 1e-8, "i={i} {v}");
        }
    }

    #[test]
    fn weights_reproduce_monomials() {
        let nodes: Vec<f64> = (-3..=3).map(f64::from).collect();
        for order in 1..=4 {
            let fd = interpolation_weights(&nodes, order);
            let ls = least_squares_weights(&nodes, 6, order);
            for (a, b) in fd.iter().zip(&ls) {
                assert!((a - b).abs() < 1e-9);
            }
            let d: f64 = fd.iter().zip(&nodes).map(|(w, x)| w * x.powi(order as i32)).sum();
            let fact: f64 = (1..=order).map(|k| k as f64).product();
            assert!((d - fact).abs() < 1e-9);
        }
    }

    #[test]
    fn margins() {
        let fd = DiffConfig::finite_difference(2);
        assert_eq!((fd.margin(1), fd.margin(2), fd.margin(3), fd.margin(4)), (1, 1, 2, 2));
        assert_eq!(DiffConfig::finite_difference(4).margin(2), 2);
        assert_eq!(DiffConfig::noisy_default().margin(1), 10);
        assert_eq!(fd.with_stride(2).margin(4), 4);
    }

    #[test]
    fn rejects_bad_requests() {
        let f = along_x(30, 0.1, 0.0, |x| x);
        let fd = DiffConfig::finite_difference(2);
        assert!(differentiate(&f, 0, 5, &fd).is_err());
        assert!(differentiate(&f, 0, 0, &fd).is_err());
        assert!(differentiate(&f, 0, 1, &DiffConfig::finite_difference(3)).is_err());
        assert!(differentiate(&f, 0, 1, &DiffConfig::local_polynomial(6, 31)).is_err());
        assert!(differentiate(&f, 0, 4, &DiffConfig::local_polynomial(3, 11)).is_err());
        assert!(differentiate(&f, 0, 1, &DiffConfig::local_polynomial(6, 6)).is_err());
        assert!(differentiate(&f, 2, 1, &fd).is_err());
    }

    fn max_interior_error(n: usize, order: usize, accuracy: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        let f = along_x(n, h, 0.0, |x| (2.0 * x).sin());
        let d = differentiate(&f, 0, order, &DiffConfig::finite_difference(accuracy)).unwrap();
        let exact = |x: f64| {
            let s = 2f64.powi(order as i32);
            match order % 4 {
                1 => s * (2.0 * x).cos(),
                2 => -s * (2.0 * x).sin(),
                3 => -s * (2.0 * x).cos(),
                _ => s * (2.0 * x).sin(),
            }
        };
        interior(&d)
            .map(|(i, v)| (v - exact(i as f64 * h)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn convergence_rate_matches_nominal_order() {
        for accuracy in [2, 4] {
            for order in 1..=4 {
                let e1 = max_interior_error(128, order, accuracy);
                let e2 = max_interior_error(256, order, accuracy);
                let rate = (e1 / e2).log2();
                assert!(
                    (rate - accuracy as f64).abs() < 0.2,
                    "order {order} accuracy {accuracy}: rate {rate}"
                );
            }
        }
    }

    #[test]
    fn stride_equals_decimated_grid() {
        let n = 120;
        let h = 0.05;
        let g = |x: f64| (1.3 * x).sin() + 0.2 * x * x;
        let f = along_x(n, h, 0.0, g);
        for cfg in [DiffConfig::finite_difference(2), DiffConfig::local_polynomial(4, 9)] {
            let strided = differentiate(&f, 0, 2, &cfg.with_stride(2)).unwrap();
            let coarse = along_x(n / 2, 2.0 * h, 0.0, g);
            let dc = differentiate(&coarse, 0, 2, &cfg).unwrap();
            for (i, v) in interior(&dc) {
                let fine = strided.field.data()[2 * i * 3];
                assert!((fine - v).abs() < 1e-9, "{fine} vs {v}");
            }
        }
    }

    proptest! {
        #[test]
        fn differentiation_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
            poly in any::<bool>(),
            order in 1usize..=4,
        ) {
            let n = 48;
            let f1 = along_x(n, 0.1, 0.0, |x| (x + seed as f64 * 0.01).sin());
            let f2 = along_x(n, 0.1, 0.0, |x| (0.5 * x * x).cos() * (seed % 7) as f64);
            let comb = f1.with_values(f1.values() * a + f2.values() * b);
            let cfg = if poly { DiffConfig::local_polynomial(6, 11) } else { DiffConfig::finite_difference(4) };
            let d1 = differentiate(&f1, 0, order, &cfg).unwrap().field;
            let d2 = differentiate(&f2, 0, order, &cfg).unwrap().field;
            let dc = differentiate(&comb, 0, order, &cfg).unwrap().field;
            let scale = d1.data().iter().chain(d2.data()).fold(1.0f64, |m, v| m.max(v.abs())) * (a.abs() + b.abs()).max(1.0);
            for ((x, y), z) in d1.data().iter().zip(d2.data()).zip(dc.data()) {
                // Weights grow like h^-order, so rounding does too.
                prop_assert!((a * x + b * y - z).abs() <= 1e-9 * scale);
            }
        }
    }
}
