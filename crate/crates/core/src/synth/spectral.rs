//! Periodic pseudo-spectral machinery shared by the reference solvers.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{ArrayD, Axis, Dimension, IxDyn};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) type Spectrum = ArrayD<Complex64>;

pub(crate) struct SpectralGrid {
    pub shape: Vec<usize>,
    pub lengths: Vec<f64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// Angular wavenumber per axis and index; the Nyquist entry of even
    /// axes is kept for even-order operators.
    wavenumbers: Vec<Vec<f64>>,
    dealias: ArrayD<f64>,
}

impl SpectralGrid {
    pub fn new(shape: &[usize], lengths: &[f64]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let wavenumbers = shape
            .iter()
            .zip(lengths)
            .map(|(&n, &l)| {
                (0..n)
                    .map(|i| {
                        let signed = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                        2.0 * PI * signed / l
                    })
                    .collect()
            })
            .collect();
        // Two-thirds rule for quadratic nonlinearities.
        let dealias = ArrayD::from_shape_fn(IxDyn(shape), |ix| {
            let keep = ix.slice().iter().zip(shape).all(|(&i, &n)| {
                let signed = if i <= n / 2 { i } else { n - i };
                3 * signed < n
            });
            if keep {
                1.0
            } else {
                0.0
            }
        });
        SpectralGrid {
            shape: shape.to_vec(),
            lengths: lengths.to_vec(),
            forward,
            inverse,
            wavenumbers,
            dealias,
        }
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn wavenumber(&self, axis: usize, index: usize) -> f64 {
        self.wavenumbers[axis][index]
    }

    /// Wavenumber for odd-order derivatives: zero at the Nyquist index.
    pub fn odd_wavenumber(&self, axis: usize, index: usize) -> f64 {
        let n = self.shape[axis];
        if n % 2 == 0 && index == n / 2 {
            0.0
        } else {
            self.wavenumbers[axis][index]
        }
    }

    pub fn k_max(&self, axis: usize) -> f64 {
        PI * self.shape[axis] as f64 / self.lengths[axis]
    }

    /// Builds a per-mode array from the multi-index.
    pub fn symbol(&self, f: impl Fn(&[usize]) -> Complex64) -> Spectrum {
        ArrayD::from_shape_fn(IxDyn(&self.shape), |ix| f(ix.slice()))
    }

    fn transform(&self, values: &mut Spectrum, plans: &[Arc<dyn Fft<f64>>]) {
        for (axis, fft) in plans.iter().enumerate() {
            let n = self.shape[axis];
            let mut buf = vec![Complex64::default(); n];
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            for mut lane in values.lanes_mut(Axis(axis)) {
                buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
                fft.process_with_scratch(&mut buf, &mut scratch);
                lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
            }
        }
    }

    pub fn forward(&self, u: &ArrayD<f64>) -> Spectrum {
        let mut s = u.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut s, &self.forward);
        s
    }

    pub fn inverse(&self, s: &Spectrum) -> ArrayD<f64> {
        let mut v = s.clone();
        self.transform(&mut v, &self.inverse);
        let scale = 1.0 / v.len() as f64;
        v.mapv(|z| z.re * scale)
    }

    /// Dealiased spectrum of `u^2` where `u` is the inverse of `s`.
    pub fn square(&self, s: &Spectrum) -> Spectrum {
        let u = self.inverse(s);
        let mut sq = self.forward(&u.mapv(|v| v * v));
        sq.zip_mut_with(&self.dealias, |z, m| *z *= *m);
        sq
    }
}

/// Classic fourth-order Runge-Kutta step for `y' = rhs(y)` on spectra.
pub(crate) fn rk4_step(
    state: &mut [Spectrum],
    dt: f64,
    rhs: &dyn Fn(&[Spectrum]) -> Vec<Spectrum>,
) {
    let axpy = |base: &[Spectrum], k: &[Spectrum], a: f64| -> Vec<Spectrum> {
        base.iter().zip(k).map(|(b, k)| b + &(k * Complex64::new(a, 0.0))).collect()
    };
    let k1 = rhs(state);
    let k2 = rhs(&axpy(state, &k1, dt / 2.0));
    let k3 = rhs(&axpy(state, &k2, dt / 2.0));
    let k4 = rhs(&axpy(state, &k3, dt));
    for (i, s) in state.iter_mut().enumerate() {
        let incr = (&k1[i] + &(&k2[i] * Complex64::new(2.0, 0.0)) + &(&k3[i] * Complex64::new(2.0, 0.0)) + &k4[i])
            * Complex64::new(dt / 6.0, 0.0);
        *s += &incr;
    }
}

/// Exponential time differencing RK4 coefficients for a diagonal linear
/// operator, evaluated by contour integrals around each `h*L`.
pub(crate) struct Etdrk4 {
    e: Spectrum,
    e2: Spectrum,
    q: Spectrum,
    f1: Spectrum,
    f2: Spectrum,
    f3: Spectrum,
}

impl Etdrk4 {
    pub fn new(linear: &Spectrum, h: f64) -> Self {
        const M: usize = 64;
        let roots: Vec<Complex64> = (0..M)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / M as f64))
            .collect();
        let mean = |f: &dyn Fn(Complex64) -> Complex64, l: Complex64| -> Complex64 {
            let hl = l * h;
            roots.iter().map(|r| f(hl + r)).sum::<Complex64>() / M as f64
        };
        let map = |f: &dyn Fn(Complex64) -> Complex64| linear.mapv(|l| mean(f, l) * h);
        Etdrk4 {
            e: linear.mapv(|l| (l * h).exp()),
            e2: linear.mapv(|l| (l * h / 2.0).exp()),
            q: map(&|z| ((z / 2.0).exp() - 1.0) / z),
            f1: map(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / (z * z * z)),
            f2: map(&|z| (2.0 + z + z.exp() * (z - 2.0)) / (z * z * z)),
            f3: map(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / (z * z * z)),
        }
    }

    pub fn step(&self, v: &mut Spectrum, nonlinear: &dyn Fn(&Spectrum) -> Spectrum) {
        let nv = nonlinear(v);
        let a = &(&self.e2 * &*v) + &(&self.q * &nv);
        let na = nonlinear(&a);
        let b = &(&self.e2 * &*v) + &(&self.q * &na);
        let nb = nonlinear(&b);
        let c = &(&self.e2 * &a) + &(&self.q * &(&(&nb * Complex64::new(2.0, 0.0)) - &nv));
        let nc = nonlinear(&c);
        let next = &(&self.e * &*v)
            + &(&(&nv * &self.f1) + &(&(&(&na + &nb) * Complex64::new(2.0, 0.0)) * &self.f2))
            + &(&nc * &self.f3);
        *v = next;
    }
}
