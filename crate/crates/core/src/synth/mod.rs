//! Reference solutions of the benchmark equations and the additive noise
//! model `u_n = u + alpha * std(u) * g`.

mod spectral;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayD, Dimension, IxDyn};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candlib::TermDescriptor;
use crate::field::{AxisLabel, Field};
use crate::{Error, Result};

use spectral::{rk4_step, Etdrk4, SpectralGrid, Spectrum};

/// Bumped whenever a default grid, coefficient or initial condition changes.
pub const CATALOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationName {
    Burgers1d,
    Kdv,
    Ks,
    Wave2d,
    Burgers2d,
    Diffusion3d,
    Burgers3d,
}

impl EquationName {
    pub const ALL: [EquationName; 7] = [
        EquationName::Burgers1d,
        EquationName::Kdv,
        EquationName::Ks,
        EquationName::Wave2d,
        EquationName::Burgers2d,
        EquationName::Diffusion3d,
        EquationName::Burgers3d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EquationName::Burgers1d => "burgers1d",
            EquationName::Kdv => "kdv",
            EquationName::Ks => "ks",
            EquationName::Wave2d => "wave2d",
            EquationName::Burgers2d => "burgers2d",
            EquationName::Diffusion3d => "diffusion3d",
            EquationName::Burgers3d => "burgers3d",
        }
    }

    pub fn spatial_dims(self) -> usize {
        match self {
            EquationName::Burgers1d | EquationName::Kdv | EquationName::Ks => 1,
            EquationName::Wave2d | EquationName::Burgers2d => 2,
            EquationName::Diffusion3d | EquationName::Burgers3d => 3,
        }
    }
}

impl fmt::Display for EquationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EquationName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EquationName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnsupportedEquation(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueTerm {
    pub term: TermDescriptor,
    pub coefficient: f64,
}

/// One benchmark equation: `d^lhs_order u / dt^lhs_order = sum c_i * term_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub name: EquationName,
    pub coefficients: BTreeMap<String, f64>,
    pub true_terms: Vec<TrueTerm>,
    pub lhs_order: u32,
}

impl EquationSpec {
    /// Catalog entry with the benchmark coefficients.
    pub fn catalog(name: EquationName) -> Self {
        use AxisLabel::{X, Y, Z};
        let adv = |axis| TermDescriptor::deriv(1, axis, 1);
        let lin = |axis, order| TermDescriptor::deriv(0, axis, order);
        let (coefficients, terms, lhs_order): (Vec<(&str, f64)>, Vec<(TermDescriptor, f64)>, u32) = match name {
            EquationName::Burgers1d => (
                vec![("nu", 0.05)],
                vec![(adv(X), -1.0), (lin(X, 2), 0.05)],
                1,
            ),
            EquationName::Ks => (
                vec![("a2", 0.7), ("a3", 1.0), ("a4", 1.3)],
                vec![(adv(X), -1.0), (lin(X, 2), -0.7), (lin(X, 3), -1.0), (lin(X, 4), -1.3)],
                1,
            ),
            EquationName::Kdv => (
                vec![("c", 0.5), ("b", 1.5), ("d", 0.25)],
                vec![(lin(X, 1), -0.5), (adv(X), -1.5), (lin(X, 3), -0.25)],
                1,
            ),
            EquationName::Wave2d => (
                vec![("c2", 1.0)],
                vec![(lin(X, 2), 1.0), (lin(Y, 2), 1.0)],
                2,
            ),
            EquationName::Burgers2d => (
                vec![("nu", 0.01)],
                vec![(adv(X), -1.0), (lin(X, 2), 0.01), (adv(Y), -1.0), (lin(Y, 2), 0.01)],
                1,
            ),
            EquationName::Diffusion3d => (
                vec![("dx", 1.0), ("dy", 1.5), ("dz", 2.0)],
                vec![(lin(X, 2), 1.0), (lin(Y, 2), 1.5), (lin(Z, 2), 2.0)],
                1,
            ),
            EquationName::Burgers3d => (
                vec![("nu", 0.1)],
                vec![
                    (adv(X), -1.0),
                    (lin(X, 2), 0.1),
                    (adv(Y), -1.0),
                    (lin(Y, 2), 0.1),
                    (adv(Z), -1.0),
                    (lin(Z, 2), 0.1),
                ],
                1,
            ),
        };
        EquationSpec {
            name,
            coefficients: coefficients.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            true_terms: terms
                .into_iter()
                .map(|(term, coefficient)| TrueTerm { term, coefficient })
                .collect(),
            lhs_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_terms.is_empty() {
            return Err(Error::Config(format!("{}: no true terms", self.name)));
        }
        if !(1..=2).contains(&self.lhs_order) {
            return Err(Error::Config(format!("{}: lhs order {}", self.name, self.lhs_order)));
        }
        let finite = self.coefficients.values().chain(self.true_terms.iter().map(|t| &t.coefficient));
        if finite.into_iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("{}: non-finite coefficient", self.name)));
        }
        Ok(())
    }

    fn coef(&self, key: &str) -> f64 {
        self.coefficients.get(key).copied().unwrap_or(0.0)
    }

    /// Human-readable form, e.g. `u_t = -1*u*u_x + 0.05*u_xx`.
    pub fn form(&self) -> String {
        let lhs = if self.lhs_order == 2 { "u_tt" } else { "u_t" };
        let rhs: Vec<String> = self
            .true_terms
            .iter()
            .map(|t| format!("{}*{}", t.coefficient, t.term.name()))
            .collect();
        format!("{lhs} = {}", rhs.join(" + "))
    }
}

/// Output grid and solver resolution. The last axis is time; `extents`
/// holds the periodic spatial lengths followed by the output duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extents: Vec<f64>,
    pub points: Vec<usize>,
    /// Solver steps per output interval.
    pub substeps: usize,
    /// Solver points per output point on each spatial axis.
    #[serde(default = "one")]
    pub oversample: usize,
    /// Integration time discarded before the first output sample.
    #[serde(default)]
    pub t_start: f64,
}

fn one() -> usize {
    1
}

impl GridSpec {
    pub fn default_for(name: EquationName) -> Self {
        let g = |extents: Vec<f64>, points: Vec<usize>, substeps, oversample, t_start| GridSpec {
            extents,
            points,
            substeps,
            oversample,
            t_start,
        };
        match name {
            EquationName::Burgers1d => g(vec![16.0, 10.0], vec![256, 101], 50, 2, 0.0),
            EquationName::Ks => g(vec![32.0 * PI, 40.0], vec![256, 201], 10, 1, 20.0),
            EquationName::Kdv => g(vec![40.0, 20.0], vec![256, 201], 10, 1, 0.0),
            EquationName::Wave2d => g(vec![10.0, 10.0, 5.0], vec![64, 64, 101], 2, 1, 0.0),
            EquationName::Burgers2d => g(vec![10.0, 10.0, 10.0], vec![64, 64, 101], 2, 1, 0.0),
            EquationName::Diffusion3d => g(vec![12.0, 12.0, 12.0, 1.0], vec![48, 48, 48, 40], 10, 1, 0.0),
            EquationName::Burgers3d => g(vec![12.0, 12.0, 12.0, 4.0], vec![48, 48, 48, 40], 8, 1, 0.0),
        }
    }

    pub fn spatial_dims(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn time_points(&self) -> usize {
        *self.points.last().unwrap_or(&0)
    }

    pub fn dt_out(&self) -> f64 {
        self.extents[self.spatial_dims()] / (self.time_points() as f64 - 1.0)
    }

    pub fn dt(&self) -> f64 {
        self.dt_out() / self.substeps as f64
    }

    pub fn validate(&self, spatial: usize) -> Result<()> {
        if self.points.len() != spatial + 1 || self.extents.len() != spatial + 1 {
            return Err(Error::Config(format!(
                "grid needs {} extents and point counts, got {} and {}",
                spatial + 1,
                self.extents.len(),
                self.points.len()
            )));
        }
        if self.extents.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::Config("grid extents must be positive".into()));
        }
        if self.points[..spatial].iter().any(|&n| n < 8) {
            return Err(Error::Config("spatial point counts must be at least 8".into()));
        }
        if self.time_points() < 16 {
            return Err(Error::Config("at least 16 output times required".into()));
        }
        if self.substeps == 0 || self.oversample == 0 {
            return Err(Error::Config("substeps and oversample must be at least 1".into()));
        }
        if !(self.t_start.is_finite() && self.t_start >= 0.0) {
            return Err(Error::Config("t_start must be non-negative".into()));
        }
        Ok(())
    }

    /// Centered spatial coordinate of solver index `i` on `axis`.
    fn coord(&self, axis: usize, i: usize) -> f64 {
        let n = self.points[axis] * self.oversample;
        let l = self.extents[axis];
        -l / 2.0 + l * i as f64 / n as f64
    }

    fn output_spacings(&self) -> Vec<f64> {
        let s = self.spatial_dims();
        let mut h: Vec<f64> = (0..s).map(|a| self.extents[a] / self.points[a] as f64).collect();
        h.push(self.dt_out());
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Self {
        NoiseSpec { alpha, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("noise level {} must be non-negative", self.alpha)));
        }
        Ok(())
    }
}

/// Default initial condition of each catalog equation at centered
/// coordinates. Wave2d starts at rest.
pub fn default_initial(name: EquationName, grid: &GridSpec) -> impl Fn(&[f64]) -> f64 {
    let lx = grid.extents[0];
    move |x: &[f64]| -> f64 {
        let gauss = |c: &[f64], w: &[f64]| -> f64 {
            (-x.iter().zip(c).zip(w).map(|((x, c), w)| ((x - c) / w).powi(2)).sum::<f64>()).exp()
        };
        match name {
            EquationName::Burgers1d => gauss(&[-1.0], &[1.0]),
            EquationName::Kdv => 1.2 * gauss(&[-8.0], &[2.0]) + 0.6 * gauss(&[2.0], &[2.5]),
            EquationName::Ks => {
                let s = (x[0] + lx / 2.0) / 16.0;
                s.cos() * (1.0 + s.sin())
            }
            EquationName::Wave2d => gauss(&[-1.0, 0.5], &[1.0, 1.0]),
            EquationName::Burgers2d => 0.1 * gauss(&[-1.0, -0.5], &[1.5, 1.5]),
            EquationName::Diffusion3d => gauss(&[-1.0, 0.5, 0.0], &[1.0, 1.0, 1.0]),
            EquationName::Burgers3d => 1.5 * gauss(&[-1.0, 0.5, 0.0], &[2.0, 2.0, 2.0]),
        }
    }
}

/// Solves `eq` from its default initial condition. Burgers1d subtracts the
/// grid mean of its initial profile.
pub fn solve_reference(eq: &EquationSpec, grid: &GridSpec) -> Result<Field> {
    let ic = default_initial(eq.name, grid);
    if eq.name == EquationName::Burgers1d {
        grid.validate(1)?;
        let n = grid.points[0] * grid.oversample;
        let mean = (0..n).map(|i| ic(&[grid.coord(0, i)])).sum::<f64>() / n as f64;
        return solve_with_initial(eq, grid, |x| ic(x) - mean);
    }
    solve_with_initial(eq, grid, ic)
}

/// Solves `eq` on `grid` from an arbitrary initial profile given in
/// centered spatial coordinates.
pub fn solve_with_initial(
    eq: &EquationSpec,
    grid: &GridSpec,
    initial: impl Fn(&[f64]) -> f64,
) -> Result<Field> {
    eq.validate()?;
    let spatial = eq.name.spatial_dims();
    grid.validate(spatial)?;
    let solver_shape: Vec<usize> = grid.points[..spatial].iter().map(|&n| n * grid.oversample).collect();
    let sg = SpectralGrid::new(&solver_shape, &grid.extents[..spatial]);
    let u0 = ArrayD::from_shape_fn(IxDyn(&solver_shape), |ix| {
        let x: Vec<f64> = ix.slice().iter().enumerate().map(|(a, &i)| grid.coord(a, i)).collect();
        initial(&x)
    });
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidField("non-finite initial condition".into()));
    }
    let amplitude = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out_dims = grid.points[..spatial].to_vec();
    out_dims.push(grid.time_points());
    let mut out = ArrayD::<f64>::zeros(IxDyn(&out_dims));
    let record = |out: &mut ArrayD<f64>, j: usize, s: &Spectrum| -> Result<()> {
        let u = sg.inverse(s);
        let stride = grid.oversample;
        let mut ix = vec![0usize; spatial + 1];
        ix[spatial] = j;
        for (pos, v) in u.indexed_iter() {
            let p = pos.slice();
            if p.iter().all(|&i| i % stride == 0) {
                if !v.is_finite() {
                    return Err(Error::Unstable {
                        axis: AxisLabel::X.to_string(),
                        reason: format!("solution blew up before t = {}", j as f64 * grid.dt_out()),
                    });
                }
                for a in 0..spatial {
                    ix[a] = p[a] / stride;
                }
                out[IxDyn(&ix)] = *v;
            }
        }
        Ok(())
    };
    let dt = grid.dt();
    let burn_in = (grid.t_start / dt).round() as usize;
    let steps_per_output = grid.substeps;
    let nt = grid.time_points();

    match eq.name {
        EquationName::Ks | EquationName::Kdv => {
            let (linear, scale) = one_d_operator(eq, &sg);
            check_stability(&sg, dt, |a| scale.abs() * sg.k_max(a) * amplitude.max(3.0), 2.0)?;
            let etd = Etdrk4::new(&linear, dt);
            let factor = sg.symbol(|ix| Complex64::new(0.0, -0.5 * scale * sg.odd_wavenumber(0, ix[0])));
            let nonlinear = |v: &Spectrum| &sg.square(v) * &factor;
            let mut v = sg.forward(&u0);
            for _ in 0..burn_in {
                etd.step(&mut v, &nonlinear);
            }
            for j in 0..nt {
                if j > 0 {
                    for _ in 0..steps_per_output {
                        etd.step(&mut v, &nonlinear);
                    }
                }
                record(&mut out, j, &v)?;
            }
        }
        EquationName::Wave2d => {
            let c2 = eq.coef("c2");
            check_stability(&sg, dt, |a| c2.sqrt() * sg.k_max(a), 2.5)?;
            let symbol = sg.symbol(|ix| {
                let k2: f64 = (0..spatial).map(|a| sg.wavenumber(a, ix[a]).powi(2)).sum();
                Complex64::new(-c2 * k2, 0.0)
            });
            let rhs = |s: &[Spectrum]| vec![s[1].clone(), &s[0] * &symbol];
            let mut state = vec![sg.forward(&u0), sg.symbol(|_| Complex64::default())];
            march(&mut state, dt, burn_in, steps_per_output, nt, &rhs, |j, s| record(&mut out, j, &s[0]))?;
        }
        EquationName::Burgers1d | EquationName::Burgers2d | EquationName::Burgers3d | EquationName::Diffusion3d => {
            let diffusion: Vec<f64> = match eq.name {
                EquationName::Diffusion3d => vec![eq.coef("dx"), eq.coef("dy"), eq.coef("dz")],
                _ => vec![eq.coef("nu"); spatial],
            };
            let advective = eq.name != EquationName::Diffusion3d;
            check_stability(
                &sg,
                dt,
                |a| {
                    let k = sg.k_max(a);
                    diffusion[a] * k * k + if advective { amplitude * k } else { 0.0 }
                },
                2.5,
            )?;
            let decay = sg.symbol(|ix| {
                let d: f64 = (0..spatial).map(|a| diffusion[a] * sg.wavenumber(a, ix[a]).powi(2)).sum();
                Complex64::new(-d, 0.0)
            });
            // u * sum_a u_a = 0.5 * sum_a (u^2)_a
            let adv = sg.symbol(|ix| {
                let k: f64 = (0..spatial).map(|a| sg.odd_wavenumber(a, ix[a])).sum();
                Complex64::new(0.0, -0.5 * k)
            });
            let rhs = |s: &[Spectrum]| {
                let mut r = &s[0] * &decay;
                if advective {
                    r += &(&sg.square(&s[0]) * &adv);
                }
                vec![r]
            };
            let mut state = vec![sg.forward(&u0)];
            march(&mut state, dt, burn_in, steps_per_output, nt, &rhs, |j, s| record(&mut out, j, &s[0]))?;
        }
    }
    let labels = AxisLabel::standard(spatial);
    Field::from_array(out, grid.output_spacings(), labels)
}

fn march(
    state: &mut [Spectrum],
    dt: f64,
    burn_in: usize,
    steps_per_output: usize,
    nt: usize,
    rhs: &dyn Fn(&[Spectrum]) -> Vec<Spectrum>,
    mut record: impl FnMut(usize, &[Spectrum]) -> Result<()>,
) -> Result<()> {
    for _ in 0..burn_in {
        rk4_step(state, dt, rhs);
    }
    for j in 0..nt {
        if j > 0 {
            for _ in 0..steps_per_output {
                rk4_step(state, dt, rhs);
            }
        }
        record(j, state)?;
    }
    Ok(())
}

/// Diagonal linear operator and nonlinear scale `b` of
/// `u_t = L u - b * u * u_x` for the stiff 1-D equations.
fn one_d_operator(eq: &EquationSpec, sg: &SpectralGrid) -> (Spectrum, f64) {
    match eq.name {
        EquationName::Ks => {
            let (a2, a3, a4) = (eq.coef("a2"), eq.coef("a3"), eq.coef("a4"));
            let l = sg.symbol(|ix| {
                let k = sg.wavenumber(0, ix[0]);
                let ko = sg.odd_wavenumber(0, ix[0]);
                Complex64::new(a2 * k * k - a4 * k.powi(4), a3 * ko.powi(3))
            });
            (l, 1.0)
        }
        _ => {
            let (c, b, d) = (eq.coef("c"), eq.coef("b"), eq.coef("d"));
            let l = sg.symbol(|ix| {
                let k = sg.odd_wavenumber(0, ix[0]);
                Complex64::new(0.0, -c * k + d * k.powi(3))
            });
            (l, b)
        }
    }
}

/// Rejects a step size whose per-axis spectral radius estimate exceeds
/// `limit`, naming the axis that contributes most.
fn check_stability(sg: &SpectralGrid, dt: f64, rate: impl Fn(usize) -> f64, limit: f64) -> Result<()> {
    let rates: Vec<f64> = (0..sg.ndim()).map(rate).collect();
    let total: f64 = rates.iter().sum();
    if dt * total > limit {
        let worst = (0..rates.len())
            .max_by(|&a, &b| rates[a].total_cmp(&rates[b]))
            .unwrap_or(0);
        return Err(Error::Unstable {
            axis: AxisLabel::standard(sg.ndim())[worst].to_string(),
            reason: format!(
                "step {dt:.3e} times spectral radius {total:.3e} exceeds {limit}; increase substeps"
            ),
        });
    }
    Ok(())
}

/// Standard normal draw number `index` of the stream `seed`. Draw `i`
/// consumes ChaCha words `[4i, 4i + 4)`, so any subset of indices can be
/// generated independently.
pub fn standard_normal_at(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(4 * index as u128);
    box_muller(&mut rng)
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Adds `alpha * std(u) * g_i` to every sample, with `g_i` drawn in
/// row-major order. `alpha == 0` returns an exact copy.
pub fn inject_noise(f: &Field, noise: &NoiseSpec) -> Field {
    if noise.alpha == 0.0 {
        return f.clone();
    }
    let sigma = noise.alpha * f.stats().std;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let values = f.values().mapv(|v| v + sigma * box_muller(&mut rng));
    f.with_values(values)
}
