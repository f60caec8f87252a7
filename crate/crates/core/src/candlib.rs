//! Candidate-term libraries.
//!
//! Every candidate is a power of `u` times at most one pure spatial
//! derivative of `u`. Terms are formed pointwise after differentiating `u`,
//! never by differentiating products.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::deriv::{differentiate, DiffConfig, MAX_ORDER};
use crate::error::{Error, Result};
use crate::field::{trim_interior, AxisLabel, Field};

pub const MAX_POWER: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermDescriptor {
    pub u_power: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<AxisLabel>,
    #[serde(default)]
    pub order: u32,
}

impl TermDescriptor {
    pub const CONSTANT: TermDescriptor = TermDescriptor {
        u_power: 0,
        axis: None,
        order: 0,
    };

    pub fn power(u_power: u32) -> Self {
        TermDescriptor {
            u_power,
            axis: None,
            order: 0,
        }
    }

    pub fn deriv(u_power: u32, axis: AxisLabel, order: u32) -> Self {
        TermDescriptor {
            u_power,
            axis: Some(axis),
            order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_power > MAX_POWER {
            return Err(Error::Config(format!(
                "u power {} exceeds {MAX_POWER}",
                self.u_power
            )));
        }
        match self.axis {
            None if self.order != 0 => Err(Error::Config(format!(
                "derivative order {} given without an axis",
                self.order
            ))),
            Some(a) if a == AxisLabel::T => Err(Error::Config(
                "time derivatives are not candidate terms".into(),
            )),
            Some(_) if self.order == 0 || self.order as usize > MAX_ORDER => Err(Error::Config(
                format!("derivative order {} outside 1..={MAX_ORDER}", self.order),
            )),
            _ => Ok(()),
        }
    }

    pub fn derivative(&self) -> Option<(AxisLabel, u32)> {
        self.axis.filter(|_| self.order > 0).map(|a| (a, self.order))
    }

    pub fn is_constant(&self) -> bool {
        self.u_power == 0 && self.derivative().is_none()
    }

    /// Canonical display string, e.g. `u^2*u_xxx`.
    pub fn name(&self) -> String {
        let power = match self.u_power {
            0 => None,
            1 => Some("u".to_string()),
            p => Some(format!("u^{p}")),
        };
        let deriv = self
            .derivative()
            .map(|(a, o)| format!("u_{}", a.as_str().repeat(o as usize)));
        match (power, deriv) {
            (None, None) => "1".into(),
            (Some(p), None) => p,
            (None, Some(d)) => d,
            (Some(p), Some(d)) => format!("{p}*{d}"),
        }
    }
}

impl fmt::Display for TermDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LibrarySpec {
    pub terms: Vec<TermDescriptor>,
    pub lhs_order: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LibraryJson {
    Bare(Vec<TermDescriptor>),
    Full {
        terms: Vec<TermDescriptor>,
        #[serde(default = "one")]
        lhs_order: u32,
    },
}

fn one() -> u32 {
    1
}

impl<'de> Deserialize<'de> for LibrarySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match LibraryJson::deserialize(d)? {
            LibraryJson::Bare(terms) => LibrarySpec {
                terms,
                lhs_order: 1,
            },
            LibraryJson::Full { terms, lhs_order } => LibrarySpec { terms, lhs_order },
        })
    }
}

impl LibrarySpec {
    pub fn new(terms: Vec<TermDescriptor>, lhs_order: u32) -> Result<Self> {
        let spec = LibrarySpec { terms, lhs_order };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("library has no terms".into()));
        }
        if !(1..=2).contains(&self.lhs_order) {
            return Err(Error::Config(format!(
                "lhs time-derivative order {} not in 1..=2",
                self.lhs_order
            )));
        }
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            t.validate()?;
            if !seen.insert(*t) {
                return Err(Error::Config(format!("duplicate term {t}")));
            }
        }
        Ok(())
    }

    pub fn with_lhs_order(mut self, lhs_order: u32) -> Self {
        self.lhs_order = lhs_order;
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(TermDescriptor::name).collect()
    }

    pub fn position(&self, term: &TermDescriptor) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: LibrarySpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Spatial axes referenced by any term.
    pub fn axes(&self) -> BTreeSet<AxisLabel> {
        self.terms.iter().filter_map(|t| t.axis).collect()
    }
}

fn products(powers: &[u32], derivs: &[(AxisLabel, u32)]) -> Vec<TermDescriptor> {
    derivs
        .iter()
        .flat_map(|&(a, o)| powers.iter().map(move |&p| TermDescriptor::deriv(p, a, o)))
        .collect()
}

/// The standard library for data with 1, 2 or 3 spatial axes.
///
/// 1-D: `u, u^2, u^3` and `{1, u, u^2, u^3} x {u_x .. u_xxxx}` (19 terms);
/// 2-D: `u, u^2` and `{1, u, u^2} x {u_x, u_xx, u_xxx, u_y, u_yy, u_yyy}`;
/// 3-D: `u, u^2` and `{1, u, u^2} x {u_x, u_xx, u_y, u_yy, u_z, u_zz}`.
pub fn standard_library(spatial_dims: usize) -> Result<LibrarySpec> {
    use AxisLabel::{X, Y, Z};
    let terms = match spatial_dims {
        1 => {
            let mut t: Vec<_> = (1..=3).map(TermDescriptor::power).collect();
            t.extend(products(&[0, 1, 2, 3], &[(X, 1), (X, 2), (X, 3), (X, 4)]));
            t
        }
        2 => {
            let mut t: Vec<_> = (1..=2).map(TermDescriptor::power).collect();
            t.extend(products(
                &[0, 1, 2],
                &[(X, 1), (X, 2), (X, 3), (Y, 1), (Y, 2), (Y, 3)],
            ));
            t
        }
        3 => {
            let mut t: Vec<_> = (1..=2).map(TermDescriptor::power).collect();
            t.extend(products(
                &[0, 1, 2],
                &[(X, 1), (X, 2), (Y, 1), (Y, 2), (Z, 1), (Z, 2)],
            ));
            t
        }
        n => {
            return Err(Error::Config(format!(
                "no standard library for {n} spatial dimensions"
            )))
        }
    };
    LibrarySpec::new(terms, 1)
}

/// The 11-term 1-D library `u, u^2, {1, u, u^2} x {u_x, u_xx, u_xxx}`.
pub fn compact_library_1d() -> LibrarySpec {
    use AxisLabel::X;
    let mut t: Vec<_> = (1..=2).map(TermDescriptor::power).collect();
    t.extend(products(&[0, 1, 2], &[(X, 1), (X, 2), (X, 3)]));
    LibrarySpec::new(t, 1).expect("static library is valid")
}

/// Library evaluated on a field and trimmed to the common interior.
///
/// Only `u` and the distinct derivative fields are stored; term fields are
/// formed on demand, which keeps large 3-D libraries within memory.
#[derive(Clone, Debug)]
pub struct EvaluatedLibrary {
    spec: LibrarySpec,
    u: Field,
    derivs: BTreeMap<(AxisLabel, u32), Field>,
    lhs: Field,
    margins: Vec<(usize, usize)>,
}

impl EvaluatedLibrary {
    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.spec.names()
    }

    /// The order-`lhs_order` time derivative of `u` on the interior grid.
    pub fn lhs_field(&self) -> &Field {
        &self.lhs
    }

    /// `u` itself on the interior grid.
    pub fn base(&self) -> &Field {
        &self.u
    }

    pub fn margins(&self) -> &[(usize, usize)] {
        &self.margins
    }

    pub fn dims(&self) -> &[usize] {
        self.u.dims()
    }

    /// Replaces the left-hand side; used to build exactly consistent systems.
    pub fn with_lhs(mut self, lhs: Field) -> Result<Self> {
        if !lhs.same_grid(&self.u) {
            return Err(Error::Config("lhs field grid differs from library grid".into()));
        }
        self.lhs = lhs;
        Ok(self)
    }

    /// Materializes the `i`-th term field, `u^p * d`.
    pub fn term_field(&self, i: usize) -> Field {
        self.u.with_values(self.term_values(i))
    }

    pub(crate) fn term_values(&self, i: usize) -> ArrayD<f64> {
        let t = &self.spec.terms[i];
        let mut power: Option<ArrayD<f64>> = None;
        for _ in 0..t.u_power {
            power = Some(match power {
                None => self.u.values().clone(),
                Some(p) => p * self.u.values(),
            });
        }
        match (power, t.derivative()) {
            (None, None) => ArrayD::ones(self.u.dims()),
            (Some(p), None) => p,
            (None, Some(key)) => self.derivs[&key].values().clone(),
            (Some(p), Some(key)) => p * self.derivs[&key].values(),
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (TermDescriptor, Field)> + '_ {
        (0..self.len()).map(|i| (self.spec.terms[i], self.term_field(i)))
    }
}

/// Evaluates every term of `spec` and the left-hand side on `f`, then trims
/// all of them to the interior where every stencil is complete.
pub fn evaluate_library(f: &Field, spec: &LibrarySpec, cfg: &DiffConfig) -> Result<EvaluatedLibrary> {
    spec.validate()?;
    let mut requests: BTreeSet<(AxisLabel, u32)> = BTreeSet::new();
    for t in &spec.terms {
        if let Some((a, o)) = t.derivative() {
            if f.axis_of(a).is_none() {
                return Err(Error::MissingAxis(a.to_string()));
            }
            requests.insert((a, o));
        }
    }

    let mut margins = vec![(0usize, 0usize); f.ndim()];
    let t_axis = f.time_axis();
    let lhs_margin = cfg.margin(spec.lhs_order as usize);
    margins[t_axis] = (lhs_margin, lhs_margin);
    for &(a, o) in &requests {
        let axis = f.axis_of(a).unwrap();
        let m = cfg.margin(o as usize);
        margins[axis].0 = margins[axis].0.max(m);
        margins[axis].1 = margins[axis].1.max(m);
    }

    let mut derivs = BTreeMap::new();
    for &(a, o) in &requests {
        let d = differentiate(f, f.axis_of(a).unwrap(), o as usize, cfg)?;
        derivs.insert((a, o), trim_interior(&d.field, &margins)?);
    }
    let lhs = differentiate(f, t_axis, spec.lhs_order as usize, cfg)?;
    Ok(EvaluatedLibrary {
        spec: spec.clone(),
        u: trim_interior(f, &margins)?,
        derivs,
        lhs: trim_interior(&lhs.field, &margins)?,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use AxisLabel::{X, Y};

    #[test]
    fn one_d_library_layout() {
        let lib = standard_library(1).unwrap();
        assert_eq!(lib.len(), 19);
        assert_eq!(lib.terms[3], TermDescriptor::deriv(0, X, 1));
        assert_eq!(lib.terms[4].name(), "u*u_x");
        assert_eq!(lib.terms[18].name(), "u^3*u_xxxx");
        assert_eq!(lib.lhs_order, 1);
    }

    #[test]
    fn two_d_library_layout() {
        let lib = standard_library(2).unwrap();
        assert_eq!(lib.len(), 20);
        assert!(lib.terms.contains(&TermDescriptor::deriv(2, Y, 3)));
        assert_eq!(lib.terms[19].name(), "u^2*u_yyy");
    }

    #[test]
    fn three_d_library_has_no_third_derivatives() {
        let lib = standard_library(3).unwrap();
        assert_eq!(lib.len(), 20);
        assert!(lib.terms.iter().all(|t| t.order <= 2));
        assert_eq!(lib.axes().len(), 3);
    }

    #[test]
    fn names() {
        assert_eq!(TermDescriptor::power(2).name(), "u^2");
        assert_eq!(TermDescriptor::deriv(0, X, 2).name(), "u_xx");
        assert_eq!(TermDescriptor::deriv(2, X, 3).name(), "u^2*u_xxx");
        assert_eq!(TermDescriptor::CONSTANT.name(), "1");
    }

    #[test]
    fn json_forms() {
        let bare = LibrarySpec::from_json(r#"[{"u_power":1,"axis":"x","order":1},{"u_power":0,"axis":"x","order":2}]"#).unwrap();
        assert_eq!(bare.names(), vec!["u*u_x", "u_xx"]);
        assert_eq!(bare.lhs_order, 1);
        let full = LibrarySpec::from_json(r#"{"terms":[{"u_power":0},{"u_power":0,"axis":"y","order":2}],"lhs_order":2}"#).unwrap();
        assert_eq!(full.lhs_order, 2);
        assert!(full.terms[0].is_constant());
        assert!(LibrarySpec::from_json(r#"[{"u_power":1},{"u_power":1}]"#).is_err());
        assert!(LibrarySpec::from_json(r#"[{"u_power":1,"axis":"t","order":1}]"#).is_err());
        let round = serde_json::to_string(&full).unwrap();
        assert_eq!(LibrarySpec::from_json(&round).unwrap(), full);
    }

    fn grid(nx: usize, nt: usize, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        let (hx, ht) = (0.1, 0.05);
        Field::from_fn(&[nx, nt], &[hx, ht], |ix| f(ix[0] as f64 * hx, ix[1] as f64 * ht)).unwrap()
    }

    #[test]
    fn constant_field() {
        let f = grid(20, 20, |_, _| 1.0);
        let spec = standard_library(1).unwrap();
        let lib = evaluate_library(&f, &spec, &DiffConfig::default()).unwrap();
        for (t, field) in lib.terms() {
            let expect = if t.derivative().is_none() { 1.0 } else { 0.0 };
            assert!(field.data().iter().all(|v| (v - expect).abs() < 1e-9), "{t}");
        }
        assert!(lib.lhs_field().data().iter().all(|v| v.abs() < 1e-9));
        assert_eq!(lib.margins(), &[(2, 2), (1, 1)]);
        assert_eq!(lib.dims(), &[16, 18]);
    }

    #[test]
    fn linear_profile_makes_u_ux_equal_u() {
        let f = grid(20, 10, |x, _| x);
        let spec = LibrarySpec::new(vec![TermDescriptor::power(1), TermDescriptor::deriv(1, X, 1)], 1).unwrap();
        let lib = evaluate_library(&f, &spec, &DiffConfig::default()).unwrap();
        let u = lib.term_field(0);
        let uux = lib.term_field(1);
        for (a, b) in u.data().iter().zip(uux.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn product_terms_compose_exactly() {
        let mut state = 12345u64;
        let f = grid(32, 32, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let spec = LibrarySpec::new(vec![TermDescriptor::deriv(2, X, 2)], 1).unwrap();
        let cfg = DiffConfig::default();
        let lib = evaluate_library(&f, &spec, &cfg).unwrap();
        let uxx = differentiate(&f, 0, 2, &cfg).unwrap().field;
        let margins = lib.margins().to_vec();
        let uxx = trim_interior(&uxx, &margins).unwrap();
        let u = trim_interior(&f, &margins).unwrap();
        let u2 = u.values() * u.values();
        let oracle = &u2 * uxx.values();
        assert_eq!(lib.term_field(0).values(), &oracle);
    }

    #[test]
    fn missing_axis() {
        let f = grid(20, 20, |x, t| x + t);
        let spec = standard_library(2).unwrap();
        assert!(matches!(
            evaluate_library(&f, &spec, &DiffConfig::default()),
            Err(Error::MissingAxis(_))
        ));
    }
}
