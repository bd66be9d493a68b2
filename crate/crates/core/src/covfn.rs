//! Covariance-function expression trees.
//!
//! A [`CovExpr`] is a sum/product tree over four leaf families:
//!
//! | leaf | value at distance `d` |
//! |------|-----------------------|
//! | `cn(c)` | `c` |
//! | `rbf(l)` | `exp(-d² / (2 l²))` |
//! | `wn(ε)` | `ε` for the same observation, else `0` |
//! | `ss(p, l)` | `exp(-2 sin²(π d / p) / l²)` |
//!
//! Every scalar is tagged [`Param::Free`] or [`Param::Fixed`]. Free parameters
//! are optimized in log space, so gradients are taken with respect to
//! `log θ`. Free parameters are ordered by a left-to-right depth-first walk
//! of the tree (`ss` contributes `p` then `l`); feature columns, gradient
//! matrices and seed vectors all use that order.
//!
//! White noise keys on observation identity, not coordinate equality: two
//! distinct observations at the same time stamp are uncorrelated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Free(f64),
    Fixed(f64),
}

impl Param {
    pub fn value(self) -> f64 {
        match self {
            Param::Free(v) | Param::Fixed(v) => v,
        }
    }

    pub fn is_free(self) -> bool {
        matches!(self, Param::Free(_))
    }

    fn check(self, what: &str) -> Result<()> {
        let v = self.value();
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidExpr(format!("{what} must be positive and finite, got {v}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum CovExpr {
    #[serde(rename = "sum")]
    Sum(Vec<CovExpr>),
    #[serde(rename = "prod")]
    Prod(Vec<CovExpr>),
    #[serde(rename = "cn")]
    Constant(Param),
    #[serde(rename = "rbf")]
    Rbf(Param),
    #[serde(rename = "wn")]
    WhiteNoise(Param),
    #[serde(rename = "ss")]
    SineSquared { p: Param, l: Param },
}

/// Pairwise squared distances of a point set, computed once per fit.
#[derive(Debug, Clone)]
pub struct Distances {
    sq: DMatrix<f64>,
}

impl Distances {
    pub fn new<P: Point>(xs: &[P]) -> Self {
        let n = xs.len();
        let mut sq = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let d = xs[i].sq_dist(&xs[j]);
                sq[(i, j)] = d;
                sq[(j, i)] = d;
            }
        }
        Distances { sq }
    }

    pub fn len(&self) -> usize {
        self.sq.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.sq.nrows() == 0
    }
}

impl CovExpr {
    pub fn sum(children: Vec<CovExpr>) -> Self {
        CovExpr::Sum(children)
    }

    pub fn prod(children: Vec<CovExpr>) -> Self {
        CovExpr::Prod(children)
    }

    pub fn cn(c: Param) -> Self {
        CovExpr::Constant(c)
    }

    pub fn rbf(l: Param) -> Self {
        CovExpr::Rbf(l)
    }

    pub fn wn(eps: Param) -> Self {
        CovExpr::WhiteNoise(eps)
    }

    pub fn ss(p: Param, l: Param) -> Self {
        CovExpr::SineSquared { p, l }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let expr: CovExpr = serde_json::from_str(s)?;
        expr.validate()?;
        Ok(expr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("covariance expressions always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CovExpr::Sum(ch) | CovExpr::Prod(ch) => {
                if ch.len() < 2 {
                    return Err(Error::InvalidExpr(
                        "sum and prod nodes need at least two children".into(),
                    ));
                }
                ch.iter().try_for_each(CovExpr::validate)
            }
            CovExpr::Constant(c) => c.check("cn constant"),
            CovExpr::Rbf(l) => l.check("rbf length scale"),
            CovExpr::WhiteNoise(e) => e.check("wn level"),
            CovExpr::SineSquared { p, l } => {
                p.check("ss period")?;
                l.check("ss length scale")
            }
        }
    }

    fn params(&self, out: &mut Vec<(String, Param)>) {
        match self {
            CovExpr::Sum(ch) | CovExpr::Prod(ch) => ch.iter().for_each(|c| c.params(out)),
            CovExpr::Constant(c) => out.push(("cn".into(), *c)),
            CovExpr::Rbf(l) => out.push(("rbf.l".into(), *l)),
            CovExpr::WhiteNoise(e) => out.push(("wn".into(), *e)),
            CovExpr::SineSquared { p, l } => {
                out.push(("ss.p".into(), *p));
                out.push(("ss.l".into(), *l));
            }
        }
    }

    fn all_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.params(&mut out);
        out
    }

    pub fn free_count(&self) -> usize {
        self.all_params().iter().filter(|(_, p)| p.is_free()).count()
    }

    /// Current values of the free parameters in natural units.
    pub fn free_values(&self) -> Vec<f64> {
        self.all_params()
            .into_iter()
            .filter(|(_, p)| p.is_free())
            .map(|(_, p)| p.value())
            .collect()
    }

    /// Names of the free parameters (`cn`, `rbf.l`, `wn`, `ss.p`, `ss.l`).
    /// Repeated names get a `#2`, `#3`, ... suffix in traversal order.
    pub fn free_names(&self) -> Vec<String> {
        let names: Vec<String> = self
            .all_params()
            .into_iter()
            .filter(|(_, p)| p.is_free())
            .map(|(n, _)| n)
            .collect();
        let mut out = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let total = names.iter().filter(|n| *n == name).count();
            if total == 1 {
                out.push(name.clone());
            } else {
                let ordinal = names[..=i].iter().filter(|n| *n == name).count();
                out.push(if ordinal == 1 {
                    name.clone()
                } else {
                    format!("{name}#{ordinal}")
                });
            }
        }
        out
    }

    /// Copy of the tree with the free parameters set to `values` (natural
    /// units, traversal order). Fixed parameters are untouched.
    pub fn with_free_values(&self, values: &[f64]) -> Result<CovExpr> {
        if values.len() != self.free_count() {
            return Err(Error::Dimension(format!(
                "expected {} free values, got {}",
                self.free_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let out = self.replace_free(&mut it);
        out.validate()?;
        Ok(out)
    }

    fn replace_free(&self, it: &mut impl Iterator<Item = f64>) -> CovExpr {
        fn swap(p: Param, it: &mut impl Iterator<Item = f64>) -> Param {
            match p {
                Param::Free(_) => Param::Free(it.next().unwrap()),
                fixed => fixed,
            }
        }
        match self {
            CovExpr::Sum(ch) => CovExpr::Sum(ch.iter().map(|c| c.replace_free(it)).collect()),
            CovExpr::Prod(ch) => CovExpr::Prod(ch.iter().map(|c| c.replace_free(it)).collect()),
            CovExpr::Constant(c) => CovExpr::Constant(swap(*c, it)),
            CovExpr::Rbf(l) => CovExpr::Rbf(swap(*l, it)),
            CovExpr::WhiteNoise(e) => CovExpr::WhiteNoise(swap(*e, it)),
            CovExpr::SineSquared { p, l } => {
                let p = swap(*p, it);
                let l = swap(*l, it);
                CovExpr::SineSquared { p, l }
            }
        }
    }

    /// Covariance between `x` and `y`; `same_obs` marks the two arguments as
    /// the same observation, which is the only case white noise contributes.
    pub fn eval<P: Point>(&self, x: &P, y: &P, same_obs: bool) -> f64 {
        self.eval_sq(x.sq_dist(y), same_obs)
    }

    fn eval_sq(&self, sq: f64, same_obs: bool) -> f64 {
        match self {
            CovExpr::Sum(ch) => ch.iter().map(|c| c.eval_sq(sq, same_obs)).sum(),
            CovExpr::Prod(ch) => ch.iter().map(|c| c.eval_sq(sq, same_obs)).product(),
            CovExpr::Constant(c) => c.value(),
            CovExpr::Rbf(l) => rbf(sq, l.value()),
            CovExpr::WhiteNoise(e) => {
                if same_obs {
                    e.value()
                } else {
                    0.0
                }
            }
            CovExpr::SineSquared { p, l } => ss(sq.sqrt(), p.value(), l.value()),
        }
    }

    /// Value and `∂/∂log θ_j` for each free parameter at a single pair.
    pub fn eval_with_grad<P: Point>(&self, x: &P, y: &P, same_obs: bool) -> (f64, Vec<f64>) {
        let mut g = Vec::with_capacity(self.free_count());
        let v = self.eval_grad_sq(x.sq_dist(y), same_obs, &mut g);
        (v, g)
    }

    fn eval_grad_sq(&self, sq: f64, same_obs: bool, g: &mut Vec<f64>) -> f64 {
        match self {
            CovExpr::Sum(ch) => ch.iter().map(|c| c.eval_grad_sq(sq, same_obs, g)).sum(),
            CovExpr::Prod(ch) => {
                let mut parts = Vec::with_capacity(ch.len());
                for c in ch {
                    let start = g.len();
                    let v = c.eval_grad_sq(sq, same_obs, g);
                    parts.push((v, start, g.len()));
                }
                for (k, &(_, start, end)) in parts.iter().enumerate() {
                    let others: f64 = parts
                        .iter()
                        .enumerate()
                        .filter(|(o, _)| *o != k)
                        .map(|(_, p)| p.0)
                        .product();
                    g[start..end].iter_mut().for_each(|v| *v *= others);
                }
                parts.iter().map(|p| p.0).product()
            }
            CovExpr::Constant(c) => {
                if c.is_free() {
                    g.push(c.value());
                }
                c.value()
            }
            CovExpr::Rbf(l) => {
                let lv = l.value();
                let k = rbf(sq, lv);
                if l.is_free() {
                    g.push(k * sq / (lv * lv));
                }
                k
            }
            CovExpr::WhiteNoise(e) => {
                let v = if same_obs { e.value() } else { 0.0 };
                if e.is_free() {
                    g.push(v);
                }
                v
            }
            CovExpr::SineSquared { p, l } => {
                let d = sq.sqrt();
                let (pv, lv) = (p.value(), l.value());
                let k = ss(d, pv, lv);
                if p.is_free() {
                    g.push(k * ss_dlogp(d, pv, lv));
                }
                if l.is_free() {
                    g.push(k * ss_dlogl(d, pv, lv));
                }
                k
            }
        }
    }

    /// Covariance matrix over `xs`; white noise only on the diagonal.
    pub fn matrix<P: Point>(&self, xs: &[P]) -> DMatrix<f64> {
        self.matrix_from(&Distances::new(xs))
    }

    pub fn matrix_from(&self, dist: &Distances) -> DMatrix<f64> {
        self.build(dist, false).0
    }

    /// Covariance matrix plus one `∂K/∂log θ_j` matrix per free parameter.
    pub fn matrix_and_grads(&self, dist: &Distances) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        self.build(dist, true)
    }

    fn build(&self, dist: &Distances, want_grad: bool) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = dist.len();
        match self {
            CovExpr::Sum(ch) => {
                let mut k = DMatrix::zeros(n, n);
                let mut grads = Vec::new();
                for c in ch {
                    let (kc, gc) = c.build(dist, want_grad);
                    k += kc;
                    grads.extend(gc);
                }
                (k, grads)
            }
            CovExpr::Prod(ch) => {
                let parts: Vec<_> = ch.iter().map(|c| c.build(dist, want_grad)).collect();
                let mut grads = Vec::new();
                if want_grad {
                    for (idx, (_, gc)) in parts.iter().enumerate() {
                        if gc.is_empty() {
                            continue;
                        }
                        let mut others = DMatrix::from_element(n, n, 1.0);
                        for (o, (ko, _)) in parts.iter().enumerate() {
                            if o != idx {
                                others.component_mul_assign(ko);
                            }
                        }
                        for g in gc {
                            grads.push(g.component_mul(&others));
                        }
                    }
                }
                let mut k = DMatrix::from_element(n, n, 1.0);
                for (kc, _) in &parts {
                    k.component_mul_assign(kc);
                }
                (k, grads)
            }
            CovExpr::Constant(c) => {
                let k = DMatrix::from_element(n, n, c.value());
                let grads = if want_grad && c.is_free() {
                    vec![k.clone()]
                } else {
                    vec![]
                };
                (k, grads)
            }
            CovExpr::Rbf(l) => {
                let lv = l.value();
                let k = dist.sq.map(|sq| rbf(sq, lv));
                let grads = if want_grad && l.is_free() {
                    vec![k.zip_map(&dist.sq, |kv, sq| kv * sq / (lv * lv))]
                } else {
                    vec![]
                };
                (k, grads)
            }
            CovExpr::WhiteNoise(e) => {
                let k = DMatrix::from_diagonal_element(n, n, e.value());
                let grads = if want_grad && e.is_free() {
                    vec![k.clone()]
                } else {
                    vec![]
                };
                (k, grads)
            }
            CovExpr::SineSquared { p, l } => {
                let (pv, lv) = (p.value(), l.value());
                let k = dist.sq.map(|sq| ss(sq.sqrt(), pv, lv));
                let mut grads = Vec::new();
                if want_grad && p.is_free() {
                    grads.push(k.zip_map(&dist.sq, |kv, sq| kv * ss_dlogp(sq.sqrt(), pv, lv)));
                }
                if want_grad && l.is_free() {
                    grads.push(k.zip_map(&dist.sq, |kv, sq| kv * ss_dlogl(sq.sqrt(), pv, lv)));
                }
                (k, grads)
            }
        }
    }

    /// Cross-covariance between two point sets of distinct observations.
    pub fn cross_matrix<P: Point>(&self, rows: &[P], cols: &[P]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.eval(&rows[i], &cols[j], false)
        })
    }

    /// White-noise share of each diagonal entry: the covariance of an
    /// observation with itself minus its covariance with a distinct
    /// observation at the same location.
    pub fn noise_diagonal<P: Point>(&self, xs: &[P]) -> DVector<f64> {
        DVector::from_iterator(
            xs.len(),
            xs.iter().map(|x| self.eval(x, x, true) - self.eval(x, x, false)),
        )
    }

    /// `∂/∂log θ_j` of [`noise_diagonal`](Self::noise_diagonal), one vector
    /// per free parameter.
    pub fn noise_diagonal_grads<P: Point>(&self, xs: &[P]) -> Vec<DVector<f64>> {
        let m = self.free_count();
        let mut out = vec![DVector::zeros(xs.len()); m];
        for (i, x) in xs.iter().enumerate() {
            let (_, same) = self.eval_with_grad(x, x, true);
            let (_, distinct) = self.eval_with_grad(x, x, false);
            for j in 0..m {
                out[j][i] = same[j] - distinct[j];
            }
        }
        out
    }
}

/// `∂K/∂log θ_j` matrices over `xs`, in free-parameter traversal order.
pub fn cov_grad<P: Point>(expr: &CovExpr, xs: &[P]) -> Result<Vec<DMatrix<f64>>> {
    if expr.free_count() == 0 {
        return Err(Error::NoFreeParameters);
    }
    Ok(expr.matrix_and_grads(&Distances::new(xs)).1)
}

fn rbf(sq: f64, l: f64) -> f64 {
    (-sq / (2.0 * l * l)).exp()
}

fn ss(d: f64, p: f64, l: f64) -> f64 {
    let s = (PI * d / p).sin();
    (-2.0 * s * s / (l * l)).exp()
}

// p ∂/∂p of the exponent -2 sin²(πd/p)/l²
fn ss_dlogp(d: f64, p: f64, l: f64) -> f64 {
    2.0 * PI * d / (p * l * l) * (2.0 * PI * d / p).sin()
}

// l ∂/∂l of the exponent
fn ss_dlogl(d: f64, p: f64, l: f64) -> f64 {
    let s = (PI * d / p).sin();
    4.0 * s * s / (l * l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use Param::{Fixed, Free};

    fn eight_thousand() -> CovExpr {
        CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Fixed(8000.0)), CovExpr::rbf(Fixed(7.0))]),
            CovExpr::wn(Free(0.3)),
        ])
    }

    #[test]
    fn leaf_values() {
        assert_eq!(CovExpr::rbf(Free(3.0)).eval(&1.5, &1.5, false), 1.0);
        assert_relative_eq!(
            CovExpr::ss(Free(4.0), Fixed(0.7)).eval(&0.0, &4.0, false),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(eight_thousand().eval(&2.0, &2.0, true), 8000.3);
        assert_eq!(eight_thousand().eval(&2.0, &2.0, false), 8000.0);
    }

    #[test]
    fn matrices() {
        let xs = [0.0, 1.0, 5.0];
        let wn = CovExpr::wn(Fixed(0.25)).matrix(&xs);
        assert_eq!(wn, DMatrix::from_diagonal_element(3, 3, 0.25));
        let cn = CovExpr::cn(Fixed(2.0)).matrix(&xs);
        assert_eq!(cn, DMatrix::from_element(3, 3, 2.0));

        let l = 1.7;
        let k = CovExpr::rbf(Fixed(l)).matrix(&[0.0, l]);
        let off = (-0.5f64).exp();
        assert_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(0, 1)], off, epsilon = 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn leaf_gradients() {
        let xs = [0.0, 2.0, 3.0];
        let g = cov_grad(&CovExpr::cn(Free(3.0)), &xs).unwrap();
        assert_eq!(g, vec![DMatrix::from_element(3, 3, 3.0)]);
        let g = cov_grad(&CovExpr::wn(Free(0.5)), &xs).unwrap();
        assert_eq!(g, vec![DMatrix::from_diagonal_element(3, 3, 0.5)]);
        assert!(matches!(
            cov_grad(&CovExpr::wn(Fixed(0.5)), &xs),
            Err(Error::NoFreeParameters)
        ));
        let g = cov_grad(&eight_thousand(), &xs).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn noise_diagonal_cases() {
        let xs = [0.0, 1.0, 4.0];
        let nd = eight_thousand().noise_diagonal(&xs);
        assert!(nd.iter().all(|&v| (v - 0.3).abs() < 1e-9));
        let nd = CovExpr::prod(vec![CovExpr::cn(Fixed(2.0)), CovExpr::rbf(Fixed(1.0))])
            .noise_diagonal(&xs);
        assert!(nd.iter().all(|&v| v == 0.0));
        let nd = CovExpr::sum(vec![CovExpr::wn(Fixed(0.5)), CovExpr::wn(Fixed(1.25))])
            .noise_diagonal(&xs);
        assert!(nd.iter().all(|&v| v == 1.75));
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let s = r#"{"sum":[{"prod":[{"cn":{"fixed":64.0}},{"rbf":{"fixed":2.0}}]},{"wn":{"free":1.0}}]}"#;
        let e = CovExpr::from_json(s).unwrap();
        assert_eq!(e.to_json(), s);
        assert_eq!(e.free_names(), vec!["wn"]);

        let ss = CovExpr::from_json(r#"{"ss":{"p":{"free":20},"l":{"fixed":1}}}"#).unwrap();
        assert_eq!(ss.free_names(), vec!["ss.p"]);

        assert!(CovExpr::from_json(r#"{"sum":[{"wn":{"free":1.0}}]}"#).is_err());
        assert!(CovExpr::from_json(r#"{"wn":{"free":-1.0}}"#).is_err());
        assert!(CovExpr::from_json(r#"{"matern":{"free":1.0}}"#).is_err());
    }

    #[test]
    fn free_parameter_order_and_names() {
        let e = CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Free(1.0)), CovExpr::ss(Free(20.0), Free(0.5))]),
            CovExpr::wn(Free(2.0)),
            CovExpr::wn(Free(3.0)),
        ]);
        assert_eq!(e.free_values(), vec![1.0, 20.0, 0.5, 2.0, 3.0]);
        assert_eq!(e.free_names(), vec!["cn", "ss.p", "ss.l", "wn", "wn#2"]);
        let e2 = e.with_free_values(&[5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        assert_eq!(e2.free_values(), vec![5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(e.with_free_values(&[1.0]).is_err());
        assert!(e.with_free_values(&[1.0, 1.0, 1.0, 1.0, -1.0]).is_err());
    }

    /// Covers every leaf family, free, inside sums and products.
    fn full_expr(c: f64, l: f64, eps: f64, p: f64, sl: f64, l2: f64) -> CovExpr {
        CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Free(c)), CovExpr::rbf(Free(l))]),
            CovExpr::prod(vec![
                CovExpr::ss(Free(p), Free(sl)),
                CovExpr::rbf(Free(l2)),
                CovExpr::cn(Fixed(0.7)),
            ]),
            CovExpr::wn(Free(eps)),
        ])
    }

    fn random_points() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..7)
    }

    proptest! {
        #[test]
        fn matrix_exactly_symmetric(xs in random_points(), c in 0.1f64..5.0, l in 0.3f64..4.0) {
            let k = full_expr(c, l, 0.1, 2.5, 0.8, 1.3).matrix(&xs);
            prop_assert_eq!(k.clone(), k.transpose());
        }

        #[test]
        fn white_noise_gives_cholesky(xs in random_points(), eps in 1e-3f64..2.0) {
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let k = full_expr(1.0, 1.0, eps, 2.0, 1.0, 2.0).matrix(&sorted);
            prop_assert!(k.cholesky().is_some());
        }

        #[test]
        fn constant_scales(xs in random_points(), c in 0.1f64..10.0) {
            let inner = CovExpr::sum(vec![CovExpr::rbf(Fixed(1.1)), CovExpr::ss(Fixed(3.0), Fixed(0.9))]);
            let scaled = CovExpr::prod(vec![CovExpr::cn(Fixed(c)), inner.clone()]).matrix(&xs);
            let reference = inner.matrix(&xs) * c;
            for (a, b) in scaled.iter().zip(reference.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn gradient_matches_central_differences(
            xs in random_points(),
            c in 0.2f64..4.0, l in 0.5f64..3.0, eps in 0.05f64..2.0,
            p in 1.5f64..6.0, sl in 0.5f64..2.0, l2 in 0.5f64..3.0,
        ) {
            let expr = full_expr(c, l, eps, p, sl, l2);
            let grads = cov_grad(&expr, &xs).unwrap();
            let theta = expr.free_values();
            let step = 1e-5;
            for j in 0..theta.len() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] *= f64::exp(step);
                dn[j] *= f64::exp(-step);
                let kp = expr.with_free_values(&up).unwrap().matrix(&xs);
                let km = expr.with_free_values(&dn).unwrap().matrix(&xs);
                let fd = (kp - km) / (2.0 * step);
                for (a, b) in grads[j].iter().zip(fd.iter()) {
                    // floor keeps round-off in near-zero entries from dominating
                    let scale = a.abs().max(b.abs()).max(1e-3);
                    prop_assert!((a - b).abs() / scale < 1e-6, "param {} analytic {} fd {}", j, a, b);
                }
            }
        }

        #[test]
        fn pointwise_gradient_agrees_with_matrix(xs in random_points()) {
            let expr = full_expr(1.3, 0.9, 0.4, 2.2, 1.1, 1.7);
            let grads = cov_grad(&expr, &xs).unwrap();
            for i in 0..xs.len() {
                for jj in 0..xs.len() {
                    let (_, g) = expr.eval_with_grad(&xs[i], &xs[jj], i == jj);
                    for (k, gk) in g.iter().enumerate() {
                        prop_assert!((gk - grads[k][(i, jj)]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
