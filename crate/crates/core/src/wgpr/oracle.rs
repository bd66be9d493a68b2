//! Brute-force replication oracle for the weighting identities.
//!
//! Start from a covariance matrix `B_0` over `n` variables and add `w`
//! independent copies of a new variable `U`, each with variance `u·w` and
//! covariance vector `b` against the originals:
//!
//! ```text
//!        ┌ B_0  b  …  b ┐
//! B_w =  │ bᵀ           │
//!        │ ⋮    u·w·I_w │
//!        └ bᵀ           ┘
//! ```
//!
//! `B_1` is the ordinary one-copy system. The identities checked here are
//!
//! * determinant: `det(B_w) / (u w)^w = det(B_1) / u`;
//! * inverse: writing `B_1⁻¹ = [[A, c], [cᵀ, z]]`, the inverse of `B_w` is
//!   `A` with `c/w` cross blocks and `(z u - 1)/(w² u)·J_w + I_w/(u w)` in
//!   the copies' block;
//! * quadratic form: appending `w` copies of an observation `x` leaves
//!   `yᵀ B⁻¹ y` unchanged;
//! * density: `log G(y_1|B_1) - log G(y_w|B_w) = (w-1)/2 log u + w/2 log w + (w-1)/2 log 2π`.
//!
//! The density identity is stated with the replicated density on the
//! right: the larger determinant of `B_w` makes `G(y_w|B_w)` the smaller of
//! the two. [`Corollary`] chains the density identity over every
//! observation of a weighted system.
//!
//! Everything here uses LU decompositions and explicit assembly so that it
//! stays independent of the Cholesky path used for fitting; only the final
//! density comparison goes through [`log_gauss_pdf`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::log_gauss_pdf;

pub const LEMMA_TOL: f64 = 1e-9;
pub const COROLLARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedGaussian {
    pub b0: DMatrix<f64>,
    pub b: DVector<f64>,
    pub u: f64,
    pub w: usize,
}

/// Block layout of an assembled replicated matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assembly {
    pub originals: usize,
    pub copies: usize,
}

fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().abs().ln()
}

fn lu_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().lu().try_inverse()
}

fn lu_solve(m: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(y)
}

/// Density correction for collapsing `w` copies onto one variable whose
/// single-copy variance is `u`.
pub fn density_correction(u: f64, w: usize) -> f64 {
    let wf = w as f64;
    0.5 * (wf - 1.0) * u.ln() + 0.5 * wf * wf.ln() + 0.5 * (wf - 1.0) * (2.0 * PI).ln()
}

impl ReplicatedGaussian {
    pub fn n(&self) -> usize {
        self.b0.nrows()
    }

    pub fn with_copies(&self, w: usize) -> Self {
        ReplicatedGaussian { w, ..self.clone() }
    }

    /// Replicated system with `copies` copies, `copies · u` variance each.
    fn assemble(&self, copies: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n + copies, n + copies);
        m.view_mut((0, 0), (n, n)).copy_from(&self.b0);
        for c in 0..copies {
            for i in 0..n {
                m[(i, n + c)] = self.b[i];
                m[(n + c, i)] = self.b[i];
            }
            m[(n + c, n + c)] = self.u * copies as f64;
        }
        m
    }

    pub fn build_replicated(&self) -> (DMatrix<f64>, Assembly) {
        (
            self.assemble(self.w),
            Assembly {
                originals: self.n(),
                copies: self.w,
            },
        )
    }

    pub fn b1(&self) -> DMatrix<f64> {
        self.assemble(1)
    }

    pub fn lemma_determinant_error(&self) -> f64 {
        let w = self.w as f64;
        let lhs = log_abs_det(&self.assemble(self.w)) - w * (self.u * w).ln();
        let rhs = log_abs_det(&self.b1()) - self.u.ln();
        (lhs - rhs).abs()
    }

    pub fn check_lemma_determinant(&self) -> bool {
        self.lemma_determinant_error() < LEMMA_TOL
    }

    /// `B_w⁻¹` assembled from the blocks of `B_1⁻¹`.
    pub fn assembled_inverse(&self) -> Option<DMatrix<f64>> {
        let n = self.n();
        let w = self.w;
        let wf = w as f64;
        let inv1 = lu_inverse(&self.b1())?;
        let z = inv1[(n, n)];
        let mut m = DMatrix::zeros(n + w, n + w);
        m.view_mut((0, 0), (n, n)).copy_from(&inv1.view((0, 0), (n, n)));
        let block = (z * self.u - 1.0) / (wf * wf * self.u);
        for a in 0..w {
            for i in 0..n {
                m[(i, n + a)] = inv1[(i, n)] / wf;
                m[(n + a, i)] = inv1[(n, i)] / wf;
            }
            for b in 0..w {
                m[(n + a, n + b)] = block + if a == b { 1.0 / (self.u * wf) } else { 0.0 };
            }
        }
        Some(m)
    }

    pub fn lemma_inverse_error(&self) -> f64 {
        let Some(inv) = self.assembled_inverse() else {
            return f64::INFINITY;
        };
        let (bw, _) = self.build_replicated();
        let prod = bw * inv;
        let eye = DMatrix::<f64>::identity(prod.nrows(), prod.ncols());
        (prod - eye).amax()
    }

    pub fn check_lemma_inverse(&self) -> bool {
        self.lemma_inverse_error() < LEMMA_TOL
    }

    fn stacked(&self, y: &DVector<f64>, x: f64, copies: usize) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(n + copies, |i, _| if i < n { y[i] } else { x })
    }

    pub fn lemma_quadform_error(&self, y: &DVector<f64>, x: f64) -> f64 {
        let yw = self.stacked(y, x, self.w);
        let y1 = self.stacked(y, x, 1);
        let (bw, _) = self.build_replicated();
        let (Some(sw), Some(s1)) = (lu_solve(&bw, &yw), lu_solve(&self.b1(), &y1)) else {
            return f64::INFINITY;
        };
        let qw = yw.dot(&sw);
        let q1 = y1.dot(&s1);
        (qw - q1).abs() / q1.abs().max(1e-300)
    }

    pub fn check_lemma_quadform(&self, y: &DVector<f64>, x: f64) -> bool {
        self.lemma_quadform_error(y, x) < LEMMA_TOL
    }

    /// `log G(y_1|B_1) - log G(y_w|B_w)`, which the density identity equates
    /// with [`density_correction`].
    pub fn log_density_gap(&self, y: &DVector<f64>, x: f64) -> Option<f64> {
        let (bw, _) = self.build_replicated();
        let lw = log_gauss_pdf(&self.stacked(y, x, self.w), &bw).ok()?;
        let l1 = log_gauss_pdf(&self.stacked(y, x, 1), &self.b1()).ok()?;
        Some(l1 - lw)
    }

    pub fn theorem_error(&self, y: &DVector<f64>, x: f64) -> f64 {
        match self.log_density_gap(y, x) {
            Some(gap) => (gap - density_correction(self.u, self.w)).abs(),
            None => f64::INFINITY,
        }
    }

    pub fn check_theorem(&self, y: &DVector<f64>, x: f64) -> bool {
        self.theorem_error(y, x) < LEMMA_TOL
    }

    /// Random instance with `B_1` symmetric positive definite.
    pub fn random<R: Rng>(rng: &mut R, n: usize, w: usize) -> Self {
        let m = random_spd(rng, n + 1);
        ReplicatedGaussian {
            b0: m.view((0, 0), (n, n)).into_owned(),
            b: m.view((0, n), (n, 1)).column(0).into_owned(),
            u: m[(n, n)],
            w,
        }
    }
}

fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut m = &a * a.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += rng.random_range(0.2..1.5);
    }
    m
}

fn random_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// One observation of a weighted system: its covariances with the earlier
/// observations, the per-copy variance `u` and the integer weight `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVariable {
    pub b: DVector<f64>,
    pub u: f64,
    pub w: usize,
}

/// Every observation replicated per its weight and checked against the
/// weighted matrix `C`, whose diagonal holds `u_i / w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corollary {
    pub vars: Vec<WeightedVariable>,
}

impl Corollary {
    /// Recursive block assembly over all copies.
    pub fn replicated_matrix(&self) -> DMatrix<f64> {
        let total: usize = self.vars.iter().map(|v| v.w).sum();
        let mut m = DMatrix::zeros(total, total);
        let mut owner = Vec::with_capacity(total);
        for (i, var) in self.vars.iter().enumerate() {
            let start = owner.len();
            for c in 0..var.w {
                let row = start + c;
                for (col, &j) in owner.iter().enumerate() {
                    m[(row, col)] = var.b[j];
                    m[(col, row)] = var.b[j];
                }
                m[(row, row)] = var.u;
            }
            owner.extend(std::iter::repeat_n(i, var.w));
        }
        m
    }

    pub fn weighted_matrix(&self) -> DMatrix<f64> {
        let n = self.vars.len();
        let mut c = DMatrix::zeros(n, n);
        for (i, var) in self.vars.iter().enumerate() {
            for j in 0..i {
                c[(i, j)] = var.b[j];
                c[(j, i)] = var.b[j];
            }
            c[(i, i)] = var.u / var.w as f64;
        }
        c
    }

    pub fn replicated_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        let vals: Vec<f64> = self
            .vars
            .iter()
            .zip(y.iter())
            .flat_map(|(v, &yi)| std::iter::repeat_n(yi, v.w))
            .collect();
        DVector::from_vec(vals)
    }

    pub fn correction(&self) -> f64 {
        self.vars
            .iter()
            .map(|v| density_correction(v.u / v.w as f64, v.w))
            .sum()
    }

    pub fn error(&self, y: &DVector<f64>) -> f64 {
        let lw = log_gauss_pdf(&self.replicated_targets(y), &self.replicated_matrix());
        let lc = log_gauss_pdf(y, &self.weighted_matrix());
        match (lw, lc) {
            (Ok(lw), Ok(lc)) => (lc - lw - self.correction()).abs(),
            _ => f64::INFINITY,
        }
    }

    pub fn check(&self, y: &DVector<f64>) -> bool {
        self.error(y) < COROLLARY_TOL
    }

    /// Random weighted system with `C` positive definite.
    pub fn random<R: Rng>(rng: &mut R, n: usize, max_w: usize) -> Self {
        let c = random_spd(rng, n);
        let vars = (0..n)
            .map(|i| {
                let w = rng.random_range(1..=max_w);
                WeightedVariable {
                    b: DVector::from_fn(i, |j, _| c[(j, i)]),
                    u: c[(i, i)] * w as f64,
                    w,
                }
            })
            .collect();
        Corollary { vars }
    }
}

pub fn check_corollary(vars: &[WeightedVariable], y: &DVector<f64>) -> bool {
    Corollary {
        vars: vars.to_vec(),
    }
    .check(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub max_abs_error: f64,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        CheckReport {
            name: name.into(),
            instances: 0,
            failures: 0,
            max_abs_error: 0.0,
        }
    }

    fn record(&mut self, err: f64, tol: f64) {
        self.instances += 1;
        if !(err < tol) {
            self.failures += 1;
        }
        self.max_abs_error = self.max_abs_error.max(if err.is_nan() { f64::INFINITY } else { err });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instances: usize,
    pub failures: usize,
    pub max_abs_error: f64,
    pub checks: Vec<CheckReport>,
}

/// Runs every identity on `instances` random replicated systems
/// (`n ≤ 6`, `w ∈ 1..=5`) and `instances / 5` random weighted systems
/// (`w_i ∈ 1..=3`, at least 200).
pub fn run_suite(rng_seed: u64, instances: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut det = CheckReport::new("lemma_determinant");
    let mut inv = CheckReport::new("lemma_inverse");
    let mut quad = CheckReport::new("lemma_quadform");
    let mut thm = CheckReport::new("theorem");
    let mut cor = CheckReport::new("corollary");

    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let w = rng.random_range(1..=5);
        let g = ReplicatedGaussian::random(&mut rng, n, w);
        let y = random_vector(&mut rng, n);
        let x: f64 = StandardNormal.sample(&mut rng);
        det.record(g.lemma_determinant_error(), LEMMA_TOL);
        inv.record(g.lemma_inverse_error(), LEMMA_TOL);
        quad.record(g.lemma_quadform_error(&y, x), LEMMA_TOL);
        thm.record(g.theorem_error(&y, x), LEMMA_TOL);
    }
    for _ in 0..(instances / 5).max(200) {
        let n = rng.random_range(1..=6);
        let c = Corollary::random(&mut rng, n, 3);
        let y = random_vector(&mut rng, n);
        cor.record(c.error(&y), COROLLARY_TOL);
    }

    let checks = vec![det, inv, quad, thm, cor];
    OracleReport {
        instances: checks.iter().map(|c| c.instances).sum(),
        failures: checks.iter().map(|c| c.failures).sum(),
        max_abs_error: checks.iter().map(|c| c.max_abs_error).fold(0.0, f64::max),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny(w: usize) -> ReplicatedGaussian {
        ReplicatedGaussian {
            b0: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 0.5),
            u: 1.0,
            w,
        }
    }

    #[test]
    fn assembly_by_hand() {
        let (b1, shape) = tiny(1).build_replicated();
        assert_eq!(shape, Assembly { originals: 1, copies: 1 });
        assert_eq!(b1, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let (b2, _) = tiny(2).build_replicated();
        assert_eq!(
            b2,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 2.0, 0.0, 0.5, 0.0, 2.0])
        );
        assert_relative_eq!(b2.clone().lu().determinant(), 3.0, epsilon = 1e-12);
        for w in 1..6 {
            let (bw, _) = tiny(w).build_replicated();
            for a in 1..=w {
                for b in 1..=w {
                    if a != b {
                        assert_eq!(bw[(a, b)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn determinant_identity_by_hand() {
        // det(B_2)/4 = 3/4 = det(B_1)/1
        assert!(tiny(2).check_lemma_determinant());
        assert_eq!(tiny(1).lemma_determinant_error(), 0.0);
    }

    #[test]
    fn inverse_identity_by_hand() {
        let g = tiny(1);
        let direct = g.b1().lu().try_inverse().unwrap();
        let assembled = g.assembled_inverse().unwrap();
        assert!((direct - assembled).amax() < 1e-14);
        assert!(tiny(2).check_lemma_inverse());
    }

    #[test]
    fn quadform_by_hand() {
        let y = DVector::from_element(1, 1.0);
        for w in 1..=3 {
            assert!(tiny(w).check_lemma_quadform(&y, 1.0));
            assert!(tiny(w).check_lemma_quadform(&y, 0.0));
        }
    }

    #[test]
    fn density_gap_by_hand() {
        let y = DVector::from_element(1, 0.3);
        assert!(tiny(1).log_density_gap(&y, -0.4).unwrap().abs() < 1e-14);
        // u = 1, w = 2: log 2 + ½ log 2π
        let gap = tiny(2).log_density_gap(&y, -0.4).unwrap();
        assert_relative_eq!(gap, 2f64.ln() + 0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        assert!(tiny(2).check_theorem(&y, -0.4));
    }

    #[test]
    fn replicated_density_is_the_smaller_one() {
        // the identity does not hold with the two densities swapped
        let y = DVector::from_element(1, 0.3);
        let g = tiny(3);
        let gap = g.log_density_gap(&y, 0.1).unwrap();
        assert!(gap > 0.0);
        assert!((-gap - density_correction(g.u, g.w)).abs() > 1.0);
    }

    #[test]
    fn corollary_unweighted_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Corollary::random(&mut rng, 4, 1);
        for v in &mut c.vars {
            v.w = 1;
        }
        assert_eq!(c.replicated_matrix(), c.weighted_matrix());
        assert_eq!(c.correction(), 0.0);
        let y = random_vector(&mut rng, 4);
        assert!(c.check(&y));
    }

    #[test]
    fn corollary_two_variables() {
        let vars = vec![
            WeightedVariable {
                b: DVector::zeros(0),
                u: 3.0,
                w: 2,
            },
            WeightedVariable {
                b: DVector::from_element(1, 0.4),
                u: 1.2,
                w: 1,
            },
        ];
        let c = Corollary { vars: vars.clone() };
        let sigma = c.replicated_matrix();
        assert_eq!(
            sigma,
            DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.4, 0.0, 3.0, 0.4, 0.4, 0.4, 1.2])
        );
        assert_eq!(c.weighted_matrix()[(0, 0)], 1.5);
        assert!(check_corollary(&vars, &DVector::from_row_slice(&[0.7, -1.1])));
    }

    #[test]
    fn random_instances_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let w = rng.random_range(1..=5);
            let g = ReplicatedGaussian::random(&mut rng, n, w);
            let y = random_vector(&mut rng, n);
            assert!(g.check_lemma_determinant());
            assert!(g.check_lemma_inverse());
            assert!(g.check_lemma_quadform(&y, 0.5));
            assert!(g.check_theorem(&y, 0.5));
        }
        for _ in 0..50 {
            let c = Corollary::random(&mut rng, 3, 3);
            assert!(c.check(&random_vector(&mut rng, 3)));
        }
    }

    #[test]
    fn suite_is_reproducible() {
        let a = run_suite(5, 50);
        let b = run_suite(5, 50);
        assert_eq!(a, b);
        assert_eq!(a.failures, 0);
        assert_eq!(a.instances, 50 * 4 + 200);
    }
}
