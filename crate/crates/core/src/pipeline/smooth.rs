//! Convex baselines: kernel-weighted local mean and local linear fit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{kernel_weights, KernelSpec};

fn check_shape(xs: &[f64], ys: &DMatrix<f64>) -> Result<()> {
    if xs.len() != ys.nrows() || xs.is_empty() {
        return Err(Error::Dimension(format!(
            "{} abscissae for {} rows",
            xs.len(),
            ys.nrows()
        )));
    }
    Ok(())
}

/// Nadaraya–Watson estimate `Σ K y / Σ K` for every column of `ys`.
pub fn nw_smooth(xs: &[f64], ys: &DMatrix<f64>, kernel: &KernelSpec, query: &[f64]) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    check_shape(xs, ys)?;
    let mut out = DMatrix::zeros(query.len(), ys.ncols());
    for (qi, &q) in query.iter().enumerate() {
        let w = kernel_weights(kernel, xs, &q)?;
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroWeight(q));
        }
        for c in 0..ys.ncols() {
            let s: f64 = w.iter().zip(ys.column(c).iter()).map(|(a, b)| a * b).sum();
            out[(qi, c)] = s / total;
        }
    }
    Ok(out)
}

/// Weighted least-squares line through the in-support points of each
/// query, evaluated at the query.
pub fn loess(xs: &[f64], ys: &DMatrix<f64>, kernel: &KernelSpec, query: &[f64]) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    check_shape(xs, ys)?;
    let mut out = DMatrix::zeros(query.len(), ys.ncols());
    for (qi, &q) in query.iter().enumerate() {
        let w = kernel_weights(kernel, xs, &q)?;
        let support: Vec<usize> = (0..xs.len()).filter(|&i| w[i] > 0.0).collect();
        let Some(&first) = support.first() else {
            return Err(Error::ZeroWeight(q));
        };
        if support.iter().all(|&i| xs[i] == xs[first]) {
            return Err(Error::DegenerateDesign(q));
        }
        // centre on q so the intercept is the fitted value
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &i in &support {
            let d = xs[i] - q;
            s0 += w[i];
            s1 += w[i] * d;
            s2 += w[i] * d * d;
        }
        let det = s0 * s2 - s1 * s1;
        if !(det > 0.0) {
            return Err(Error::DegenerateDesign(q));
        }
        for c in 0..ys.ncols() {
            let (mut t0, mut t1) = (0.0, 0.0);
            for &i in &support {
                let y = ys[(i, c)];
                t0 += w[i] * y;
                t1 += w[i] * (xs[i] - q) * y;
            }
            out[(qi, c)] = (s2 * t0 - s1 * t1) / det;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn constant_in_constant_out() {
        let xs = grid(30);
        let ys = DMatrix::from_element(30, 2, 4.25);
        let q: Vec<f64> = (0..60).map(|i| i as f64 * 0.5).collect();
        for k in [KernelSpec::tricube(3.0), KernelSpec::gaussian(2.0), KernelSpec::knn_uniform(4)] {
            let out = nw_smooth(&xs, &ys, &k, &q).unwrap();
            assert!(out.iter().all(|v| (v - 4.25).abs() < 1e-12));
        }
    }

    #[test]
    fn full_window_gives_column_mean() {
        let xs = grid(10);
        let ys = DMatrix::from_fn(10, 2, |i, c| (i * (c + 1)) as f64);
        let out = nw_smooth(&xs, &ys, &KernelSpec::uniform(100.0), &[0.0, 7.3]).unwrap();
        assert_relative_eq!(out[(0, 0)], 4.5, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 1)], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_reduces_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Normal::new(0.0, 1.0).unwrap();
        let xs = grid(300);
        let ys = DMatrix::from_fn(300, 1, |_, _| d.sample(&mut rng));
        let out = nw_smooth(&xs, &ys, &KernelSpec::tricube(10.0), &xs).unwrap();
        assert!(out.column(0).variance() < 0.5 * ys.column(0).variance());
    }

    #[test]
    fn zero_weight_is_an_error() {
        let xs = grid(5);
        let ys = DMatrix::zeros(5, 1);
        assert!(matches!(
            nw_smooth(&xs, &ys, &KernelSpec::tricube(1.0), &[50.0]),
            Err(Error::ZeroWeight(_))
        ));
        assert!(matches!(
            loess(&xs, &ys, &KernelSpec::tricube(1.0), &[50.0]),
            Err(Error::ZeroWeight(_))
        ));
    }

    #[test]
    fn loess_reproduces_lines() {
        let xs = grid(40);
        let ys = DMatrix::from_fn(40, 2, |i, c| if c == 0 { 3.0 * i as f64 - 7.0 } else { -0.5 * i as f64 });
        let q = [0.0, 3.3, 20.0, 39.0, 45.0];
        let out = loess(&xs, &ys, &KernelSpec::tricube(8.0), &q).unwrap();
        for (qi, &x) in q.iter().enumerate().take(4) {
            assert_relative_eq!(out[(qi, 0)], 3.0 * x - 7.0, epsilon = 1e-9);
            assert_relative_eq!(out[(qi, 1)], -0.5 * x, epsilon = 1e-9);
        }
        assert!(loess(&xs, &ys, &KernelSpec::tricube(8.0), &[50.0]).is_err());
    }

    #[test]
    fn loess_two_points_interpolates() {
        let xs = [1.0, 3.0];
        let ys = DMatrix::from_column_slice(2, 1, &[2.0, 6.0]);
        let out = loess(&xs, &ys, &KernelSpec::uniform(10.0), &[2.0, 0.0]).unwrap();
        assert_relative_eq!(out[(0, 0)], 4.0, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loess_degenerate_design() {
        let xs = [0.0, 5.0];
        let ys = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            loess(&xs, &ys, &KernelSpec::uniform(1.0), &[0.0]),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn loess_beats_raw_noise_on_a_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Normal::new(0.0, 1.0).unwrap();
        let xs = grid(1000);
        let truth: Vec<f64> = xs.iter().map(|x| 2.0 * (2.0 * std::f64::consts::PI * x / 50.0).sin()).collect();
        let ys = DMatrix::from_fn(1000, 1, |i, _| truth[i] + d.sample(&mut rng));
        let out = loess(&xs, &ys, &KernelSpec::tricube(12.5), &xs).unwrap();
        let rms = (out
            .column(0)
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 1000.0)
            .sqrt();
        assert!(rms < 1.0, "{rms}");
    }

    proptest! {
        #[test]
        fn nw_stays_within_data_range(ys in prop::collection::vec(-100.0f64..100.0, 5..40), q in 0.0f64..40.0) {
            let xs = grid(ys.len());
            let m = DMatrix::from_column_slice(ys.len(), 1, &ys);
            let k = KernelSpec::gaussian(4.0);
            let out = nw_smooth(&xs, &m, &k, &[q]).unwrap()[(0, 0)];
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out >= lo - 1e-9 && out <= hi + 1e-9);
        }
    }
}
