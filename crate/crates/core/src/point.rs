/// A location in the input domain. Distances are Euclidean.
///
/// Time series use plain `f64` time stamps; vectors are supported for
/// multivariate index sets.
pub trait Point {
    fn sq_dist(&self, other: &Self) -> f64;

    fn dist(&self, other: &Self) -> f64 {
        self.sq_dist(other).sqrt()
    }
}

impl Point for f64 {
    fn sq_dist(&self, other: &Self) -> f64 {
        let d = self - other;
        d * d
    }

    fn dist(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

impl<const N: usize> Point for [f64; N] {
    fn sq_dist(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Point for Vec<f64> {
    fn sq_dist(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}
