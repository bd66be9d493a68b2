//! Locality-weighting kernels.
//!
//! These are weighting functions in the local-learning sense: they map a
//! (data point, query point) pair to a nonnegative training weight. They are
//! not Mercer kernels and no positive-definiteness is implied.
//!
//! Fixed-bandwidth families are evaluated pairwise with [`eval_kernel`]. The
//! nearest-neighbour families need the whole dataset to find their bandwidth
//! and are only available through [`kernel_weights`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Tricube,
    Uniform,
    Gaussian,
    Dirichlet,
    KnnTricube,
    KnnUniform,
}

impl KernelFamily {
    pub fn is_knn(self) -> bool {
        matches!(self, KernelFamily::KnnTricube | KernelFamily::KnnUniform)
    }

    /// Tricube and uniform weights vanish outside a bounded window.
    pub fn has_finite_support(self) -> bool {
        matches!(
            self,
            KernelFamily::Tricube
                | KernelFamily::Uniform
                | KernelFamily::KnnTricube
                | KernelFamily::KnnUniform
        )
    }
}

/// Kernel configuration, serialized as `{"family": "tricube", "h": 120}`.
///
/// `h` is the bandwidth for the fixed-bandwidth families, `k` the neighbour
/// count for the `knn_*` families and `n` the order of the Dirichlet kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
}

impl KernelSpec {
    pub fn tricube(h: f64) -> Self {
        Self::with_bandwidth(KernelFamily::Tricube, h)
    }

    pub fn uniform(h: f64) -> Self {
        Self::with_bandwidth(KernelFamily::Uniform, h)
    }

    pub fn gaussian(h: f64) -> Self {
        Self::with_bandwidth(KernelFamily::Gaussian, h)
    }

    pub fn dirichlet(n: u32) -> Self {
        KernelSpec {
            family: KernelFamily::Dirichlet,
            h: None,
            k: None,
            n: Some(n),
        }
    }

    pub fn knn_tricube(k: usize) -> Self {
        Self::with_neighbours(KernelFamily::KnnTricube, k)
    }

    pub fn knn_uniform(k: usize) -> Self {
        Self::with_neighbours(KernelFamily::KnnUniform, k)
    }

    fn with_bandwidth(family: KernelFamily, h: f64) -> Self {
        KernelSpec {
            family,
            h: Some(h),
            k: None,
            n: None,
        }
    }

    fn with_neighbours(family: KernelFamily, k: usize) -> Self {
        KernelSpec {
            family,
            h: None,
            k: Some(k),
            n: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Tricube | KernelFamily::Uniform | KernelFamily::Gaussian => {
                match self.h {
                    Some(h) if h > 0.0 && h.is_finite() => Ok(()),
                    Some(h) => Err(Error::InvalidKernel(format!(
                        "bandwidth must be positive and finite, got {h}"
                    ))),
                    None => Err(Error::InvalidKernel(format!(
                        "{:?} kernel requires a bandwidth `h`",
                        self.family
                    ))),
                }
            }
            KernelFamily::Dirichlet => match self.n {
                Some(n) if n >= 1 => Ok(()),
                _ => Err(Error::InvalidKernel(
                    "dirichlet kernel requires a positive order `n`".into(),
                )),
            },
            KernelFamily::KnnTricube | KernelFamily::KnnUniform => match self.k {
                Some(k) if k >= 1 => Ok(()),
                _ => Err(Error::InvalidKernel(
                    "knn kernels require a neighbour count `k` >= 1".into(),
                )),
            },
        }
    }

    /// Half-width of the support, when it is fixed and bounded.
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Tricube | KernelFamily::Uniform => self.h,
            _ => None,
        }
    }
}

fn tricube_profile(d: f64, h: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    if d >= h {
        return 0.0;
    }
    let r = d / h;
    let t = 1.0 - r * r * r;
    t * t * t
}

/// Dirichlet kernel applied to squared distances, as conventionally written
/// for this weighting family. Where `sin(d²/2) = 0` the removable singularity
/// is replaced by its limit `2n + 1`. Values can be negative.
fn dirichlet_profile(sq: f64, n: u32) -> f64 {
    let den = (sq / 2.0).sin();
    if den == 0.0 {
        return 2.0 * f64::from(n) + 1.0;
    }
    ((f64::from(n) + 0.5) * sq).sin() / den
}

/// Weight of data point `x` for a model localized at query `q`.
pub fn eval_kernel<P: Point>(spec: &KernelSpec, x: &P, q: &P) -> Result<f64> {
    spec.validate()?;
    match spec.family {
        KernelFamily::Tricube => Ok(tricube_profile(x.dist(q), spec.h.unwrap())),
        KernelFamily::Uniform => Ok(if x.dist(q) < spec.h.unwrap() { 1.0 } else { 0.0 }),
        KernelFamily::Gaussian => Ok((-x.sq_dist(q) / spec.h.unwrap()).exp()),
        KernelFamily::Dirichlet => Ok(dirichlet_profile(x.sq_dist(q), spec.n.unwrap())),
        KernelFamily::KnnTricube | KernelFamily::KnnUniform => Err(Error::InvalidKernel(
            "knn kernels need the dataset; use kernel_weights".into(),
        )),
    }
}

/// Raw (unnormalized) weights of every element of `xs` against `q`.
///
/// For the knn families the bandwidth is the distance from `q` to its k-th
/// nearest element of `xs`; every point at or inside that distance (ties
/// included) is in the neighbourhood, and the tricube or uniform profile is
/// applied at that bandwidth.
pub fn kernel_weights<P: Point>(spec: &KernelSpec, xs: &[P], q: &P) -> Result<Vec<f64>> {
    spec.validate()?;
    if xs.is_empty() {
        return Err(Error::InvalidInput("kernel_weights over an empty dataset".into()));
    }
    if !spec.family.is_knn() {
        return xs.iter().map(|x| eval_kernel(spec, x, q)).collect();
    }

    let k = spec.k.unwrap();
    if k > xs.len() {
        return Err(Error::InvalidKernel(format!(
            "k = {k} exceeds dataset size {}",
            xs.len()
        )));
    }
    let dists: Vec<f64> = xs.iter().map(|x| x.dist(q)).collect();
    let mut sorted = dists.clone();
    sorted.sort_by(f64::total_cmp);
    let bandwidth = sorted[k - 1];

    let weights = dists
        .iter()
        .map(|&d| match spec.family {
            KernelFamily::KnnUniform => {
                if d <= bandwidth {
                    1.0
                } else {
                    0.0
                }
            }
            _ => {
                if d == 0.0 {
                    1.0
                } else if d <= bandwidth {
                    tricube_profile(d, bandwidth)
                } else {
                    0.0
                }
            }
        })
        .collect();
    Ok(weights)
}
