//! Contrived datasets and labeled synthetic corpora.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::TimeSeries;

/// Noiseless core of [`gen_variable_noise`].
pub fn variable_noise_core(x: f64) -> f64 {
    10.0 * (2.0 * PI * x / 50.0).sin()
}

/// Noiseless core of [`gen_variable_period`].
pub fn variable_period_core(x: f64) -> f64 {
    10.0 * (2.0 * PI * x * x / 20000.0).sin()
}

/// Noise variance of [`gen_variable_noise`] at `x`.
pub fn variable_noise_variance(x: f64) -> f64 {
    if (450.0..=550.0).contains(&x) {
        5.0
    } else {
        1.0
    }
}

/// `x = 0, 1, …, n-1` with a period-50 sine of amplitude 10 plus
/// Gaussian noise of variance 1, or 5 on `[450, 550]`.
pub fn gen_variable_noise(seed: u64, n: usize) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let ys = xs
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            variable_noise_core(x) + variable_noise_variance(x).sqrt() * z
        })
        .collect();
    TimeSeries::univariate(xs, ys, "y").expect("grid is increasing")
}

/// `x = -half, …, half` with `10 sin(2π x² / 20000)` plus unit-variance
/// Gaussian noise. The local period near `x` is `10000 / |x|`.
pub fn gen_variable_period(seed: u64, half: usize) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = half as i64;
    let xs: Vec<f64> = (-h..=h).map(|i| i as f64).collect();
    let ys = xs
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            variable_period_core(x) + z
        })
        .collect();
    TimeSeries::univariate(xs, ys, "y").expect("grid is increasing")
}

/// One class of [`gen_labeled_segments`]: `amplitude · sin(2π t / period +
/// φ)` plus Gaussian noise, with a random phase φ per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub noise_variance: f64,
    pub period: f64,
    pub amplitude: f64,
    /// Relative standard deviation of the per-segment perturbation applied
    /// to each of the three parameters.
    #[serde(default)]
    pub jitter: f64,
}

impl ClassSpec {
    pub fn new(noise_variance: f64, period: f64, amplitude: f64) -> Self {
        ClassSpec {
            noise_variance,
            period,
            amplitude,
            jitter: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.noise_variance > 0.0
            && self.period > 0.0
            && self.amplitude >= 0.0
            && self.jitter >= 0.0
            && [self.noise_variance, self.period, self.amplitude, self.jitter]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid class spec {self:?}")))
        }
    }
}

/// A labeled segment corpus with `per_class` segments of `seg_len` samples
/// per class, in class order. Each segment perturbs its class parameters by
/// a factor `|1 + jitter · z|` with standard normal `z`.
pub fn gen_labeled_segments(
    classes: &[ClassSpec],
    per_class: usize,
    seg_len: usize,
    seed: u64,
) -> Result<Vec<(TimeSeries, usize)>> {
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    if seg_len < 2 {
        return Err(Error::InvalidInput("segments need at least two samples".into()));
    }
    for c in classes {
        c.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (label, spec) in classes.iter().enumerate() {
        for _ in 0..per_class {
            let mut perturb = |v: f64| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v * (1.0 + spec.jitter * z).abs()
            };
            let var = perturb(spec.noise_variance);
            let period = perturb(spec.period);
            let amp = perturb(spec.amplitude);
            let phase = Normal::new(0.0, PI).expect("finite").sample(&mut rng);
            let noise = Normal::new(0.0, var.sqrt()).expect("positive variance");
            let ts: Vec<f64> = (0..seg_len).map(|i| i as f64).collect();
            let ys = ts
                .iter()
                .map(|t| amp * (2.0 * PI * t / period + phase).sin() + noise.sample(&mut rng))
                .collect();
            out.push((TimeSeries::univariate(ts, ys, "y")?, label));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    VariableNoise,
    VariablePeriod,
    LabeledSegments,
}

/// Serializable description of a generator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    #[serde(default)]
    pub rng_seed: u64,
    /// Series length (segment length for labeled segments).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub classes: Option<Vec<ClassSpec>>,
    #[serde(default)]
    pub per_class: Option<usize>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, rng_seed: u64) -> Self {
        GeneratorSpec {
            kind,
            rng_seed,
            n: None,
            classes: None,
            per_class: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n.unwrap_or(match self.kind {
            GeneratorKind::VariableNoise => 1000,
            GeneratorKind::VariablePeriod => 1001,
            GeneratorKind::LabeledSegments => 200,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 10 {
            return Err(Error::InvalidInput(format!("generator length {} is below 10", self.len())));
        }
        if self.kind == GeneratorKind::VariablePeriod && self.len().is_multiple_of(2) {
            return Err(Error::InvalidInput("variable_period needs an odd length".into()));
        }
        if self.kind != GeneratorKind::LabeledSegments && (self.classes.is_some() || self.per_class.is_some()) {
            return Err(Error::InvalidInput("classes and per_class only apply to labeled_segments".into()));
        }
        Ok(())
    }

    /// Default two-class corpus: noise variance 1 against 5 on a shared
    /// period-50 sine.
    pub fn default_classes() -> Vec<ClassSpec> {
        vec![ClassSpec::new(1.0, 50.0, 10.0), ClassSpec::new(5.0, 50.0, 10.0)]
    }

    /// Single-series generators.
    pub fn series(&self) -> Result<TimeSeries> {
        self.validate()?;
        match self.kind {
            GeneratorKind::VariableNoise => Ok(gen_variable_noise(self.rng_seed, self.len())),
            GeneratorKind::VariablePeriod => Ok(gen_variable_period(self.rng_seed, self.len() / 2)),
            GeneratorKind::LabeledSegments => Err(Error::InvalidInput(
                "labeled_segments produces a corpus, not a single series".into(),
            )),
        }
    }

    pub fn corpus(&self) -> Result<Vec<(TimeSeries, usize)>> {
        self.validate()?;
        let classes = self.classes.clone().unwrap_or_else(Self::default_classes);
        gen_labeled_segments(&classes, self.per_class.unwrap_or(20), self.len(), self.rng_seed)
    }
}
