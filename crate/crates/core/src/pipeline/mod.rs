//! Local model feature transformation: one weighted GP fit per query time
//! and channel, with the fitted free parameters as features.

mod demo;
mod smooth;

pub use demo::{seed_demo, DemoFamily, DemoStep, DemoSweep, DemoTrajectory};
pub use smooth::{loess, nw_smooth};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covfn::CovExpr;
use crate::error::{Error, Result};
use crate::kernels::{kernel_weights, KernelSpec};
use crate::wgpr::{fit, FitOptions, FitResult, Seed, SeedOrigin, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: DMatrix<f64>,
    channel_names: Vec<String>,
}

impl TimeSeries {
    /// `values` is `times.len() × channel_names.len()`.
    pub fn new(times: Vec<f64>, values: DMatrix<f64>, channel_names: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 || channel_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} channel names for {} value columns",
                channel_names.len(),
                values.ncols()
            )));
        }
        if values.nrows() != times.len() {
            return Err(Error::Dimension(format!(
                "{} time stamps for {} value rows",
                times.len(),
                values.nrows()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidInput(format!("time stamp {i} is not finite")));
        }
        if let Some(i) = times.windows(2).position(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput(format!(
                "time stamps must be strictly increasing; row {} has {} after {}",
                i + 1,
                times[i + 1],
                times[i]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("series values must be finite".into()));
        }
        Ok(TimeSeries {
            times,
            values,
            channel_names,
        })
    }

    pub fn univariate(times: Vec<f64>, ys: Vec<f64>, name: &str) -> Result<Self> {
        let n = ys.len();
        TimeSeries::new(times, DMatrix::from_vec(n, 1, ys), vec![name.to_string()])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }
}

fn default_lo() -> f64 {
    1e-10
}

fn default_hi() -> f64 {
    1e10
}

/// How each local fit picks its optimizer starting points. Seed ranges are
/// natural-unit bounds of a log-uniform draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedStrategy {
    /// Always start from `theta`, or from the expression's own values.
    Fixed {
        #[serde(default)]
        theta: Option<Vec<f64>>,
    },
    /// Start from the previous query's optimum. The first query, and any
    /// query after a failure with no earlier success, uses `fallback`.
    Neighbor {
        #[serde(default)]
        fallback: Option<Vec<f64>>,
    },
    MultiSeed {
        count: usize,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
        #[serde(default)]
        rng_seed: u64,
    },
    /// An exemplar fit at the first query with `exemplar_seed_count`
    /// log-uniform seeds, then neighbor seeding plus the exemplar optimum at
    /// every query. When the exemplar seed wins, the query is refit with
    /// the same number of log-uniform seeds.
    NeighborPlusExemplar {
        exemplar_seed_count: usize,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
        #[serde(default)]
        rng_seed: u64,
    },
}

impl Default for SeedStrategy {
    fn default() -> Self {
        SeedStrategy::Fixed { theta: None }
    }
}

impl SeedStrategy {
    pub fn is_sequential(&self) -> bool {
        matches!(
            self,
            SeedStrategy::Neighbor { .. } | SeedStrategy::NeighborPlusExemplar { .. }
        )
    }

    pub fn validate(&self, free: usize) -> Result<()> {
        let check_theta = |t: &Option<Vec<f64>>| match t {
            Some(v) if v.len() != free => Err(Error::InvalidInput(format!(
                "seed has {} values, expression has {free} free parameters",
                v.len()
            ))),
            Some(v) if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) => {
                Err(Error::InvalidInput("seed values must be positive and finite".into()))
            }
            _ => Ok(()),
        };
        let check_range = |count: usize, lo: f64, hi: f64| {
            if count == 0 {
                Err(Error::InvalidInput("seed count must be at least 1".into()))
            } else if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                Err(Error::InvalidInput(format!("seed range needs 0 < lo < hi, got ({lo}, {hi})")))
            } else {
                Ok(())
            }
        };
        match self {
            SeedStrategy::Fixed { theta } => check_theta(theta),
            SeedStrategy::Neighbor { fallback } => check_theta(fallback),
            SeedStrategy::MultiSeed { count, lo, hi, .. } => check_range(*count, *lo, *hi),
            SeedStrategy::NeighborPlusExemplar {
                exemplar_seed_count,
                lo,
                hi,
                ..
            } => check_range(*exemplar_seed_count, *lo, *hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmftConfig {
    pub kernel: KernelSpec,
    pub expr: CovExpr,
    #[serde(default)]
    pub strategy: SeedStrategy,
    #[serde(default)]
    pub fit: FitOptions,
}

impl LmftConfig {
    pub fn new(kernel: KernelSpec, expr: CovExpr, strategy: SeedStrategy) -> Self {
        LmftConfig {
            kernel,
            expr,
            strategy,
            fit: FitOptions::default(),
        }
    }

    pub fn with_fit(mut self, fit: FitOptions) -> Self {
        self.fit = fit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.expr.validate()?;
        let m = self.expr.free_count();
        if m == 0 {
            return Err(Error::NoFreeParameters);
        }
        self.strategy.validate(m)
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one (channel, query) cell.
fn cell_rng(base: u64, channel: usize, query: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(base ^ splitmix(channel as u64)) ^ query);
    ChaCha8Rng::seed_from_u64(s)
}

fn log_uniform_seeds(rng: &mut ChaCha8Rng, count: usize, m: usize, lo: f64, hi: f64) -> Vec<Seed> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            let theta = (0..m).map(|_| rng.random_range(a..b).exp()).collect();
            Seed::new(theta, SeedOrigin::MultiSeed(i))
        })
        .collect()
}

/// Features and fit for one query time and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub features: Vec<f64>,
    pub fit: FitResult,
    pub retained: usize,
    pub mean_weight: f64,
}

/// Kernel-weighted training set around `q`: retained times, values and
/// mean-1 weights.
fn local_data(q: f64, times: &[f64], ys: &[f64], kernel: &KernelSpec) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let w = WeightVector::from_raw(kernel_weights(kernel, times, &q)?)?;
    if w.retained().is_empty() {
        return Ok((vec![], vec![], vec![]));
    }
    let w = w.normalize()?;
    let xs = w.retained().iter().map(|&i| times[i]).collect();
    let y = w.retained().iter().map(|&i| ys[i]).collect();
    Ok((xs, y, w.retained_weights()))
}

fn fit_local(q: f64, times: &[f64], ys: &[f64], cfg: &LmftConfig, seeds: &[Seed]) -> Result<LocalFit> {
    let (xs, y, w) = local_data(q, times, ys, &cfg.kernel)?;
    let required = 2 * cfg.expr.free_count();
    if xs.len() < required {
        return Err(Error::TooFewPoints {
            found: xs.len(),
            required,
        });
    }
    let fitted = fit(&cfg.expr, &xs, &y, &w, seeds, &cfg.fit)?;
    Ok(LocalFit {
        features: fitted.params(),
        mean_weight: w.iter().sum::<f64>() / w.len() as f64,
        retained: xs.len(),
        fit: fitted,
    })
}

/// Per-channel state carried along the query axis by sequential strategies.
struct Walker<'a> {
    cfg: &'a LmftConfig,
    times: &'a [f64],
    ys: Vec<f64>,
    channel: usize,
    previous: Option<Vec<f64>>,
    exemplar: Option<Vec<f64>>,
}

impl<'a> Walker<'a> {
    fn new(cfg: &'a LmftConfig, series: &'a TimeSeries, channel: usize) -> Self {
        Walker {
            cfg,
            times: series.times(),
            ys: series.channel(channel),
            channel,
            previous: None,
            exemplar: None,
        }
    }

    fn default_theta(&self) -> Vec<f64> {
        self.cfg.expr.free_values()
    }

    fn step(&mut self, qi: usize, q: f64) -> Result<LocalFit> {
        let m = self.cfg.expr.free_count();
        let result = match &self.cfg.strategy {
            SeedStrategy::Fixed { theta } => {
                let t = theta.clone().unwrap_or_else(|| self.default_theta());
                self.fit(q, &[Seed::new(t, SeedOrigin::Fixed)])
            }
            SeedStrategy::Neighbor { fallback } => {
                let seed = match &self.previous {
                    Some(p) => Seed::new(p.clone(), SeedOrigin::Neighbor),
                    None => Seed::new(
                        fallback.clone().unwrap_or_else(|| self.default_theta()),
                        SeedOrigin::Fixed,
                    ),
                };
                self.fit(q, &[seed])
            }
            SeedStrategy::MultiSeed { count, lo, hi, rng_seed } => {
                let mut rng = cell_rng(*rng_seed, self.channel, qi as u64);
                let seeds = log_uniform_seeds(&mut rng, *count, m, *lo, *hi);
                self.fit(q, &seeds)
            }
            SeedStrategy::NeighborPlusExemplar {
                exemplar_seed_count,
                lo,
                hi,
                rng_seed,
            } => {
                let (count, lo, hi, base) = (*exemplar_seed_count, *lo, *hi, *rng_seed);
                if self.exemplar.is_none() {
                    let mut rng = cell_rng(base, self.channel, u64::MAX);
                    let seeds = log_uniform_seeds(&mut rng, count, m, lo, hi);
                    self.exemplar = Some(self.fit(q, &seeds)?.features);
                }
                let exemplar = self.exemplar.clone().unwrap_or_default();
                let mut seeds = Vec::with_capacity(2);
                if let Some(p) = &self.previous {
                    seeds.push(Seed::new(p.clone(), SeedOrigin::Neighbor));
                }
                seeds.push(Seed::new(exemplar, SeedOrigin::Exemplar));
                let local = self.fit(q, &seeds)?;
                if seeds.len() > 1 && local.fit.seed_origin == SeedOrigin::Exemplar {
                    let mut rng = cell_rng(base, self.channel, qi as u64);
                    seeds.extend(log_uniform_seeds(&mut rng, count, m, lo, hi));
                    self.fit(q, &seeds)
                } else {
                    Ok(local)
                }
            }
        };
        if let Ok(local) = &result {
            self.previous = Some(local.features.clone());
        }
        result
    }

    fn fit(&self, q: f64, seeds: &[Seed]) -> Result<LocalFit> {
        fit_local(q, self.times, &self.ys, self.cfg, seeds)
    }
}

/// One local fit at query `q` on `channel`. Sequential strategies have no
/// neighbor here, so they start from their fallback (or the exemplar).
pub fn lmft_at(q: f64, series: &TimeSeries, channel: usize, cfg: &LmftConfig) -> Result<LocalFit> {
    cfg.validate()?;
    if channel >= series.n_channels() {
        return Err(Error::Dimension(format!(
            "channel {channel} out of range for {} channels",
            series.n_channels()
        )));
    }
    Walker::new(cfg, series, channel).step(0, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub converged: bool,
    pub log_marginal: Option<f64>,
    pub seed_origin: Option<SeedOrigin>,
    pub failed: bool,
    pub retained: usize,
    pub mean_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellDiagnostics {
    fn from_result(r: &Result<LocalFit>) -> Self {
        match r {
            Ok(l) => CellDiagnostics {
                converged: l.fit.converged,
                log_marginal: Some(l.fit.log_marginal),
                seed_origin: Some(l.fit.seed_origin),
                failed: false,
                retained: l.retained,
                mean_weight: Some(l.mean_weight),
                error: None,
            },
            Err(e) => CellDiagnostics {
                converged: false,
                log_marginal: None,
                seed_origin: None,
                failed: true,
                retained: match e {
                    Error::TooFewPoints { found, .. } => *found,
                    _ => 0,
                },
                mean_weight: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// LMFT output: one row per query time, `channel.parameter` columns
/// grouped by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub query_times: Vec<f64>,
    pub features: DMatrix<f64>,
    pub feature_names: Vec<String>,
    /// Indexed `[query][channel]`.
    pub diagnostics: Vec<Vec<CellDiagnostics>>,
}

impl FeatureSeries {
    pub fn failed_cells(&self) -> usize {
        self.diagnostics.iter().flatten().filter(|d| d.failed).count()
    }

    /// Features as a series over the query times, for smoothing or DTW.
    pub fn to_series(&self) -> Result<TimeSeries> {
        TimeSeries::new(self.query_times.clone(), self.features.clone(), self.feature_names.clone())
    }
}

/// Which query times to evaluate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryGrid {
    #[default]
    All,
    Stride(usize),
    Explicit(Vec<f64>),
}

impl QueryGrid {
    pub fn times(&self, series: &TimeSeries) -> Result<Vec<f64>> {
        match self {
            QueryGrid::All => Ok(series.times().to_vec()),
            QueryGrid::Stride(0) => Err(Error::InvalidInput("query stride must be at least 1".into())),
            QueryGrid::Stride(s) => Ok(series.times().iter().step_by(*s).copied().collect()),
            QueryGrid::Explicit(v) => Ok(v.clone()),
        }
    }
}

type Column = Vec<Result<LocalFit>>;

/// Runs [`lmft_at`] over every query time and channel. Sequential
/// strategies walk each channel in ascending query order; the rest fan out
/// per cell. Failed cells are filled from the nearest successful query in
/// the same channel (ties go to the earlier one), or with the expression's
/// own values when the channel has no success, and flagged in diagnostics.
pub fn extract(series: &TimeSeries, query_times: &[f64], cfg: &LmftConfig) -> Result<FeatureSeries> {
    cfg.validate()?;
    if query_times.is_empty() {
        return Err(Error::InvalidInput("no query times".into()));
    }
    if query_times.iter().any(|q| !q.is_finite()) || query_times.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidInput("query times must be finite and sorted".into()));
    }
    let nc = series.n_channels();
    let nq = query_times.len();
    let m = cfg.expr.free_count();

    let columns: Vec<Column> = if cfg.strategy.is_sequential() {
        (0..nc)
            .into_par_iter()
            .map(|c| {
                let mut walker = Walker::new(cfg, series, c);
                query_times
                    .iter()
                    .enumerate()
                    .map(|(qi, &q)| walker.step(qi, q))
                    .collect()
            })
            .collect()
    } else {
        let cells: Vec<Result<LocalFit>> = (0..nc * nq)
            .into_par_iter()
            .map(|cell| {
                let (c, qi) = (cell / nq, cell % nq);
                Walker::new(cfg, series, c).step(qi, query_times[qi])
            })
            .collect();
        let mut it = cells.into_iter();
        (0..nc).map(|_| it.by_ref().take(nq).collect()).collect()
    };

    let names = cfg.expr.free_names();
    let mut feature_names = Vec::with_capacity(nc * m);
    for ch in series.channel_names() {
        feature_names.extend(names.iter().map(|n| format!("{ch}.{n}")));
    }
    let mut features = DMatrix::zeros(nq, nc * m);
    let mut diagnostics = vec![Vec::with_capacity(nc); nq];
    let fallback = cfg.expr.free_values();
    for (c, col) in columns.iter().enumerate() {
        let ok: Vec<usize> = (0..nq).filter(|&i| col[i].is_ok()).collect();
        for qi in 0..nq {
            let source = match &col[qi] {
                Ok(l) => &l.features,
                Err(_) => nearest(&ok, qi)
                    .and_then(|j| col[j].as_ref().ok())
                    .map(|l| &l.features)
                    .unwrap_or(&fallback),
            };
            for (k, v) in source.iter().enumerate() {
                features[(qi, c * m + k)] = *v;
            }
            diagnostics[qi].push(CellDiagnostics::from_result(&col[qi]));
        }
    }
    Ok(FeatureSeries {
        query_times: query_times.to_vec(),
        features,
        feature_names,
        diagnostics,
    })
}

fn nearest(sorted: &[usize], i: usize) -> Option<usize> {
    let pos = sorted.partition_point(|&j| j < i);
    let after = sorted.get(pos).copied();
    let before = pos.checked_sub(1).map(|p| sorted[p]);
    match (before, after) {
        (Some(b), Some(a)) => Some(if i - b <= a - i { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Principal alias of a fitted period on a uniform grid of the given
/// spacing. Periods `p` and `1 / (1/p + k/spacing)` give the same covariance
/// at every sample pair, so only the folded frequency in `[0, 1/(2·spacing)]`
/// is identified. Returns infinity for a folded frequency of zero.
pub fn principal_period(p: f64, spacing: f64) -> f64 {
    let f = (spacing / p).rem_euclid(1.0);
    let f = f.min(1.0 - f);
    if f > 0.0 {
        spacing / f
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_fold_to_one_period() {
        for p in [2.5, 7.0, 50.0, 333.0] {
            let f = 1.0 / p;
            for k in [1.0, 3.0, 1000.0] {
                let alias = 1.0 / (f + k);
                assert!((principal_period(alias, 1.0) - p).abs() < 1e-6 * p, "{p} {k}");
                let mirrored = 1.0 / (k - f);
                assert!((principal_period(mirrored, 1.0) - p).abs() < 1e-6 * p);
            }
            assert!((principal_period(p * 2.0, 2.0) - p * 2.0).abs() < 1e-9);
        }
        assert_eq!(principal_period(2.0 / 3.0, 1.0), 2.0);
        assert_eq!(principal_period(1.0, 1.0), f64::INFINITY);
        for (d, p) in [(3.0, 0.37), (1.0, 1e-7)] {
            let q = principal_period(p, 1.0);
            let g = |per: f64| (std::f64::consts::PI * d / per).sin().powi(2);
            assert!((g(p) - g(q)).abs() < 1e-6);
        }
    }
    use crate::covfn::Param::{Fixed, Free};
    use rand_distr::{Distribution, Normal};

    fn noise_series(n: usize, variance: f64, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, variance.sqrt()).unwrap();
        let ys = (0..n).map(|_| d.sample(&mut rng)).collect();
        TimeSeries::univariate((0..n).map(|i| i as f64).collect(), ys, "x").unwrap()
    }

    fn wn_config(h: f64) -> LmftConfig {
        LmftConfig::new(KernelSpec::tricube(h), CovExpr::wn(Free(1.0)), SeedStrategy::default())
    }

    #[test]
    fn series_validation() {
        let m = DMatrix::from_element(3, 1, 0.0);
        assert!(TimeSeries::new(vec![0.0, 1.0, 1.0], m.clone(), vec!["a".into()]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0], m.clone(), vec!["a".into()]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0, 2.0], m.clone(), vec![]).is_err());
        let mut bad = m.clone();
        bad[(1, 0)] = f64::NAN;
        assert!(TimeSeries::new(vec![0.0, 1.0, 2.0], bad, vec!["a".into()]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0, 2.0], m, vec!["a".into()]).is_ok());
    }

    #[test]
    fn white_noise_feature_estimates_local_variance() {
        let s = noise_series(400, 4.0, 1);
        let local = lmft_at(200.0, &s, 0, &wn_config(150.0)).unwrap();
        assert!(local.retained >= 100);
        assert!((local.features[0] - 4.0).abs() < 0.8, "{:?}", local.features);
        assert!((local.mean_weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whole_window_uniform_kernel_is_query_independent() {
        let s = noise_series(60, 1.0, 2);
        let cfg = LmftConfig::new(KernelSpec::uniform(1e3), CovExpr::wn(Free(1.0)), SeedStrategy::default());
        let out = extract(&s, &[0.0, 20.0, 59.0], &cfg).unwrap();
        let col = out.features.column(0);
        assert_eq!(col[0], col[1]);
        assert_eq!(col[1], col[2]);
    }

    #[test]
    fn column_layout_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let vals = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let s = TimeSeries::new(
            (0..n).map(|i| i as f64).collect(),
            vals,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let out = extract(&s, &[10.0, 40.0], &wn_config(30.0)).unwrap();
        assert_eq!(out.features.ncols(), 3);
        assert_eq!(out.feature_names, ["a.wn", "b.wn", "c.wn"]);
        assert!(out.features.iter().all(|v| *v > 0.0));

        let two = CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Free(1.0)), CovExpr::rbf(Fixed(3.0))]),
            CovExpr::wn(Free(1.0)),
        ]);
        let cfg = LmftConfig::new(KernelSpec::tricube(30.0), two, SeedStrategy::default());
        let out = extract(&s, &[40.0], &cfg).unwrap();
        assert_eq!(out.feature_names, ["a.cn", "a.wn", "b.cn", "b.wn", "c.cn", "c.wn"]);
    }

    #[test]
    fn no_free_parameters_fails_before_fitting() {
        let s = noise_series(20, 1.0, 4);
        let cfg = LmftConfig::new(KernelSpec::tricube(5.0), CovExpr::wn(Fixed(1.0)), SeedStrategy::default());
        assert!(matches!(extract(&s, &[3.0], &cfg), Err(Error::NoFreeParameters)));
        assert!(matches!(lmft_at(3.0, &s, 0, &cfg), Err(Error::NoFreeParameters)));
    }

    #[test]
    fn sparse_support_is_flagged_and_filled() {
        let s = noise_series(50, 1.0, 5);
        // h = 1.5 keeps 3 points, enough for one parameter
        let cfg = wn_config(1.5);
        let local = lmft_at(10.0, &s, 0, &cfg).unwrap();
        assert_eq!(local.retained, 3);
        // between samples only 2 points survive at h = 0.9, still enough
        let cfg = wn_config(0.9);
        let out = extract(&s, &[10.0, 10.5, 1e3], &cfg).unwrap();
        assert!(out.diagnostics[0][0].failed);
        assert!(!out.diagnostics[1][0].failed);
        assert!(out.diagnostics[2][0].failed);
        assert_eq!(out.features[(0, 0)], out.features[(1, 0)]);
        assert_eq!(out.features[(2, 0)], out.features[(1, 0)]);
        assert_eq!(out.failed_cells(), 2);
        assert!(matches!(lmft_at(1e3, &s, 0, &cfg), Err(Error::TooFewPoints { found: 0, .. })));
    }

    #[test]
    fn failed_channel_keeps_seed_values() {
        let s = noise_series(10, 1.0, 6);
        let out = extract(&s, &[100.0, 200.0], &wn_config(2.0)).unwrap();
        assert_eq!(out.features[(0, 0)], 1.0);
        assert_eq!(out.failed_cells(), 2);
    }

    #[test]
    fn locality_with_finite_support() {
        let s = noise_series(120, 1.0, 7);
        let queries = [30.0, 40.0, 50.0];
        let cfg = wn_config(10.0);
        let base = extract(&s, &queries, &cfg).unwrap();
        let mut vals = s.values().clone();
        for i in 80..120 {
            vals[(i, 0)] += 50.0;
        }
        let changed = TimeSeries::new(s.times().to_vec(), vals, s.channel_names().to_vec()).unwrap();
        assert_eq!(extract(&changed, &queries, &cfg).unwrap(), base);
    }

    #[test]
    fn deterministic_for_every_strategy() {
        let s = noise_series(120, 2.0, 8);
        let expr = CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Free(1.0)), CovExpr::rbf(Fixed(5.0))]),
            CovExpr::wn(Free(1.0)),
        ]);
        let strategies = [
            SeedStrategy::Fixed { theta: None },
            SeedStrategy::Neighbor { fallback: Some(vec![2.0, 2.0]) },
            SeedStrategy::MultiSeed { count: 3, lo: 1e-3, hi: 1e3, rng_seed: 9 },
            SeedStrategy::NeighborPlusExemplar { exemplar_seed_count: 3, lo: 1e-3, hi: 1e3, rng_seed: 9 },
        ];
        let queries: Vec<f64> = (20..100).step_by(20).map(f64::from).collect();
        for st in strategies {
            let cfg = LmftConfig::new(KernelSpec::tricube(25.0), expr.clone(), st);
            let a = extract(&s, &queries, &cfg).unwrap();
            let b = extract(&s, &queries, &cfg).unwrap();
            assert_eq!(a, b);
            for row in &a.diagnostics {
                for d in row {
                    if let Some(mw) = d.mean_weight {
                        assert!((mw - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn neighbor_strategy_records_origins() {
        let s = noise_series(100, 1.0, 10);
        let cfg = LmftConfig::new(
            KernelSpec::tricube(20.0),
            CovExpr::wn(Free(1.0)),
            SeedStrategy::Neighbor { fallback: None },
        );
        let out = extract(&s, &[20.0, 30.0, 40.0], &cfg).unwrap();
        let origins: Vec<_> = out.diagnostics.iter().map(|r| r[0].seed_origin).collect();
        assert_eq!(
            origins,
            [Some(SeedOrigin::Fixed), Some(SeedOrigin::Neighbor), Some(SeedOrigin::Neighbor)]
        );
    }

    #[test]
    fn multiseed_draws_differ_per_cell() {
        let mut a = cell_rng(1, 0, 0);
        let mut b = cell_rng(1, 0, 1);
        let mut c = cell_rng(1, 1, 0);
        let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert!(x != y && x != z && y != z);
        let seeds = log_uniform_seeds(&mut cell_rng(4, 0, 0), 200, 2, 1e-10, 1e10);
        assert!(seeds.iter().flat_map(|s| &s.theta).all(|v| (1e-10..=1e10).contains(v)));
        assert!(seeds.iter().any(|s| s.theta[0] < 1e-5));
        assert!(seeds.iter().any(|s| s.theta[0] > 1e5));
    }

    #[test]
    fn strategy_json() {
        let st: SeedStrategy = serde_json::from_str(r#"{"kind":"multi_seed","count":25}"#).unwrap();
        assert_eq!(st, SeedStrategy::MultiSeed { count: 25, lo: 1e-10, hi: 1e10, rng_seed: 0 });
        assert!(serde_json::from_str::<SeedStrategy>(r#"{"kind":"fixed","bogus":1}"#).is_err());
        assert!(SeedStrategy::MultiSeed { count: 0, lo: 1.0, hi: 2.0, rng_seed: 0 }.validate(1).is_err());
        assert!(SeedStrategy::MultiSeed { count: 1, lo: 2.0, hi: 1.0, rng_seed: 0 }.validate(1).is_err());
        assert!(SeedStrategy::Fixed { theta: Some(vec![1.0, 2.0]) }.validate(1).is_err());
        let back: SeedStrategy = serde_json::from_str(&serde_json::to_string(&st).unwrap()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn query_grid_selection() {
        let s = noise_series(10, 1.0, 11);
        assert_eq!(QueryGrid::Stride(4).times(&s).unwrap(), [0.0, 4.0, 8.0]);
        assert_eq!(QueryGrid::All.times(&s).unwrap().len(), 10);
        assert!(QueryGrid::Stride(0).times(&s).is_err());
        let g: QueryGrid = serde_json::from_str(r#"{"stride":5}"#).unwrap();
        assert_eq!(g, QueryGrid::Stride(5));
        let g: QueryGrid = serde_json::from_str(r#""all""#).unwrap();
        assert_eq!(g, QueryGrid::All);
    }

    #[test]
    fn nearest_success() {
        assert_eq!(nearest(&[1, 5], 3), Some(1));
        assert_eq!(nearest(&[1, 4], 3), Some(4));
        assert_eq!(nearest(&[2], 0), Some(2));
        assert_eq!(nearest(&[], 0), None);
    }
}
