use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_corpus_csv, read_csv, write_corpus, write_features, write_series, LabeledSeries};
use crate::covfn::CovExpr;
use crate::error::{Error, Result};
use crate::eval::{metrics, nn1_classify, ConfusionMatrix, Metrics};
use crate::kernels::KernelSpec;
use crate::pipeline::{
    extract, nw_smooth, splitmix, CellDiagnostics, FeatureSeries, LmftConfig, QueryGrid, SeedStrategy, TimeSeries,
};
use crate::synth::{GeneratorKind, GeneratorSpec};
use crate::wgpr::{FitOptions, ObjectiveForm, WeightingMode};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Series CSV.
    Csv(PathBuf),
    /// Long-format labeled corpus CSV.
    Corpus(PathBuf),
    Generator(GeneratorSpec),
}

impl DataSource {
    fn is_corpus(&self) -> bool {
        match self {
            DataSource::Csv(_) => false,
            DataSource::Corpus(_) => true,
            DataSource::Generator(g) => g.kind == GeneratorKind::LabeledSegments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    #[serde(default)]
    pub grid: QueryGrid,
}

/// 1NN evaluation of a corpus. The first `train_per_class` items of each
/// label (in file order) train, the rest test; by default half of each label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default = "yes")]
    pub scale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Label reported as positive; the second label seen by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
}

fn yes() -> bool {
    true
}

impl Default for ClassifySpec {
    fn default() -> Self {
        ClassifySpec {
            train_per_class: None,
            scale: true,
            window: None,
            positive: None,
        }
    }
}

/// One experiment. Component seeds (generator, multi-seed strategies) act
/// as sub-streams under the top-level `rng_seed`, see [`derive_seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub data: DataSource,
    pub kernel: KernelSpec,
    pub covariance: CovExpr,
    #[serde(default)]
    pub strategy: SeedStrategy,
    #[serde(default)]
    pub query: QuerySpec,
    #[serde(default)]
    pub weighting_mode: WeightingMode,
    #[serde(default)]
    pub objective_form: ObjectiveForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifySpec>,
    pub output: String,
    #[serde(default)]
    pub rng_seed: u64,
}

const TAG_DATA: u64 = 0x6461_7461;
const TAG_STRATEGY: u64 = 0x7374_7261;

/// Deterministic per-component seed.
pub fn derive_seed(root: u64, component: u64, local: u64) -> u64 {
    splitmix(splitmix(root ^ splitmix(component)) ^ local)
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.output.is_empty() {
            return Err(Error::Config("output prefix is empty".into()));
        }
        self.lmft().validate()?;
        if let Some(k) = &self.smoothing {
            k.validate()?;
        }
        if let DataSource::Generator(g) = &self.data {
            g.validate()?;
        }
        if self.classify.is_some() && !self.data.is_corpus() {
            return Err(Error::Config("classify needs a corpus data source".into()));
        }
        Ok(())
    }

    /// The extraction settings with derived strategy seeds.
    pub fn lmft(&self) -> LmftConfig {
        let mut strategy = self.strategy.clone();
        match &mut strategy {
            SeedStrategy::MultiSeed { rng_seed, .. } | SeedStrategy::NeighborPlusExemplar { rng_seed, .. } => {
                *rng_seed = derive_seed(self.rng_seed, TAG_STRATEGY, *rng_seed);
            }
            _ => {}
        }
        LmftConfig::new(self.kernel.clone(), self.covariance.clone(), strategy).with_fit(FitOptions {
            mode: self.weighting_mode,
            form: self.objective_form,
            ..FitOptions::default()
        })
    }

    fn generator(&self, g: &GeneratorSpec) -> GeneratorSpec {
        GeneratorSpec {
            rng_seed: derive_seed(self.rng_seed, TAG_DATA, g.rng_seed),
            ..g.clone()
        }
    }

    /// The single series named by `data`; corpus sources are an error.
    pub fn load_series(&self) -> Result<TimeSeries> {
        match &self.data {
            DataSource::Csv(p) => read_csv(p),
            DataSource::Generator(g) => self.generator(g).series(),
            DataSource::Corpus(_) => Err(Error::Config("data is a corpus, not a single series".into())),
        }
    }

    fn check_paths(&self) -> Result<()> {
        if let DataSource::Csv(p) | DataSource::Corpus(p) = &self.data {
            if !p.is_file() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        let parent = Path::new(&self.output).parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                return Err(Error::Config(format!("output directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunMetrics {
    Extract {
        queries: usize,
        failed_cells: usize,
        feature_names: Vec<String>,
        feature_means: Vec<f64>,
    },
    Classify {
        items: usize,
        train: usize,
        test: usize,
        failed_cells: usize,
        labels: Vec<String>,
        positive: String,
        confusion: Vec<Vec<u64>>,
        #[serde(flatten)]
        metrics: Metrics,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub files: Vec<String>,
    pub metrics: RunMetrics,
}

/// Per-item diagnostics sidecar of a corpus run.
#[derive(Debug, Serialize)]
struct ItemDiagnostics<'a> {
    item: &'a str,
    label: &'a str,
    query_times: &'a [f64],
    cells: &'a [Vec<CellDiagnostics>],
}

/// [`extract`], but a run where every cell failed is a numerical error
/// rather than a feature table of placeholders.
pub fn extract_checked(series: &TimeSeries, q: &[f64], cfg: &LmftConfig) -> Result<FeatureSeries> {
    let fs = extract(series, q, cfg)?;
    let cells = fs.diagnostics.iter().map(Vec::len).sum::<usize>();
    if fs.failed_cells() == cells {
        let first = fs.diagnostics[0][0].error.clone().unwrap_or_default();
        return Err(Error::Numerical(format!("all {cells} local fits failed; first: {first}")));
    }
    Ok(fs)
}

fn smooth(fs: &FeatureSeries, kernel: Option<&KernelSpec>) -> Result<Option<TimeSeries>> {
    let Some(k) = kernel else { return Ok(None) };
    let m = nw_smooth(&fs.query_times, &fs.features, k, &fs.query_times)?;
    Ok(Some(TimeSeries::new(fs.query_times.clone(), m, fs.feature_names.clone())?))
}

/// Files produced by a run, held until everything has succeeded.
struct Pending(Vec<(String, Vec<u8>)>);

impl Pending {
    fn add(&mut self, path: String, bytes: Vec<u8>) {
        self.0.push((path, bytes));
    }

    fn json<T: Serialize>(&mut self, path: String, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }

    fn flush(self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for (path, bytes) in self.0 {
            File::create(&path)?.write_all(&bytes)?;
            names.push(path);
        }
        Ok(names)
    }
}

/// Runs an experiment. Nothing is written unless every step succeeds.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    cfg.check_paths()?;
    let lmft = cfg.lmft();
    let out = &cfg.output;
    let mut pending = Pending(Vec::new());

    let metrics = if cfg.data.is_corpus() {
        let items = match &cfg.data {
            DataSource::Corpus(p) => read_corpus_csv(p)?,
            DataSource::Generator(g) => cfg
                .generator(g)
                .corpus()?
                .into_iter()
                .enumerate()
                .map(|(i, (series, label))| LabeledSeries {
                    id: format!("item{i}"),
                    label: label.to_string(),
                    series,
                })
                .collect(),
            DataSource::Csv(_) => unreachable!("not a corpus"),
        };
        run_corpus(cfg, &lmft, &items, &mut pending)?
    } else {
        let series = cfg.load_series()?;
        let q = cfg.query.grid.times(&series)?;
        let fs = extract_checked(&series, &q, &lmft)?;
        let mut buf = Vec::new();
        write_features(&mut buf, &fs)?;
        pending.add(format!("{out}.features.csv"), buf);
        pending.json(
            format!("{out}.diagnostics.json"),
            &super::DiagnosticsFile::new(&fs, series.channel_names()),
        )?;
        if let Some(s) = smooth(&fs, cfg.smoothing.as_ref())? {
            let mut buf = Vec::new();
            write_series(&mut buf, &s)?;
            pending.add(format!("{out}.smoothed.csv"), buf);
        }
        let n = fs.features.nrows() as f64;
        RunMetrics::Extract {
            queries: fs.query_times.len(),
            failed_cells: fs.failed_cells(),
            feature_names: fs.feature_names.clone(),
            feature_means: fs.features.column_iter().map(|c| c.sum() / n).collect(),
        }
    };
    pending.json(format!("{out}.metrics.json"), &metrics)?;
    let files = pending.flush()?;
    Ok(RunSummary { files, metrics })
}

fn run_corpus(
    cfg: &ExperimentConfig,
    lmft: &LmftConfig,
    items: &[LabeledSeries],
    pending: &mut Pending,
) -> Result<RunMetrics> {
    if items.is_empty() {
        return Err(Error::InvalidInput("corpus is empty".into()));
    }
    let spec = cfg.classify.clone().unwrap_or_default();
    let mut feature_items = Vec::with_capacity(items.len());
    let mut diags = Vec::with_capacity(items.len());
    for it in items {
        let q = cfg.query.grid.times(&it.series)?;
        let fs = extract_checked(&it.series, &q, lmft)?;
        let series = match smooth(&fs, cfg.smoothing.as_ref())? {
            Some(s) => s,
            None => fs.to_series()?,
        };
        feature_items.push(LabeledSeries {
            id: it.id.clone(),
            label: it.label.clone(),
            series,
        });
        diags.push(fs);
    }
    let c = classify_corpus(&feature_items, &spec)?;

    let out = &cfg.output;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &feature_items)?;
    pending.add(format!("{out}.features.csv"), buf);
    let sidecar: Vec<ItemDiagnostics> = items
        .iter()
        .zip(&diags)
        .map(|(it, fs)| ItemDiagnostics {
            item: &it.id,
            label: &it.label,
            query_times: &fs.query_times,
            cells: &fs.diagnostics,
        })
        .collect();
    pending.json(format!("{out}.diagnostics.json"), &sidecar)?;
    let mut buf = Vec::new();
    write_neighbors(&mut buf, &c)?;
    pending.add(format!("{out}.neighbors.csv"), buf);

    Ok(RunMetrics::Classify {
        items: items.len(),
        train: c.train,
        test: c.neighbors.len(),
        failed_cells: diags.iter().map(|d| d.failed_cells()).sum(),
        labels: c.confusion.labels.clone(),
        positive: c.positive.clone(),
        confusion: c.confusion.counts.clone(),
        metrics: c.metrics,
    })
}

/// One test item's nearest training item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborRow {
    pub item: String,
    pub label: String,
    pub predicted: String,
    pub neighbor: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub train: usize,
    pub positive: String,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub neighbors: Vec<NeighborRow>,
}

/// Splits a corpus per [`ClassifySpec`] and runs 1NN under DTW. Labels are
/// indexed in order of first appearance.
pub fn classify_corpus(items: &[LabeledSeries], spec: &ClassifySpec) -> Result<Classification> {
    let mut labels: Vec<String> = Vec::new();
    for it in items {
        if !labels.contains(&it.label) {
            labels.push(it.label.clone());
        }
    }
    if labels.len() < 2 {
        return Err(Error::InvalidInput("corpus needs at least two labels".into()));
    }
    let positive = match &spec.positive {
        Some(p) => labels
            .iter()
            .position(|l| l == p)
            .ok_or_else(|| Error::Config(format!("positive label '{p}' is not in the corpus")))?,
        None => 1,
    };
    let label_of = |it: &LabeledSeries| labels.iter().position(|l| *l == it.label).expect("collected above");
    let totals: Vec<usize> = (0..labels.len())
        .map(|l| items.iter().filter(|it| label_of(it) == l).count())
        .collect();
    let mut seen = vec![0usize; labels.len()];
    let (mut train, mut train_idx, mut test, mut test_idx) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, it) in items.iter().enumerate() {
        let l = label_of(it);
        if seen[l] < spec.train_per_class.unwrap_or(totals[l] / 2) {
            train.push((it.series.values().clone(), l));
            train_idx.push(i);
        } else {
            test.push(it.series.values().clone());
            test_idx.push(i);
        }
        seen[l] += 1;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split leaves {} train and {} test items",
            train.len(),
            test.len()
        )));
    }
    let found = nn1_classify(&train, &test, spec.scale, spec.window)?;
    let truth: Vec<usize> = test_idx.iter().map(|&i| label_of(&items[i])).collect();
    let predicted: Vec<usize> = found.iter().map(|n| n.label).collect();
    let confusion = ConfusionMatrix::from_predictions(&truth, &predicted, labels.clone())?;
    let metrics = metrics(&confusion, positive);
    let neighbors = test_idx
        .iter()
        .zip(&found)
        .map(|(&ti, n)| NeighborRow {
            item: items[ti].id.clone(),
            label: items[ti].label.clone(),
            predicted: labels[n.label].clone(),
            neighbor: items[train_idx[n.index]].id.clone(),
            distance: n.distance,
        })
        .collect();
    Ok(Classification {
        train: train.len(),
        positive: labels[positive].clone(),
        confusion,
        metrics,
        neighbors,
    })
}

pub fn write_neighbors<W: Write>(w: W, c: &Classification) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(["item", "label", "predicted", "neighbor", "distance"]).map_err(io)?;
    for n in &c.neighbors {
        wtr.write_record([&n.item, &n.label, &n.predicted, &n.neighbor, &n.distance.to_string()])
            .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A ready-made config: contrived-variance recipe on the built-in
/// generator, one WN feature per query.
pub fn contrived_variance_config(output: &str) -> ExperimentConfig {
    use crate::covfn::Param::{Fixed, Free};
    ExperimentConfig {
        version: CONFIG_VERSION,
        data: DataSource::Generator(GeneratorSpec::new(GeneratorKind::VariableNoise, 0)),
        kernel: KernelSpec::tricube(120.0),
        covariance: CovExpr::sum(vec![
            CovExpr::prod(vec![CovExpr::cn(Fixed(64.0)), CovExpr::rbf(Fixed(2.0))]),
            CovExpr::wn(Free(1.0)),
        ]),
        strategy: SeedStrategy::default(),
        query: QuerySpec {
            grid: QueryGrid::Stride(5),
        },
        weighting_mode: WeightingMode::NoiseOnly,
        objective_form: ObjectiveForm::Simplified,
        smoothing: None,
        classify: None,
        output: output.to_string(),
        rng_seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covfn::Param::{Fixed, Free};

    fn small(output: String) -> ExperimentConfig {
        let mut g = GeneratorSpec::new(GeneratorKind::VariableNoise, 3);
        g.n = Some(60);
        ExperimentConfig {
            data: DataSource::Generator(g),
            kernel: KernelSpec::tricube(10.0),
            query: QuerySpec {
                grid: QueryGrid::Stride(6),
            },
            smoothing: Some(KernelSpec::tricube(15.0)),
            ..contrived_variance_config(&output)
        }
    }

    #[test]
    fn json_round_trip_is_identical() {
        let mut cfg = small("out/x".into());
        cfg.strategy = SeedStrategy::MultiSeed { count: 4, lo: 1e-3, hi: 1e3, rng_seed: 2 };
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn schema_rejections() {
        let good = small("x".into()).to_json();
        let unknown_key = good.replacen("\"version\": 1,", "\"version\": 1, \"extra\": 0,", 1);
        assert!(matches!(ExperimentConfig::from_json(&unknown_key), Err(Error::Config(_))));
        let bad_family = good.replacen("\"tricube\"", "\"cosine\"", 1);
        assert!(matches!(ExperimentConfig::from_json(&bad_family), Err(Error::Config(_))));
        let v2 = good.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(ExperimentConfig::from_json(&v2).is_err());
        let mut no_free = small("x".into());
        no_free.covariance = CovExpr::wn(Fixed(1.0));
        assert!(no_free.validate().is_err());
        let mut cls = small("x".into());
        cls.classify = Some(ClassifySpec::default());
        assert!(cls.validate().is_err());
    }

    #[test]
    fn seeds_derive_from_the_root() {
        let mut a = small("x".into());
        a.strategy = SeedStrategy::MultiSeed { count: 2, lo: 1.0, hi: 2.0, rng_seed: 0 };
        let mut b = a.clone();
        b.rng_seed = 1;
        assert_ne!(a.lmft().strategy, b.lmft().strategy);
        assert_eq!(a.lmft().strategy, a.clone().lmft().strategy);
        assert_ne!(derive_seed(0, TAG_DATA, 0), derive_seed(0, TAG_STRATEGY, 0));
    }

    #[test]
    fn run_writes_artifacts_deterministically() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let cfg = small(dir.join("a").to_string_lossy().into_owned());
        let s1 = run(&cfg).unwrap();
        assert_eq!(s1.files.len(), 4);
        let first: Vec<Vec<u8>> = s1.files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let s2 = run(&cfg).unwrap();
        let second: Vec<Vec<u8>> = s2.files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        assert_eq!(first, second);
        let header = String::from_utf8(first[0].clone()).unwrap();
        assert!(header.starts_with("time,y.wn\n"), "{header}");
        let feats = read_csv(&s1.files[0]).unwrap();
        assert_eq!(feats.n_channels(), 1);
        assert_eq!(feats.len(), 10);
    }

    #[test]
    fn missing_paths_write_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let mut cfg = small(dir.join("b").to_string_lossy().into_owned());
        cfg.data = DataSource::Csv(dir.join("absent.csv"));
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
        let cfg = small(dir.join("nope/b").to_string_lossy().into_owned());
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
        assert_eq!(std::fs::read_dir(dir).unwrap().count(), 0);
    }

    #[test]
    fn corpus_run_classifies() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let mut g = GeneratorSpec::new(GeneratorKind::LabeledSegments, 1);
        g.n = Some(40);
        g.per_class = Some(4);
        let cfg = ExperimentConfig {
            data: DataSource::Generator(g),
            kernel: KernelSpec::tricube(15.0),
            covariance: CovExpr::sum(vec![
                CovExpr::prod(vec![CovExpr::cn(Fixed(50.0)), CovExpr::ss(Fixed(50.0), Fixed(1.0))]),
                CovExpr::wn(Free(1.0)),
            ]),
            query: QuerySpec {
                grid: QueryGrid::Stride(10),
            },
            smoothing: None,
            classify: Some(ClassifySpec::default()),
            ..small(dir.join("c").to_string_lossy().into_owned())
        };
        let s = run(&cfg).unwrap();
        assert_eq!(s.files.len(), 4);
        let RunMetrics::Classify { train, test, confusion, .. } = &s.metrics else {
            panic!("{:?}", s.metrics)
        };
        assert_eq!((*train, *test), (4, 4));
        assert_eq!(confusion.iter().flatten().sum::<u64>(), 4);
        let nb = std::fs::read_to_string(&s.files[2]).unwrap();
        assert_eq!(nb.lines().count(), 5);
    }
}
