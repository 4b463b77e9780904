//! Benchmark-style datasets: CSV ingestion, registry metadata, chronological
//! splits, train-statistics standardization, sliding windows and few-shot
//! budget slices.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::prior::{render_seasonal, render_trend, ExponentialForm, TrendKind};
use crate::scalers::{FittedScaler, ScalerError, ScalerKind};

/// Longest horizon any registered dataset may ask for.
pub const MAX_HORIZON: usize = 720;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("empty file: no header row")]
    Empty,
    #[error("row {row}: {detail}")]
    Row { row: usize, detail: String },
    #[error("invalid dataset metadata: {0}")]
    Meta(String),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("insufficient data: need {needed} points, segment has {available}")]
    InsufficientData { needed: usize, available: usize },
}

/// How few-shot budgets grow with the period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetKind {
    /// `P · 2^k` for long series.
    #[default]
    Geometric,
    /// `P · k` for short series.
    Arithmetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub frequency: String,
    pub period: usize,
    pub horizons: Vec<usize>,
    pub ratios: [f64; 3],
    /// Expected channel count; 0 accepts whatever the file holds.
    #[serde(default)]
    pub channels: usize,
    #[serde(default)]
    pub budget: BudgetKind,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.name.is_empty() {
            return Err(DatasetError::Meta("empty dataset name".into()));
        }
        if self.period == 0 {
            return Err(DatasetError::Meta(format!("{}: period must be at least 1", self.name)));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h == 0 || h > MAX_HORIZON) {
            return Err(DatasetError::Meta(format!("{}: horizons must lie in 1..={MAX_HORIZON}", self.name)));
        }
        if self.ratios.iter().any(|r| !(*r >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Meta(format!("{}: ratios {:?} must be nonnegative and sum to 1", self.name, self.ratios)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetMeta>,
}

impl Registry {
    /// Parses a TOML registry; relative dataset paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, DatasetError> {
        let mut reg: Registry = toml::from_str(text).map_err(|e| DatasetError::Registry(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for m in &mut reg.datasets {
            m.validate()?;
            if !seen.insert(m.name.clone()) {
                return Err(DatasetError::Registry(format!("duplicate dataset '{}'", m.name)));
            }
            if let Some(p) = &m.path {
                if p.is_relative() {
                    m.path = Some(base_dir.join(p));
                }
            }
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }

    pub fn get(&self, name: &str) -> Result<&DatasetMeta, DatasetError> {
        self.datasets
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| DatasetError::Registry(format!("unknown dataset '{name}'")))
    }

    /// Loads the CSV behind `meta`.
    pub fn open(&self, meta: &DatasetMeta) -> Result<SeriesStore, DatasetError> {
        let path = meta.path.as_ref().ok_or_else(|| DatasetError::Registry(format!("dataset '{}' has no path", meta.name)))?;
        load_csv(path, meta)
    }
}

/// Equal-length channels plus opaque timestamps. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStore {
    pub name: String,
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
}

impl SeriesStore {
    pub fn new(name: &str, timestamps: Vec<String>, channel_names: Vec<String>, channels: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        if channels.len() != channel_names.len() {
            return Err(DatasetError::Meta(format!("{} channel names for {} channels", channel_names.len(), channels.len())));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.len() != timestamps.len() {
                return Err(DatasetError::Meta(format!("channel {i} has {} values for {} timestamps", c.len(), timestamps.len())));
            }
            if let Some(r) = c.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::Row { row: r + 1, detail: format!("non-finite value in channel {i}") });
            }
        }
        Ok(Self { name: name.to_string(), timestamps, channel_names, channels })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Reads a header row `date, ch1, ch2, ...` followed by data rows.
    /// Row numbers in errors count the header as row 0.
    pub fn read_csv<R: Read>(name: &str, input: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(DatasetError::Empty),
            Some(r) => r.map_err(|e| DatasetError::Row { row: 0, detail: e.to_string() })?,
        };
        if header.len() < 2 {
            return Err(DatasetError::Row { row: 0, detail: "header needs a date column and at least one channel".into() });
        }
        let channel_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut channels = vec![Vec::new(); channel_names.len()];
        let mut timestamps = Vec::new();
        for (i, rec) in records.enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| DatasetError::Row { row, detail: e.to_string() })?;
            if rec.len() != header.len() {
                return Err(DatasetError::Row { row, detail: format!("expected {} fields, found {}", header.len(), rec.len()) });
            }
            timestamps.push(rec[0].to_string());
            for (c, cell) in rec.iter().skip(1).enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DatasetError::Row { row, detail: format!("column '{}': non-numeric value '{cell}'", channel_names[c]) })?;
                channels[c].push(v);
            }
        }
        if timestamps.is_empty() {
            return Err(DatasetError::Row { row: 1, detail: "no data rows".into() });
        }
        Self::new(name, timestamps, channel_names, channels)
    }

    /// Writes the store back out; values use the shortest representation
    /// that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (t, ts) in self.timestamps.iter().enumerate() {
            let mut row = vec![ts.clone()];
            row.extend(self.channels.iter().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_csv(path: &Path, meta: &DatasetMeta) -> Result<SeriesStore, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let store = SeriesStore::read_csv(&meta.name, std::io::BufReader::new(file))?;
    if meta.channels != 0 && meta.channels != store.n_channels() {
        return Err(DatasetError::Meta(format!("{}: registry expects {} channels, file has {}", meta.name, meta.channels, store.n_channels())));
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split with floor-rounded cumulative boundaries. A small
/// tolerance keeps ratios like 0.7 + 0.1 from flooring one point short.
pub fn split(len: usize, ratios: [f64; 3]) -> Result<Segments, DatasetError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Split(format!("ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let cut = |frac: f64| ((len as f64 * frac + 1e-9).floor() as usize).min(len);
    let b1 = cut(ratios[0]);
    let b2 = cut(ratios[0] + ratios[1]).max(b1);
    let seg = Segments { train: 0..b1, val: b1..b2, test: b2..len };
    for (name, r) in [("train", &seg.train), ("validation", &seg.val), ("test", &seg.test)] {
        if r.is_empty() {
            return Err(DatasetError::Split(format!("{name} segment is empty for length {len} and ratios {ratios:?}")));
        }
    }
    Ok(seg)
}

/// A store standardized channel by channel with statistics of one segment.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub store: SeriesStore,
    pub scalers: Vec<FittedScaler>,
    pub fitted_on: Range<usize>,
}

impl Standardized {
    pub fn inverse_channel(&self, channel: usize, values: &[f64]) -> Vec<f64> {
        self.scalers[channel].inverse(values)
    }
}

/// Fits a standard scaler per channel on `fit_range` only and applies it to
/// the whole channel.
pub fn standardize(store: &SeriesStore, fit_range: Range<usize>) -> Result<Standardized, DatasetError> {
    if fit_range.end > store.len() {
        return Err(DatasetError::Split(format!("fit range {fit_range:?} exceeds length {}", store.len())));
    }
    let mut scalers = Vec::with_capacity(store.n_channels());
    let mut channels = Vec::with_capacity(store.n_channels());
    for (i, c) in store.channels.iter().enumerate() {
        let s = FittedScaler::fit(ScalerKind::Standard, &c[fit_range.clone()]).map_err(|e| match e {
            ScalerError::TooShort(n) => DatasetError::InsufficientData { needed: 2, available: n },
            other => DatasetError::Meta(format!("channel {i}: {other}")),
        })?;
        channels.push(s.transform(c));
        scalers.push(s);
    }
    let store = SeriesStore { channels, ..store.clone() };
    Ok(Standardized { store, scalers, fitted_on: fit_range })
}

/// Start offsets of every window inside `segment`, stride `stride`.
pub fn window_starts(segment: Range<usize>, look_back: usize, horizon: usize, stride: usize) -> Result<Vec<usize>, DatasetError> {
    let need = look_back + horizon;
    if stride == 0 {
        return Err(DatasetError::Split("window stride must be at least 1".into()));
    }
    if segment.len() < need || need == 0 {
        return Err(DatasetError::InsufficientData { needed: need.max(1), available: segment.len() });
    }
    Ok((segment.start..=segment.end - need).step_by(stride).collect())
}

/// `(input, target)` pairs of one channel; every complete window is
/// yielded, including the last one.
pub fn windows<'a>(
    series: &'a [f64],
    segment: Range<usize>,
    look_back: usize,
    horizon: usize,
    stride: usize,
) -> Result<impl Iterator<Item = (&'a [f64], &'a [f64])> + 'a, DatasetError> {
    if segment.end > series.len() {
        return Err(DatasetError::Split(format!("segment {segment:?} exceeds series length {}", series.len())));
    }
    let starts = window_starts(segment, look_back, horizon, stride)?;
    Ok(starts.into_iter().map(move |s| (&series[s..s + look_back], &series[s + look_back..s + look_back + horizon])))
}

/// Closed-form window count at a given stride.
pub fn window_count(len: usize, look_back: usize, horizon: usize, stride: usize) -> usize {
    if len < look_back + horizon || stride == 0 {
        0
    } else {
        (len - look_back - horizon) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub period: usize,
    pub budgets: Vec<usize>,
}

pub const BUDGET_STEPS: u32 = 8;

pub fn budgets_for(period: usize, kind: BudgetKind) -> Result<BudgetPlan, DatasetError> {
    if period == 0 {
        return Err(DatasetError::Meta("period must be at least 1".into()));
    }
    let budgets = match kind {
        BudgetKind::Geometric => (0..BUDGET_STEPS).map(|k| period << k).collect(),
        BudgetKind::Arithmetic => (1..=BUDGET_STEPS as usize).map(|k| period * k).collect(),
    };
    Ok(BudgetPlan { period, budgets })
}

/// The last `min(budget, len)` indices of the train range.
pub fn fewshot_slice(train: Range<usize>, budget: usize) -> Range<usize> {
    let keep = budget.min(train.len());
    train.end - keep..train.end
}

/// Which part of a protocol run touched the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessPhase {
    Fit,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub phase: AccessPhase,
    pub channel: usize,
    pub range: Range<usize>,
}

/// Records every index range a protocol reads so tests can prove that fits
/// never see validation or test points.
#[derive(Debug, Default)]
pub struct AccessTracker {
    log: Mutex<Vec<Access>>,
}

impl AccessTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, phase: AccessPhase, channel: usize, range: Range<usize>) {
        self.log.lock().expect("tracker lock").push(Access { phase, channel, range });
    }

    /// All accesses in a canonical order.
    pub fn accesses(&self) -> Vec<Access> {
        let mut v = self.log.lock().expect("tracker lock").clone();
        v.sort_by_key(|a| (a.phase, a.channel, a.range.start, a.range.end));
        v
    }

    /// Indices read in `phase` on any channel.
    pub fn indices(&self, phase: AccessPhase) -> BTreeSet<usize> {
        self.log.lock().expect("tracker lock").iter().filter(|a| a.phase == phase).flat_map(|a| a.range.clone()).collect()
    }
}

/// Parameters of the bundled hourly stand-in corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub name: String,
    pub length: usize,
    pub channels: usize,
    pub period: usize,
    /// Slow secondary cycle, e.g. one week of hours.
    pub long_period: usize,
    /// AR(1) coefficient and innovation scale of the noise.
    pub ar: f64,
    pub noise: f64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self { name: "ettlike".into(), length: 6000, channels: 7, period: 24, long_period: 168, ar: 0.8, noise: 0.15 }
    }
}

impl SyntheticCorpusConfig {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            path: None,
            frequency: "h".into(),
            period: self.period,
            horizons: vec![96, 192, 336, 720],
            ratios: [0.6, 0.2, 0.2],
            channels: self.channels,
            budget: BudgetKind::Geometric,
        }
    }
}

/// A multichannel series with daily and weekly Fourier seasonality, a
/// gentle trend and AR(1) noise. Channel `c` uses stream `c` of the seed.
pub fn synthetic_corpus(cfg: &SyntheticCorpusConfig, seed: u64) -> Result<SeriesStore, DatasetError> {
    if cfg.channels == 0 || cfg.length < 2 || cfg.period < 2 || cfg.long_period < 2 {
        return Err(DatasetError::Meta("synthetic corpus needs channels, length and periods of at least 2".into()));
    }
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| DatasetError::Meta(e.to_string()))?;
    let mut channels = Vec::with_capacity(cfg.channels);
    for c in 0..cfg.channels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let coeffs = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Complex64> {
            (0..n).map(|_| Complex64::new(rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0))).collect()
        };
        let daily_c = coeffs(3.min(cfg.period / 2), &mut rng);
        let weekly_c = coeffs(2.min(cfg.long_period / 2), &mut rng);
        // Rescale so the daily cycle has unit-order amplitude.
        let daily = render_seasonal(&daily_c, cfg.period, cfg.length).map_err(|e| DatasetError::Meta(e.to_string()))?;
        let weekly = render_seasonal(&weekly_c, cfg.long_period, cfg.length).map_err(|e| DatasetError::Meta(e.to_string()))?;
        let slope = rng.gen_range(-1.0..=1.0) / cfg.length as f64;
        let trend = render_trend(TrendKind::Linear, slope, cfg.length, ExponentialForm::ExpMinusOne);
        let level = rng.gen_range(-5.0..=15.0);
        let daily_gain = cfg.period as f64 / 2.0;
        let weekly_gain = cfg.long_period as f64 / 8.0;
        let mut ar = 0.0;
        let values = (0..cfg.length)
            .map(|t| {
                ar = cfg.ar * ar + noise.sample(&mut rng);
                level + daily_gain * daily[t] + weekly_gain * weekly[t] + trend[t] + ar
            })
            .collect();
        channels.push(values);
    }
    let names = (0..cfg.channels).map(|c| if c + 1 == cfg.channels { "OT".to_string() } else { format!("ch{c}") }).collect();
    let timestamps = (0..cfg.length).map(|t| format!("h{t}")).collect();
    SeriesStore::new(&cfg.name, timestamps, names, channels)
}
