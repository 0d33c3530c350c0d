//! Run configuration: a `key = value` text file plus command-line
//! overrides, fully validated before any computation starts.
//!
//! Every key has a default except `data.path`, `split.valid_start`, and
//! `split.test_start`. Unknown keys are rejected so typos fail fast.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::dtw::{DtwOptions, LocalMetric};
use crate::error::{Error, Result};
use crate::predictor::{LossMode, TrainConfig};
use crate::sipr::{ClusterConfig, DistanceSpec, WeightMode};
use crate::swt::{Basis, Padding};

/// Everything a pipeline run needs, assembled from file and overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_path: PathBuf,
    /// Feature used for labels, clustering, and segmentation.
    pub price_feature: String,
    /// Symbol whose series the pattern library is fitted on. Defaults to
    /// the first symbol of the panel.
    pub index_symbol: Option<String>,
    pub valid_start: NaiveDate,
    pub test_start: NaiveDate,
    /// Toggles pattern-guided patch positions; off means pure stride.
    pub sipr_enabled: bool,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
    pub basis: Basis,
    /// One filter pair per feature channel instead of a shared pair.
    pub per_channel: bool,
    pub top_k: usize,
    pub periods_per_year: u32,
    /// Symbol whose realized returns serve as the benchmark; it is removed
    /// from the traded universe.
    pub benchmark_symbol: Option<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Parses `--key value` / `--key=value` argument pairs into overrides.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Argument(format!(
                "override '{arg}' must look like --key value or --key=value"
            )));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let value = it.next().ok_or_else(|| {
                Error::Argument(format!("override --{key} is missing its value"))
            })?;
            out.push((key.to_string(), value.clone()));
        }
    }
    Ok(out)
}

/// Key-value store with consumption tracking, so leftovers can be reported.
struct KeyMap {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KeyMap {
    fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", idx + 1)));
            }
            entries.insert(key, value);
        }
        Ok(entries)
    }

    fn new(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = match path {
            Some(p) => Self::parse_file(p)?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            entries.insert(k.clone(), v.clone());
        }
        Ok(KeyMap { entries, used: BTreeSet::new() })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{v}'"))
            }),
        }
    }

    fn get_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                other => {
                    Err(Error::Config(format!("config key '{key}': '{other}' is not a bool")))
                }
            },
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.raw(key)
            .ok_or_else(|| Error::Config(format!("missing required config key '{key}'")))
    }

    fn date(&mut self, key: &str) -> Result<NaiveDate> {
        let v = self.require(key)?;
        v.parse().map_err(|_| {
            Error::Config(format!("config key '{key}': '{v}' is not an ISO date"))
        })
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> =
            self.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
            Err(Error::Config(format!("unknown config keys: {list}")))
        }
    }
}

impl RunConfig {
    /// Loads, applies overrides, and validates every field.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut map = KeyMap::new(path, overrides)?;

        let data_path = PathBuf::from(map.require("data.path")?);
        let price_feature = map.raw("data.price_feature").unwrap_or_else(|| "close".into());
        let index_symbol = map.raw("data.index_symbol");
        let valid_start = map.date("split.valid_start")?;
        let test_start = map.date("split.test_start")?;
        let seed: u64 = map.get("seed", 7)?;
        let out_dir = PathBuf::from(map.raw("out.dir").unwrap_or_else(|| "out".into()));

        let metric = match map.raw("dtw.metric").as_deref() {
            None => LocalMetric::Squared,
            Some("squared") => LocalMetric::Squared,
            Some("absolute") => LocalMetric::Absolute,
            Some(other) => {
                return Err(Error::Config(format!(
                    "config key 'dtw.metric': '{other}' is not squared|absolute"
                )))
            }
        };
        let band_radius = match map.raw("dtw.band_radius").as_deref() {
            None | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| {
                Error::Config(format!("config key 'dtw.band_radius': cannot parse '{v}'"))
            })?),
        };
        let weight_mode = match map.raw("dtw.weight_mode").as_deref() {
            None => WeightMode::Volatility,
            Some("volatility") => WeightMode::Volatility,
            Some("none") => WeightMode::None,
            Some(other) => {
                return Err(Error::Config(format!(
                    "config key 'dtw.weight_mode': '{other}' is not volatility|none"
                )))
            }
        };
        let spec_default = DistanceSpec::default();
        let distance = DistanceSpec {
            dtw: DtwOptions { metric, band_radius },
            weight_mode,
            vol_window: map.get("dtw.vol_window", spec_default.vol_window)?,
            symmetric: map.get_bool("dtw.symmetric_weights", spec_default.symmetric)?,
        };

        let cl = ClusterConfig::default();
        let cluster = ClusterConfig {
            k: map.get("sipr.k", cl.k)?,
            l_min: map.get("sipr.l_min", cl.l_min)?,
            l_max: map.get("sipr.l_max", cl.l_max)?,
            stride: map.get("sipr.stride", cl.stride)?,
            max_iter: map.get("sipr.max_iter", cl.max_iter)?,
            tol: map.get("sipr.tol", cl.tol)?,
            dba_iterations: map.get("sipr.dba_iterations", cl.dba_iterations)?,
            seed,
            distance,
        };
        let sipr_enabled = map.get_bool("sipr.enabled", true)?;

        let basis: Basis = match map.raw("swt.basis") {
            None => Basis::Db4,
            Some(v) => v.parse()?,
        };
        let padding = match map.raw("swt.padding").as_deref() {
            None | Some("zero") => Padding::Zero,
            Some("periodic") => Padding::Periodic,
            Some(other) => {
                return Err(Error::Config(format!(
                    "config key 'swt.padding': '{other}' is not zero|periodic"
                )))
            }
        };
        let loss_mode: LossMode = match map.raw("train.loss_mode") {
            None => LossMode::Score,
            Some(v) => v.parse()?,
        };

        let tr = TrainConfig::default();
        let mut patch = tr.patch;
        patch.patch_len = map.get("patch.len", patch.patch_len)?;
        patch.stride = map.get("patch.stride", patch.stride)?;
        patch.drop_crossing = map.get_bool("patch.drop_crossing", patch.drop_crossing)?;
        let train = TrainConfig {
            learning_rate: map.get("train.learning_rate", tr.learning_rate)?,
            pretrain_epochs: map.get("train.pretrain_epochs", tr.pretrain_epochs)?,
            finetune_epochs: map.get("train.finetune_epochs", tr.finetune_epochs)?,
            batch_size: map.get("train.batch_size", tr.batch_size)?,
            seed,
            wavelet_trainable: map.get_bool("swt.trainable", true)?,
            filters_frozen: map.get_bool("swt.frozen", false)?,
            loss_mode,
            window_len: map.get("train.window_len", tr.window_len)?,
            window_stride: map.get("train.window_stride", tr.window_stride)?,
            dim: map.get("predictor.dim", tr.dim)?,
            levels: map.get("swt.levels", tr.levels)?,
            padding,
            patch,
            ortho_penalty: map.get("swt.ortho_penalty", tr.ortho_penalty)?,
        };
        let per_channel = map.get_bool("swt.per_channel", false)?;

        let top_k: usize = map.get("backtest.top_k", 2)?;
        let periods_per_year: u32 =
            map.get("backtest.periods_per_year", crate::backtest::DEFAULT_PERIODS_PER_YEAR)?;
        let benchmark_symbol = map.raw("backtest.benchmark_symbol");

        map.finish()?;

        let config = RunConfig {
            data_path,
            price_feature,
            index_symbol,
            valid_start,
            test_start,
            sipr_enabled,
            cluster,
            train,
            basis,
            per_channel,
            top_k,
            periods_per_year,
            benchmark_symbol,
            seed,
            out_dir,
        };
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks on top of each owning module's own validation.
    pub fn validate(&self) -> Result<()> {
        if self.valid_start >= self.test_start {
            return Err(Error::Config(format!(
                "split.valid_start {} must precede split.test_start {}",
                self.valid_start, self.test_start
            )));
        }
        self.cluster.validate()?;
        self.train.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("backtest.top_k must be at least 1".into()));
        }
        if self.periods_per_year == 0 {
            return Err(Error::Config("backtest.periods_per_year must be positive".into()));
        }
        if self.price_feature.is_empty() {
            return Err(Error::Config("data.price_feature must not be empty".into()));
        }
        Ok(())
    }

    /// Applies the ablation shortcuts: `--no-sipr` disables pattern-guided
    /// patching, `--fixed-wavelet <basis>` pins the basis and freezes taps.
    pub fn apply_ablations(&mut self, no_sipr: bool, fixed_wavelet: Option<Basis>) {
        if no_sipr {
            self.sipr_enabled = false;
        }
        if let Some(basis) = fixed_wavelet {
            self.basis = basis;
            self.train.wavelet_trainable = false;
            self.train.filters_frozen = true;
        }
    }
}
