//! End-to-end steps behind the command-line subcommands.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::bootstrap::{evaluate_original, run_experiment, BootstrapError, ExperimentResult, RiskFree};
use crate::config::{ConfigError, ExperimentConfig, PanelSource, RiskFreeConfig};
use crate::factors::{FactorError, FactorPanel};
use crate::panel::{
    apply_filters, build_characteristics, load_raw, read_deflator, read_market_index, read_panel_csv, read_risk_free,
    value_weighted_index, write_panel_csv, Deflator, FilterLog, PanelError, RawPanel,
};
use crate::report::{write_bundle, BundleOptions, ReportError};
use crate::synthgen::{generate_panel, Manifest, SynthError};

pub const PANEL_FILE: &str = "panel.csv";
pub const FILTER_LOG_FILE: &str = "filter_log.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Panel {
        path: PathBuf,
        #[source]
        source: PanelError,
    },

    #[error(transparent)]
    PanelBuild(#[from] PanelError),

    #[error("{path}: {source}")]
    Factors {
        path: PathBuf,
        #[source]
        source: FactorError,
    },

    #[error(transparent)]
    Synth(#[from] SynthError),

    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),

    #[error(transparent)]
    Report(#[from] ReportError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot encode manifest: {0}")]
    Json(#[from] serde_json::Error),
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io { path: parent.to_path_buf(), source })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

/// Reads a config file and resolves its relative paths against the file's directory.
pub fn read_config(path: &Path) -> Result<ExperimentConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub raw: RawPanel,
    pub filter_log: Option<FilterLog>,
    pub manifest: Option<Manifest>,
}

/// Produces the filtered (unstandardized) panel from the configured source.
pub fn load_panel(cfg: &ExperimentConfig) -> Result<LoadedPanel, PipelineError> {
    match &cfg.panel_source {
        PanelSource::PrebuiltPanel { path } => {
            let raw = read_panel_csv(open(path)?).map_err(|source| PipelineError::Panel { path: path.clone(), source })?;
            Ok(LoadedPanel { raw, filter_log: None, manifest: None })
        }
        PanelSource::Synthetic { dgp } => {
            let data = generate_panel(dgp)?;
            Ok(LoadedPanel { raw: data.raw_panel, filter_log: None, manifest: Some(data.manifest) })
        }
        PanelSource::RawHistory { path, schema, deflator, market_index } => {
            let history =
                load_raw(open(path)?, schema).map_err(|source| PipelineError::Panel { path: path.clone(), source })?;
            let deflator = match deflator {
                Some(p) => read_deflator(open(p)?).map_err(|source| PipelineError::Panel { path: p.clone(), source })?,
                None => {
                    // nominal sizes: a constant index over every month that can be queried
                    let mut months: BTreeSet<_> = history.iter().flat_map(|r| [r.month, r.month.offset(-1)]).collect();
                    months.insert(cfg.filters.deflator_base);
                    Deflator::flat(months)
                }
            };
            let index = match market_index {
                Some(p) => {
                    read_market_index(open(p)?).map_err(|source| PipelineError::Panel { path: p.clone(), source })?
                }
                None => value_weighted_index(&history),
            };
            let candidates =
                build_characteristics(&history, &index, cfg.filters.history_months, cfg.strict_paper_inclusion)?;
            let filters = cfg.filters.to_filter_config(deflator, cfg.strict_paper_inclusion);
            let (raw, log) = apply_filters(&candidates, &filters)?;
            Ok(LoadedPanel { raw, filter_log: Some(log), manifest: None })
        }
    }
}

pub fn load_risk_free(cfg: &ExperimentConfig) -> Result<RiskFree, PipelineError> {
    match &cfg.risk_free {
        RiskFreeConfig::Constant(r) => Ok(RiskFree::Constant(*r)),
        RiskFreeConfig::Path(p) => read_risk_free(open(p)?)
            .map(RiskFree::Series)
            .map_err(|source| PipelineError::Panel { path: p.clone(), source }),
    }
}

pub fn load_factors(cfg: &ExperimentConfig) -> Result<Option<FactorPanel>, PipelineError> {
    cfg.factor_panel
        .as_ref()
        .map(|f| {
            FactorPanel::read_csv(open(&f.path)?, f.percent)
                .map_err(|source| PipelineError::Factors { path: f.path.clone(), source })
        })
        .transpose()
}

/// Files written by [`build`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub panel: PathBuf,
    pub filter_log: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

/// Writes the prebuilt panel plus its provenance (filter log or generator manifest).
pub fn build(cfg: &ExperimentConfig) -> Result<BuildOutput, PipelineError> {
    let loaded = load_panel(cfg)?;
    let dir = &cfg.output_dir;
    let panel = dir.join(PANEL_FILE);
    write_panel_csv(&loaded.raw, create(&panel)?).map_err(|source| PipelineError::Io { path: panel.clone(), source })?;
    let filter_log = loaded
        .filter_log
        .map(|log| {
            let p = dir.join(FILTER_LOG_FILE);
            log.write_csv(create(&p)?).map_err(|source| PipelineError::Io { path: p.clone(), source })?;
            Ok::<_, PipelineError>(p)
        })
        .transpose()?;
    let manifest = loaded
        .manifest
        .map(|m| {
            let p = dir.join(MANIFEST_FILE);
            serde_json::to_writer_pretty(create(&p)?, &m)?;
            Ok::<_, PipelineError>(p)
        })
        .transpose()?;
    Ok(BuildOutput { panel, filter_log, manifest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub result: ExperimentResult,
    pub original: ExperimentResult,
    pub written: Vec<PathBuf>,
    /// Failed (replicate, entry) pairs.
    pub failures: usize,
}

/// Runs the bootstrap experiment and writes the result bundle.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, PipelineError> {
    let loaded = load_panel(cfg)?;
    let spec = cfg.experiment_spec(load_risk_free(cfg)?, load_factors(cfg)?)?;
    let result = run_experiment(&loaded.raw, &spec)?;
    let original = evaluate_original(&loaded.raw, &spec)?;
    let dir = &cfg.output_dir;
    let mut written = write_bundle(
        dir,
        &result,
        &original,
        BundleOptions { dump_replicates: cfg.dump_replicates, keep_returns: cfg.keep_returns },
    )?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_canonical_toml()?)
        .map_err(|source| PipelineError::Io { path: config_path.clone(), source })?;
    written.push(config_path);
    let failures = result.failures().len();
    Ok(RunOutput { result, original, written, failures })
}
