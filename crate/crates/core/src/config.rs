//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{ExperimentSpec, RiskFree};
use crate::month::Month;
use crate::panel::{Characteristic, CharacteristicSpec, Deflator, FilterConfig, PanelOptions, RawSchema, VTreatment};
use crate::parallel::Execution;
use crate::policy::{Protocol, RuleSpec, Tolerances};
use crate::synthgen::DgpConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PanelSource {
    /// Stock-month history; characteristics are built and filters applied.
    RawHistory {
        path: PathBuf,
        #[serde(default)]
        schema: RawSchema,
        /// `month,index` price index; nominal sizes are used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deflator: Option<PathBuf>,
        /// `month,ret` market returns for the market-model regressions;
        /// derived from the history when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        market_index: Option<PathBuf>,
    },
    /// A filtered panel in the prebuilt-panel CSV format.
    PrebuiltPanel { path: PathBuf },
    Synthetic {
        #[serde(default)]
        dgp: DgpConfig,
    },
}

/// Serializable counterpart of [`FilterConfig`] (the deflator is a file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub min_real_size: f64,
    pub deflator_base: Month,
    pub small_pct_before: f64,
    pub small_pct_after: f64,
    pub breakpoint_month: Month,
    pub delist_sub_nyse_amex: f64,
    pub delist_sub_nasdaq: f64,
    pub history_months: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            min_real_size: d.min_real_size,
            deflator_base: d.deflator_base,
            small_pct_before: d.small_pct_before,
            small_pct_after: d.small_pct_after,
            breakpoint_month: d.breakpoint_month,
            delist_sub_nyse_amex: d.delist_sub_nyse_amex,
            delist_sub_nasdaq: d.delist_sub_nasdaq,
            history_months: d.history_months,
        }
    }
}

impl FilterSettings {
    pub fn to_filter_config(&self, deflator: Deflator, strict_paper_inclusion: bool) -> FilterConfig {
        FilterConfig {
            min_real_size: self.min_real_size,
            deflator,
            deflator_base: self.deflator_base,
            small_pct_before: self.small_pct_before,
            small_pct_after: self.small_pct_after,
            breakpoint_month: self.breakpoint_month,
            delist_sub_nyse_amex: self.delist_sub_nyse_amex,
            delist_sub_nasdaq: self.delist_sub_nasdaq,
            history_months: self.history_months,
            strict_paper_inclusion,
        }
    }
}

fn default_window() -> usize {
    180
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    /// Generated from the other fields when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub characteristics: Vec<Characteristic>,
    #[serde(default)]
    pub v_treatment: VTreatment,
    pub gamma_star: f64,
    pub protocol: Protocol,
    #[serde(default = "default_window")]
    pub window_months: usize,
}

/// Cartesian product of characteristic sets, curvatures and protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleGrid {
    pub characteristic_sets: Vec<Vec<Characteristic>>,
    #[serde(default)]
    pub v_treatment: VTreatment,
    pub gamma_stars: Vec<f64>,
    pub protocols: Vec<Protocol>,
    #[serde(default = "default_window")]
    pub window_months: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFreeConfig {
    /// Monthly rate as a fraction.
    Constant(f64),
    /// `month,rf` CSV with fractions.
    Path(PathBuf),
}

impl Default for RiskFreeConfig {
    fn default() -> Self {
        RiskFreeConfig::Constant(0.0037)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorPanelConfig {
    pub path: PathBuf,
    /// Values in the file are percentages.
    #[serde(default = "yes")]
    pub percent: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    /// Bootstrap replicates.
    pub replicates: usize,
    /// Investor risk aversions for certainty equivalents.
    pub gammas: Vec<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_in_sample")]
    pub in_sample_months: usize,
    #[serde(default = "yes")]
    pub strict_paper_inclusion: bool,
    /// Write every replicate's metrics to `replicates.csv`.
    #[serde(default)]
    pub dump_replicates: bool,
    /// Keep pooled out-of-sample returns so `report` can export densities.
    #[serde(default)]
    pub keep_returns: bool,
    #[serde(default = "default_bin_width")]
    pub density_bin_width: f64,
    #[serde(default)]
    pub risk_free: RiskFreeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_panel: Option<FactorPanelConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub panel_source: PanelSource,
    #[serde(default)]
    pub filters: FilterSettings,
    #[serde(default)]
    pub rules: Vec<RuleConfig>,
    #[serde(default)]
    pub rule_grid: Vec<RuleGrid>,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_in_sample() -> usize {
    180
}

fn default_bin_width() -> f64 {
    0.005
}

fn auto_id(spec: &CharacteristicSpec, gamma_star: f64, protocol: Protocol) -> String {
    format!("{}_g{}_{}", spec.label().replace(',', "+"), gamma_star, protocol.as_str())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: fixed field order, defaults written out.
    pub fn to_canonical_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.gammas.is_empty() {
            return invalid("at least one investor gamma is required".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 1.0)) {
            return invalid(format!("investor gamma must exceed 1, got {g}"));
        }
        if self.replicates == 0 {
            return invalid("replicates must be at least 1".into());
        }
        if !(self.density_bin_width > 0.0) {
            return invalid("density_bin_width must be positive".into());
        }
        let rules = self.expanded_rules()?;
        if rules.is_empty() {
            return invalid("at least one rule is required".into());
        }
        for r in &rules {
            r.validate().map_err(|e| ConfigError::Invalid(format!("rule `{}`: {e}", r.id)))?;
        }
        Ok(())
    }

    /// Explicit rules followed by grid expansions, ids checked for uniqueness.
    pub fn expanded_rules(&self) -> Result<Vec<RuleSpec>, ConfigError> {
        let spec_of = |chars: &[Characteristic], v: VTreatment| {
            CharacteristicSpec::new(chars.iter().copied(), v).map_err(|e| ConfigError::Invalid(e.to_string()))
        };
        let mut out = Vec::new();
        for r in &self.rules {
            let spec = spec_of(&r.characteristics, r.v_treatment)?;
            out.push(RuleSpec {
                id: r.id.clone().unwrap_or_else(|| auto_id(&spec, r.gamma_star, r.protocol)),
                spec,
                gamma_star: r.gamma_star,
                protocol: r.protocol,
                window_months: r.window_months,
            });
        }
        for g in &self.rule_grid {
            for chars in &g.characteristic_sets {
                let spec = spec_of(chars, g.v_treatment)?;
                for &protocol in &g.protocols {
                    for &gamma_star in &g.gamma_stars {
                        out.push(RuleSpec {
                            id: auto_id(&spec, gamma_star, protocol),
                            spec: spec.clone(),
                            gamma_star,
                            protocol,
                            window_months: g.window_months,
                        });
                    }
                }
            }
        }
        let mut ids: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("duplicate rule id `{}`", w[0])));
        }
        if let Some(bad) = out.iter().find(|r| r.id.contains([',', '\n', '"', '/'])) {
            return Err(ConfigError::Invalid(format!("rule id `{}` contains a reserved character", bad.id)));
        }
        Ok(out)
    }

    pub fn panel_options(&self) -> PanelOptions {
        PanelOptions {
            in_sample_months: self.in_sample_months,
            strict_paper_inclusion: self.strict_paper_inclusion,
        }
    }

    pub fn execution(&self) -> Execution {
        Execution::from_threads(self.threads)
    }

    /// Rewrites relative input paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.panel_source {
            PanelSource::RawHistory { path, deflator, market_index, .. } => {
                fix(path);
                deflator.iter_mut().for_each(fix);
                market_index.iter_mut().for_each(fix);
            }
            PanelSource::PrebuiltPanel { path } => fix(path),
            PanelSource::Synthetic { .. } => {}
        }
        if let RiskFreeConfig::Path(p) = &mut self.risk_free {
            fix(p);
        }
        if let Some(f) = &mut self.factor_panel {
            fix(&mut f.path);
        }
        fix(&mut self.output_dir);
    }

    /// Experiment settings with the loaded series filled in.
    pub fn experiment_spec(
        &self,
        risk_free: RiskFree,
        factors: Option<crate::factors::FactorPanel>,
    ) -> Result<ExperimentSpec, ConfigError> {
        Ok(ExperimentSpec {
            rules: self.expanded_rules()?,
            gammas: self.gammas.clone(),
            replicates: self.replicates,
            base_seed: self.base_seed,
            panel: self.panel_options(),
            tolerances: self.tolerances,
            risk_free,
            factors,
            keep_returns: self.keep_returns,
            execution: self.execution(),
        })
    }
}
