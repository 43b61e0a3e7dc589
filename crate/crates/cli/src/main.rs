//! `ppp`: build panels, run bootstrap experiments and query result bundles.
//!
//! Exit status: 0 on success, 1 when some replicates failed (tables are still
//! written), 2 on configuration or ingestion errors.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ppp_core::config::ExperimentConfig;
use ppp_core::panel::{write_panel_csv, write_raw_history};
use ppp_core::pipeline::{self, MANIFEST_FILE, PANEL_FILE};
use ppp_core::report::{self, read_decomposition, read_summary, ranking_for_gamma};
use ppp_core::synthgen::{generate_panel, market_series, synthetic_factors, DgpConfig};

#[derive(Debug, Parser)]
#[command(name = "ppp", version, about = "Parametric portfolio policies evaluated with a cross-sectional bootstrap")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Base seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest and filter a panel source and write panel.csv with its provenance log.
    Build {
        config: PathBuf,
    },
    /// Run the bootstrap experiment and write the result bundle.
    Run {
        config: PathBuf,
    },
    /// Print rankings and component tables from a result bundle; export densities.
    Report {
        /// Result bundle directory.
        bundle: PathBuf,
        /// Restrict the ranking to one investor gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Write density/<rule>.csv for this rule (repeatable; needs keep_returns).
        #[arg(long = "density", value_name = "RULE")]
        densities: Vec<String>,
        /// Density bin width in return units.
        #[arg(long, default_value_t = 0.005)]
        bin_width: f64,
        /// Cross-covariance shares at or below this magnitude are not printed.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Generate a synthetic panel, its raw history, a factor file and the manifest.
    Synth {
        /// Generator settings (TOML); defaults are used when omitted.
        #[arg(long)]
        dgp: Option<PathBuf>,
        /// Use the calibrated weak-signal design.
        #[arg(long, conflicts_with = "dgp")]
        weak_signal: bool,
    },
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = pipeline::read_config(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(seed) = o.seed {
        cfg.base_seed = seed;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn cmd_build(config: &Path, o: &Overrides) -> Result<bool> {
    let cfg = load_config(config, o)?;
    let out = pipeline::build(&cfg)?;
    println!("wrote {}", out.panel.display());
    for p in out.filter_log.iter().chain(&out.manifest) {
        println!("wrote {}", p.display());
    }
    Ok(true)
}

fn cmd_run(config: &Path, o: &Overrides) -> Result<bool> {
    let cfg = load_config(config, o)?;
    let out = pipeline::run(&cfg)?;
    println!("wrote {} files to {}", out.written.len(), cfg.output_dir.display());
    if out.failures > 0 {
        let mut reps: Vec<usize> = out.result.failures().iter().map(|f| f.replicate).collect();
        reps.dedup();
        eprintln!(
            "{} rule evaluations failed in replicates {:?}; see {}",
            out.failures,
            reps,
            report::FAILURES_FILE
        );
        return Ok(false);
    }
    Ok(true)
}

fn cmd_report(bundle: &Path, gamma: Option<f64>, densities: &[String], bin_width: f64, threshold: f64) -> Result<bool> {
    let rows = read_summary(bundle)?;
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    if let Some(g) = gamma {
        if !gammas.contains(&g) {
            bail!("gamma {g} not in bundle (available: {gammas:?})");
        }
        gammas = vec![g];
    }
    for g in gammas {
        let ranking = ranking_for_gamma(&rows, g)?;
        println!("gamma = {g}");
        println!("  {:<32} {:>12} {:>12} {:>12}", "rule", "ce_p2_5", "ce_mean", "ce_p97_5");
        for (id, s) in &ranking.order {
            println!("  {id:<32} {:>12.4} {:>12.4} {:>12.4}", s.p2_5, s.mean, s.p97_5);
        }
        println!("  winner: {}", ranking.winner);
        println!("  not dominated by winner: {}", ranking.not_dominated.join(", "));
        println!();
    }

    if let Some(decomp) = read_decomposition(bundle)? {
        println!("variance decomposition (mean over replicates; cross terms above {threshold})");
        let mut current = "";
        for r in &decomp {
            let cross = r.component.starts_with("Cov(");
            if cross && !r.share_mean.is_some_and(|s| s.abs() > threshold) {
                continue;
            }
            if r.rule_id != current {
                println!("  {}", r.rule_id);
                current = &r.rule_id;
            }
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:>12.6}")).unwrap_or_else(|| format!("{:>12}", ""));
            println!("    {:<16} {} {}", r.component, fmt(r.coef_mean), fmt(r.share_mean));
        }
    }

    for rule in densities {
        let path = report::export_rule_density(bundle, rule, bin_width)?;
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn cmd_synth(dgp: Option<&Path>, weak_signal: bool, o: &Overrides) -> Result<bool> {
    let mut cfg = match dgp {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<DgpConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None if weak_signal => DgpConfig::weak_signal(1),
        None => DgpConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    let data = generate_panel(&cfg)?;
    let dir = o.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    };
    write_panel_csv(&data.raw_panel, create(PANEL_FILE)?)?;
    write_raw_history(&data.history, create("raw_history.csv")?)?;
    synthetic_factors(&market_series(&data.raw_panel), 0.0037, cfg.seed).write_csv(create("factors.csv")?)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&data.manifest)?)?;
    fs::write(dir.join("dgp.toml"), toml::to_string(&cfg)?)?;
    println!("wrote synthetic panel ({} rows) to {}", data.raw_panel.row_count(), dir.display());
    println!("panel sha256 {}", data.manifest.panel_sha256);
    Ok(true)
}

fn cmd_selftest() -> Result<bool> {
    let mut ok = true;
    for c in ppp_core::selftest::run_all() {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Build { config } => cmd_build(config, &cli.overrides),
        Command::Run { config } => cmd_run(config, &cli.overrides),
        Command::Report { bundle, gamma, densities, bin_width, threshold } => {
            cmd_report(bundle, *gamma, densities, *bin_width, *threshold)
        }
        Command::Synth { dgp, weak_signal } => cmd_synth(dgp.as_deref(), *weak_signal, &cli.overrides),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
