//! Pilot runs for the weak-signal design.
//!
//! Usage: `cargo run --release --example calibrate -- [scale] [runs] [replicates]`

use std::time::Instant;

use ppp_core::bootstrap::{run_experiment, ExperimentSpec};
use ppp_core::evaluate::summarize;
use ppp_core::panel::PanelOptions;
use ppp_core::policy::{Protocol, RuleSpec, DEFAULT_GAMMA_STAR_GRID as GRID};
use ppp_core::synthgen::{generate_panel, DgpConfig, WEAK_SIGNAL_PATTERN, WEAK_SIGNAL_SCALE};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scale: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(WEAK_SIGNAL_SCALE);
    let runs: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let replicates: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);

    let (mut rolling_larger, mut ties, mut directional) = (0, 0, 0);
    let offset: u64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    for run in offset + 1..=offset + runs {
        let started = Instant::now();
        let mut cfg = DgpConfig::weak_signal(run);
        cfg.signal_loadings = WEAK_SIGNAL_PATTERN.iter().map(|p| p * scale).collect();
        let data = generate_panel(&cfg).expect("valid config");
        let mut rules = Vec::new();
        for protocol in [Protocol::Updating, Protocol::Rolling] {
            for g in GRID {
                rules.push(RuleSpec {
                    id: format!("{}_{g}", protocol.as_str()),
                    spec: cfg.policy_spec(),
                    gamma_star: g,
                    protocol,
                    window_months: 180,
                });
            }
        }
        let mut exp = ExperimentSpec::new(rules, vec![2.0], replicates, 1000 + run);
        exp.panel = PanelOptions { in_sample_months: 180, strict_paper_inclusion: true };
        let res = run_experiment(&data.raw_panel, &exp).expect("experiment runs");

        let vw = res.ce(0, 0);
        let summary = |id: &str| summarize(&res.ce(res.entry_index(id).unwrap(), 0)).unwrap();
        let best = |p: &str| {
            GRID.iter()
                .copied()
                .max_by(|a, b| summary(&format!("{p}_{a}")).p2_5.total_cmp(&summary(&format!("{p}_{b}")).p2_5))
                .unwrap()
        };
        let two = res.ce(res.entry_index("updating_2").unwrap(), 0);
        let losing = two.values.iter().zip(&vw.values).filter(|(a, b)| a < b).count();
        let (bu, br) = (best("updating"), best("rolling"));
        rolling_larger += usize::from(br > bu);
        ties += usize::from(br == bu);
        directional += usize::from(
            summary("updating_6").mean > summary("updating_2").mean && summary("updating_6").p2_5 > summary("updating_2").p2_5,
        );
        println!(
            "run {run}: VW {:.1} | upd g*=2 mean {:.1} p2.5 {:.1} | g*=6 mean {:.1} p2.5 {:.1} | below VW {:.0}% | best upd {bu} roll {br} | {:.1}s",
            summarize(&vw).unwrap().mean,
            summary("updating_2").mean,
            summary("updating_2").p2_5,
            summary("updating_6").mean,
            summary("updating_6").p2_5,
            100.0 * losing as f64 / two.values.len() as f64,
            started.elapsed().as_secs_f64()
        );
    }
    println!("rolling larger in {rolling_larger}, tied in {ties} of {runs} runs; g*=6 beats g*=2 in {directional}");
}
