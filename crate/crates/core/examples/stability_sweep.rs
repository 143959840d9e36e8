//! Runs the reference grid over several seeds and prints per-strategy F1
//! statistics plus the centralized baseline.
//!
//! ```text
//! cargo run --release -p fedrec-core --example stability_sweep -- [config.toml] [num_seeds] [first_seed]
//! ```

use std::path::PathBuf;

use fedrec_core::experiment::{self, ExperimentConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> fedrec_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let base = match args.next() {
        Some(p) => ExperimentConfig::load(&PathBuf::from(p))?,
        None => ExperimentConfig::reference(),
    };
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let first: u64 = args
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(base.seed);

    let names: Vec<String> = base.strategies().iter().map(|s| s.run_name()).collect();
    let mut stds = vec![Vec::new(); names.len()];
    let mut bests = vec![Vec::new(); names.len()];
    let mut progress = vec![0usize; names.len()];
    let mut central = Vec::new();
    for seed in first..first + seeds {
        let cfg = base.clone().with_seed(seed);
        let prepared = experiment::prepare(&cfg)?;
        let boost = experiment::run_central(&prepared.examples, &cfg)?;
        let c_best = boost.f1_summary().map_or(0.0, |s| s.best_value);
        central.push(c_best);
        print!(
            "seed {seed}: pos={:.3} central={c_best:.4}",
            prepared.cohort.positive_rate
        );
        for (i, s) in cfg.strategies().iter().enumerate() {
            let (h, _) = experiment::run_federated(&prepared.examples, &cfg, s)?;
            let sum = h.f1_summary.expect("rounds > 0");
            stds[i].push(sum.std_dev);
            bests[i].push(sum.best_value);
            let (first, last) = (h.rounds[0].metrics.f1, h.rounds.last().unwrap().metrics.f1);
            progress[i] += usize::from(last > first);
            print!(
                "  {}: best={:.4} std={:.4}",
                names[i], sum.best_value, sum.std_dev
            );
        }
        println!();
    }
    println!("central median best = {:.4}", median(central));
    for (i, n) in names.iter().enumerate() {
        println!(
            "{n:>16}: median std={:.4} median best={:.4} progressed {}/{seeds}",
            median(stds[i].clone()),
            median(bests[i].clone()),
            progress[i]
        );
    }
    Ok(())
}
