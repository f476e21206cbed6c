use alprio_core::synthetic::{simulate_campaign, SimulationConfig};

fn main() {
    let env = |k: &str, d: usize| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let sim = SimulationConfig {
        hot_start: env("HOT", 5),
        tested_per_round: env("TESTED", 10),
        shortlist_size: env("SHORT", 10),
        library_size: env("LIB", 600),
        ..SimulationConfig::default()
    };
    let mut improved = 0;
    let start = std::time::Instant::now();
    let base: u64 = std::env::var("BASE").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    for seed in base..base + 20 {
        let o = simulate_campaign(seed, &sim).expect("simulation runs");
        let up = o.shortlist_true_mean[2] > o.shortlist_true_mean[0];
        improved += usize::from(up);
        println!(
            "seed {seed:2}: shortlist {:?} pool mean {:.4} max {:.4} {}",
            o.shortlist_true_mean.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            o.pool_true_mean[0],
            o.pool_true_max[0],
            if up { "up" } else { "DOWN" }
        );
    }
    println!("{improved}/20 improved in {:?}", start.elapsed());
}
