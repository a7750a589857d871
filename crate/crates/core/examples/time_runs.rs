//! Times FedAvg runs on the default N = 100 setup. Arguments are K E pairs,
//! e.g. `cargo run --release --example time_runs -- 10 20 20 20`.

use std::time::Instant;

use fedcost::model::{draw_heterogeneous_population, DeviceProfile, RngSeed};
use fedcost::sim::{generate_synthetic, CountSpec, FedSimulator, TrainingConfig};

fn main() -> fedcost::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let means = DeviceProfile::new(0.1, 2.0, 1e-3, 2e-2)?;
    let pop = draw_heterogeneous_population(100, means, 1.0 / 3.0, &RngSeed::new(1, "costs"))?;
    let counts = CountSpec { mean: 245.0, std: 362.0, min: 10 };
    let ds = generate_synthetic(1.0, 1.0, 100, &counts, &RngSeed::new(1, "data"))?;
    println!("samples: {}", ds.total_samples());
    let sim = FedSimulator::new(&pop, ds, TrainingConfig::default())?;
    for pair in args.chunks(2) {
        let start = Instant::now();
        let rec = sim.run(pair[0], pair[1], &RngSeed::new(7, "run"))?;
        println!(
            "K={} E={} rounds={} complete={} loss={:.4} time={:.1} energy={:.3} wall={:.2?}",
            pair[0],
            pair[1],
            rec.rounds_executed(),
            rec.complete,
            rec.final_loss().unwrap_or(f64::NAN),
            rec.total_time(),
            rec.total_energy(),
            start.elapsed()
        );
    }
    Ok(())
}
