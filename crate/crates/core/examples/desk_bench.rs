//! Raw vs regularized metrics on one synthetic scene.
//!
//! Usage: desk_bench [seed] [noise_rate] [epochs] [batch_size]

use std::time::Instant;

use nrgs_core::eval::{ablation_grid, EvalViews};
use nrgs_core::lifter::{lift_observed, observations_all};
use nrgs_core::synth::{corrupt_maps, generate_scene, label_coverage, split_views, SynthConfig};
use nrgs_core::train::TrainConfig;
use nrgs_core::Granularity;

fn main() -> nrgs_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |k: usize| args.get(k).map(|s| s.as_str());
    let synth = SynthConfig {
        seed: arg(1).map_or(0, |s| s.parse().unwrap()),
        noise_rate: arg(2).map_or(0.3, |s| s.parse().unwrap()),
        ..SynthConfig::default()
    };
    let mut train = TrainConfig::default();
    if let Some(e) = arg(3) {
        train.epochs = e.parse().unwrap();
    }
    if let Some(b) = arg(4) {
        train.batch_size = b.parse().unwrap();
    }
    let t = Instant::now();
    let (scene, truth, cams) = generate_scene(&synth)?;
    let (lift_cams, eval_cams) = split_views(&cams);
    let obs = observations_all(&scene, &lift_cams);
    let mut lifted = Vec::new();
    for g in Granularity::ALL {
        let cov = label_coverage(&scene, &truth, &lift_cams, g);
        let maps = corrupt_maps(&cov, &truth, &synth);
        lifted.push(lift_observed(scene.len(), &obs, &maps, g)?);
    }
    eprintln!("synth+lift {:.1}s, valid {:?}", t.elapsed().as_secs_f64(), lifted.iter().map(|f| f.valid_count()).collect::<Vec<_>>());
    let views = EvalViews::new(&scene, &truth, &eval_cams);
    let t = Instant::now();
    let report = ablation_grid(&scene, &lifted, &truth, &views, &train)?;
    eprintln!("grid {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", report.to_text());
    Ok(())
}
