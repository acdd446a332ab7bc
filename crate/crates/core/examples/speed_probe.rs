use collagan_core::data::synth::synth_dataset;
use collagan_core::metrics::nmse;
use collagan_core::train::{run, split_samples, TrainConfig, Trainer};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args[1].parse().unwrap();
    let steps: u64 = args[2].parse().unwrap();
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(11);
    let input_dropout: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let lambda_mcc: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(10.0);

    let mut config = TrainConfig::default();
    config.adam.lr = lr;
    config.joint_steps = steps;
    config.seed = seed;
    config.dsc_dropout = 0.1;
    config.input_dropout_rate = input_dropout;
    config.eval_interval = 100;
    config.weights.mcc = lambda_mcc;

    let (samples, _) = synth_dataset::<f32>(20, 4, 1, 32, 32, seed).unwrap();
    let t = Instant::now();
    let outcome = run(config, &samples, None).unwrap();
    println!("trained {steps} steps in {:.1} min", t.elapsed().as_secs_f64() / 60.0);
    for line in outcome.metrics_csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        println!("step {:>5} nmse {:>8} ssim {:>8} mcc {}", f[0], &f[2][..f[2].len().min(8)], &f[3][..f[3].len().min(8)], &f[4][..f[4].len().min(8)]);
    }
    println!("final test eval:");
    let (_, _, test) = split_samples(&config, &samples).unwrap();
    let trainer = Trainer::from_checkpoint(outcome.checkpoint).unwrap();
    for m in &outcome.final_eval {
        // copy baseline: best single complement copied as the prediction
        let mut base_sum = 0.0;
        let mut cnt = 0;
        for s in &test {
            let best = (0..4)
                .filter(|&d| d != m.domain)
                .map(|d| nmse(&s.images[d], &s.images[m.domain]).unwrap())
                .fold(f64::INFINITY, f64::min);
            base_sum += best;
            cnt += 1;
        }
        let _ = &trainer;
        println!(
            "  domain {}: nmse {:.4} ssim {:.4} (n={}) | copy-baseline {:.4}",
            m.domain,
            m.nmse_mean,
            m.ssim_mean,
            m.samples,
            base_sum / cnt as f64
        );
    }
}
