use collagan_core::data::synth::synth_dataset;
use collagan_core::train::{TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args[1].parse().unwrap();
    let dropout: f64 = args[2].parse().unwrap();
    let mut fails = 0;
    for seed in 0..16u64 {
        let (samples, _) = synth_dataset::<f32>(20, 4, 1, 32, 32, seed).unwrap();
        let mut config = TrainConfig::default();
        config.adam.lr = lr;
        config.dsc_dropout = dropout;
        config.pretrain_epochs = 10;
        config.seed = seed;
        let mut trainer = Trainer::new(config).unwrap();
        trainer.pretrain_classifier(&samples[..16].to_vec()).unwrap();
        let acc = trainer.classification_accuracy(&samples[16..].to_vec()).unwrap();
        if acc <= 0.95 { fails += 1; println!("  seed {seed}: {acc:.3}"); }
    }
    println!("lr={lr} dropout={dropout}: {fails}/16 below 0.95");
}
