//! Short adversarial run in both modulation modes on the synthetic dataset.
//!
//! `cargo run --release --example train_toy -- [steps] [out_dir]`

use overparam::training::{pooled_channel_moments, sample_images, train, Discriminator, SyntheticDataset, TrainConfig};
use overparam::{Generator, GeneratorConfig, ModulationMode, SeededRng};

fn main() -> overparam::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = args.next().unwrap_or_else(|| "target/examples-out/train_toy".into());
    let data = SyntheticDataset::new(0, 4096, 32)?;
    println!("dataset channel moments {:?}", data.channel_moments(256));
    for mode in [ModulationMode::Baseline, ModulationMode::Overparam] {
        let mut rng = SeededRng::new(0);
        let mut g = Generator::new(GeneratorConfig::desk(mode), &mut rng)?;
        let mut d = Discriminator::new(32, &mut rng)?;
        let cfg = TrainConfig { steps, sample_interval: steps.max(1), ..TrainConfig::default() };
        let dir = format!("{out}/{mode}");
        let report = train(&mut g, &mut d, &data, &cfg, &mut SeededRng::new(1), Some(dir.as_ref()))?;
        let last = report.records.last();
        let moments = pooled_channel_moments(&sample_images(&g, 256, &mut SeededRng::new(9))?);
        println!("{mode}: final losses {last:?}\n  generated channel moments {moments:?}\n  outputs in {dir}");
    }
    Ok(())
}
