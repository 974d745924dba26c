//! Trains every variant on the default synthetic fleet and prints errors
//! against the persistence baseline.
//!
//! Defaults match the acceptance benchmark. Environment: `WINDOW` (days),
//! `EPOCHS`, `WIDTH` (LSTM units per layer), `VARIANTS` (comma list),
//! `BATCH`, `LOSS`, `VEHICLES`.

use std::time::Instant;

use tripcast::data::{generate_synthetic, prepare_dataset, DataConfig, SyntheticSpec};
use tripcast::nn::{init_params, ModelConfig, Variant};
use tripcast::train::{persistence_predictions, target_errors, train_fixed_split, Splits, TrainConfig};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let window: u32 = env("WINDOW", 3);
    let epochs: usize = env("EPOCHS", 60);
    let width: usize = env("WIDTH", 16);
    let variants: String = env("VARIANTS", "pm1,pm2,pm3,pm4".to_string());
    let spec = SyntheticSpec {
        vehicles: env("VEHICLES", 50),
        ..SyntheticSpec::default()
    };
    let trips = generate_synthetic(&spec).unwrap();
    let ds = prepare_dataset(
        &trips,
        &DataConfig {
            window_days: window,
            ..Default::default()
        },
    )
    .unwrap();
    let base = target_errors(&persistence_predictions(&ds.test), &ds.test, &ds.stats).unwrap();
    println!(
        "samples {}/{}/{} capacity {} persistence {:?}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.capacity,
        base
    );
    for v in variants.split(',') {
        let variant: Variant = v.parse().unwrap();
        let model = ModelConfig {
            lstm_layer_sizes: vec![width; 3],
            attention_size: 8,
            fc_sizes: vec![16, 2],
            max_seq_len: ds.capacity,
            ..ModelConfig::best(variant)
        };
        let cfg = TrainConfig {
            epochs,
            patience: 20,
            batch_size: env("BATCH", 128),
            loss: env("LOSS", "mse".to_string()).parse().unwrap(),
            ..Default::default()
        };
        let start = Instant::now();
        let out = train_fixed_split(
            &model,
            init_params(&model, 0).unwrap(),
            Splits {
                train: &ds.train,
                val: &ds.val,
                test: &ds.test,
            },
            &ds.stats,
            &cfg,
        )
        .unwrap();
        let secs = start.elapsed().as_secs_f64();
        for h in &out.report.history {
            println!(
                "  {v} epoch {} loss {:.5} train {:.2} val {:.2} test {:.2}",
                h.epoch, h.train_loss, h.train_error, h.val_error, h.test_error
            );
        }
        println!(
            "{v}: test {:.3}% (dt {:.3}, d {:.3}) best epoch {} in {secs:.1}s",
            out.report.prediction_error_pct,
            out.report.delta_t_error_pct,
            out.report.distance_error_pct,
            out.report.best_epoch
        );
    }
}
