use tripcast::data::{generate_synthetic, prepare_dataset, DataConfig, SyntheticSpec};

fn main() {
    let trips = generate_synthetic(&SyntheticSpec::default()).unwrap();
    println!("raw trips {}", trips.len());
    for w in [3, 5, 8] {
        let ds = prepare_dataset(
            &trips,
            &DataConfig {
                window_days: w,
                ..Default::default()
            },
        )
        .unwrap();
        let mean_len: f64 = ds.train.iter().map(|s| s.valid_len as f64).sum::<f64>() / ds.train.len() as f64;
        println!(
            "window {w}: train {} val {} test {} capacity {} mean valid {mean_len:.1} stats {:?}",
            ds.train.len(),
            ds.val.len(),
            ds.test.len(),
            ds.capacity,
            ds.stats
        );
    }
}
