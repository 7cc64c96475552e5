//! Unsupervised training of the multiplier network on Random20 instances.
//!
//! cargo run --release --example train_model -- [epochs] [out.json]

use hklearn::egat::{init_params, save_params, ModelProvenance};
use hklearn::heldkarp::{hk_bound, MultiplierVector};
use hklearn::instance::{DatasetConfig, DatasetKind};
use hklearn::train::{build_training_set, mean_predicted_bound, train, AdamState, TrainOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(300, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| "model.json".into());

    let cfg = DatasetConfig::random(20, 0);
    let train_set = build_training_set(&cfg, 30, 10, 1).unwrap();
    let val = build_training_set(&cfg, 20, 0, 2).unwrap();
    println!("{} training graphs ({} roots), {} validation graphs", train_set.len(), train_set.roots(), val.len());

    let zero: f64 = val.graphs.iter().map(|g| hk_bound(&g.instance, &MultiplierVector::zeros(g.instance.n())).unwrap().bound).sum::<f64>()
        / val.len() as f64;

    let params = init_params(0);
    let mut adam = AdamState::new(&params);
    let opts = TrainOptions { epochs, patience: epochs, augment: true, ..Default::default() };
    let (best, log) = train(params, &train_set, &val, &opts, &mut adam).unwrap();
    for r in log.records.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:>5}  train {:.4}  val {:.4}", r.epoch, r.mean_train_bound, r.mean_val_bound);
    }
    let pred = mean_predicted_bound(&best, &val).unwrap();
    println!("validation: HK(0) {zero:.4}, HK(predicted) {pred:.4}, best epoch {}", log.best_epoch);

    let prov = ModelProvenance { dataset_kind: Some(DatasetKind::Random), n_cities: Some(20), epochs: Some(epochs), seed: Some(0) };
    save_params(&best, &prov, &out).unwrap();
    println!("saved {out}");
}
