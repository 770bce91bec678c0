use std::collections::HashSet;
use std::f64::consts::PI;

use sysid_core::datapipe::make_split_dataset;
use sysid_core::model::TransformerConfig;
use sysid_core::sysgen::{sample_from_class, ClassSpec, LtiClass, PoleRegion};
use sysid_core::train::{adapt, loss_on_sequences, meta_train, rng_stream, StopReason, TrainConfig};

fn tiny_model() -> TransformerConfig {
    TransformerConfig { n_layers: 1, d_model: 16, n_heads: 2, n_ctx_enc: 20, n_ctx_dec: 10, n_u: 1, n_y: 1, d_ff: 32, dropout: 0.0 }
}

fn lti() -> ClassSpec {
    ClassSpec::lti(LtiClass::new(1, 5, PoleRegion::new((0.5, 0.97), (-PI, PI)).unwrap()))
}

fn cfg(iters: usize) -> TrainConfig {
    TrainConfig { lr: 1e-3, eval_every: 10, val_systems: 8, seed: 5, ..TrainConfig::new(4, 30, 20, iters) }
}

#[test]
fn same_seed_same_csv_and_weights() {
    let a = meta_train::<f32>(&cfg(30), &lti(), &tiny_model(), None).unwrap();
    let b = meta_train::<f32>(&cfg(30), &lti(), &tiny_model(), None).unwrap();
    assert_eq!(a.loss_csv(), b.loss_csv());
    assert_eq!(a.last, b.last);
    let c = meta_train::<f32>(&TrainConfig { seed: 6, ..cfg(30) }, &lti(), &tiny_model(), None).unwrap();
    assert_ne!(a.loss_csv(), c.loss_csv());
}

#[test]
fn every_minibatch_draws_new_systems() {
    let rec = meta_train::<f32>(&cfg(100), &lti(), &tiny_model(), None).unwrap();
    assert_eq!(rec.batch_systems.len(), 100);
    let all: Vec<u64> = rec.batch_systems.concat();
    let distinct: HashSet<u64> = all.iter().copied().collect();
    assert_eq!(distinct.len(), all.len());
}

#[test]
fn positional_tables_survive_training() {
    let rec = meta_train::<f32>(&cfg(20), &lti(), &tiny_model(), None).unwrap();
    let fresh = sysid_core::model::TransformerParams::<f32>::init(&tiny_model(), &mut rng_stream(0, 0)).unwrap();
    assert_eq!(rec.last.pos_encoder(), fresh.pos_encoder());
    assert_eq!(rec.last.pos_decoder(), fresh.pos_decoder());
    assert_ne!(rec.last.tensors(), fresh.tensors());
}

#[test]
fn zero_iterations_returns_initialization() {
    let rec = meta_train::<f32>(&cfg(0), &lti(), &tiny_model(), None).unwrap();
    assert!(rec.train_loss.is_empty());
    assert_eq!(rec.val_loss.len(), 1);
    assert_eq!(rec.best, rec.last);
    assert_eq!(rec.stop, StopReason::Completed);
    assert_eq!(rec.loss_csv(), format!("iter,train_loss,val_loss\n0,,{}\n", rec.val_loss[0].1));
}

#[test]
fn loss_drops_below_unit_baseline() {
    let rec = meta_train::<f32>(&TrainConfig { eval_every: 100, ..cfg(300) }, &lti(), &tiny_model(), None).unwrap();
    let first = rec.val_loss[0].1;
    assert!(first > 0.8, "initial validation loss {first}");
    assert!(rec.best_val < 0.8 * first, "{:?}", rec.val_loss);
}

#[test]
fn adaptation_snapshot_reproduces_best_validation_loss() {
    let pre = meta_train::<f64>(&cfg(20), &lti(), &tiny_model(), None).unwrap().last;
    let mut rng = rng_stream(9, 0);
    let sys = sample_from_class(&lti(), &mut rng).unwrap();
    let data = make_split_dataset(&sys, 12, 30, (8, 2, 2), &mut rng).unwrap();
    let acfg = TrainConfig { lr: 1e-3, eval_every: 5, patience: Some(3), ..TrainConfig::new(4, 30, 20, 60) };
    let rec = adapt(&pre, &data, &acfg).unwrap();
    assert_eq!(loss_on_sequences(&rec.best, &data.val, 20, 16).unwrap(), rec.best_val);
    assert!(rec.best_val <= rec.val_loss[0].1);
    assert!(rec.batch_systems.is_empty());
}
