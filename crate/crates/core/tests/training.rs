use std::fs;

use intsnn::checkpoint;
use intsnn::cost::OpCounter;
use intsnn::experiment::report::emit_report;
use intsnn::experiment::runner::{load_datasets, run_with_data};
use intsnn::experiment::{parse_config, ExperimentConfig};
use intsnn::learner::{evaluate, run_training};
use intsnn::network::Network;

const TOY: &str = r#"
dataset = "synthetic"
seeds = [0]

[model]
architecture = "fc"
input_shape = [32]
hidden = 16
classes = 2
shadow_bits = 16
infer_bits = 8

[train]
timesteps = 8
batch_size = 16
epochs = 20

[synthetic]
train = 256
test = 64
seed = 11

[[layers]]
v_th = 256
grad_win = 128
beta_shift = 1
eta_shift = 6
decay_shift = 12

[[layers]]
v_th = 256
grad_win = 128
beta_shift = 1
eta_shift = 6
decay_shift = 12
"#;

fn toy(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_config(TOY, &o).unwrap()
}

#[test]
fn separable_two_class_stream_is_learned() {
    for arch in [&[][..], &["model.architecture=\"recurrent\"", "model.voltage_bits=24"][..]] {
        let cfg = toy(arch);
        let (train, test) = load_datasets(&cfg, None).unwrap();
        let mut net = Network::new(&cfg.net_config(), &cfg.train_config(0)).unwrap();
        let mut counter = OpCounter::new();
        let records =
            run_training(&mut net, train.as_ref(), test.as_ref(), &cfg.train_config(0), &mut counter, |_| {}).unwrap();
        let best = records.iter().map(|r| r.train_acc).fold(0.0, f64::max);
        assert!(best > 0.95, "{arch:?}: best train accuracy {best}");
        assert_eq!(counter.totals().float_ops, 0);
    }
}

#[test]
fn frozen_learning_only_drifts_by_shift_flooring() {
    // Unit clip with the largest shifts: Δ ≫ 31 and w ≫ 31 are 0 for
    // non-negative values and -1 for negative ones, so each update can only
    // raise a code, by at most 2.
    let cfg = toy(&[
        "train.clip=1",
        "train.epochs=2",
        "layers.0.eta_shift=31",
        "layers.1.eta_shift=31",
        "layers.0.decay_shift=31",
        "layers.1.decay_shift=31",
    ]);
    let (train, test) = load_datasets(&cfg, None).unwrap();
    let tc = cfg.train_config(0);
    let mut net = Network::new(&cfg.net_config(), &tc).unwrap();
    let before: Vec<_> = net.all_weights().into_iter().cloned().collect();
    run_training(&mut net, train.as_ref(), test.as_ref(), &tc, &mut OpCounter::new(), |_| {}).unwrap();
    let updates = (train.len().div_ceil(tc.batch_size) * tc.epochs) as i32;
    for (w, b) in net.all_weights().into_iter().zip(&before) {
        for (&now, &was) in w.shadow().data().iter().zip(b.shadow().data()) {
            assert!(now >= was && now - was <= 2 * updates, "{was} -> {now}");
        }
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let cfg = toy(&["train.epochs=0"]);
    let (train, test) = load_datasets(&cfg, None).unwrap();
    let tc = cfg.train_config(0);
    let mut net = Network::new(&cfg.net_config(), &tc).unwrap();
    let before: Vec<_> = net.all_weights().into_iter().cloned().collect();
    let records = run_training(&mut net, train.as_ref(), test.as_ref(), &tc, &mut OpCounter::new(), |_| {}).unwrap();
    assert!(records.is_empty());
    let after: Vec<_> = net.all_weights().into_iter().cloned().collect();
    assert_eq!(after, before);
}

#[test]
fn runs_are_byte_identical() {
    let cfg = toy(&["train.epochs=3", "seeds=[5, 6]"]);
    let data = load_datasets(&cfg, None).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let m = run_with_data(&cfg, &cfg.seeds, &data, d.path(), |_, _| {}).unwrap();
        emit_report(&m).unwrap();
    }
    for f in ["metrics.csv", "summary.json", "cost_report.txt", "checkpoints/seed-5.isnw", "checkpoints/seed-6.isnw"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    // Different seeds give different weights.
    let a = fs::read(dirs[0].path().join("checkpoints/seed-5.isnw")).unwrap();
    let b = fs::read(dirs[0].path().join("checkpoints/seed-6.isnw")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn checkpoint_reproduces_test_accuracy() {
    let cfg = toy(&["train.epochs=3", "model.architecture=\"recurrent\"", "model.voltage_bits=24"]);
    let data = load_datasets(&cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = run_with_data(&cfg, &[0], &data, dir.path(), |_, _| {}).unwrap();
    assert_eq!(m.results[0].recurrent_unchanged, Some(true));
    let tc = cfg.train_config(0);
    let mut net = checkpoint::load(&cfg.net_config(), &tc, &dir.path().join("checkpoints/seed-0.isnw")).unwrap();
    let acc = evaluate(&mut net, data.1.as_ref(), &tc).unwrap();
    assert_eq!(Some(acc), m.results[0].final_test_acc);
}

#[test]
fn step_schedule_trains() {
    let cfg = toy(&["train.schedule=\"step\"", "train.epochs=5"]);
    let (train, test) = load_datasets(&cfg, None).unwrap();
    let tc = cfg.train_config(0);
    let mut net = Network::new(&cfg.net_config(), &tc).unwrap();
    let records = run_training(&mut net, train.as_ref(), test.as_ref(), &tc, &mut OpCounter::new(), |_| {}).unwrap();
    assert!(records.last().unwrap().train_acc > 0.6, "{records:?}");
}
