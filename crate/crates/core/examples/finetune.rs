//! Pre-trains ERPENet on one synthetic corpus, then fine-tunes the encoder
//! and classifier on a second corpus whose deflection peaks 100 ms later,
//! next to a run from fresh weights. Takes about two minutes on one core.

use erpenet::eval::roc_auc;
use erpenet::io::{synth_generate, SynthConfig};
use erpenet::model::{Architecture, Network};
use erpenet::signal::{preprocess, GridEpoch, Label, PreprocessConfig};
use erpenet::tensor::optim::OptimizerKind;
use erpenet::train::{fine_tune, make_splits, pretrain, select, Schedule, SplitMode, TrainConfig, TriangularSchedule};

fn corpus(cfg: &SynthConfig) -> erpenet::Result<(Vec<GridEpoch>, Vec<GridEpoch>)> {
    let mut data = Vec::new();
    for r in synth_generate(cfg)? {
        data.extend(preprocess(&r, &PreprocessConfig::default())?.epochs);
    }
    let (tr, va) = make_splits(&data, SplitMode::Holdout, 0)?.round(0);
    Ok((select(&data, &tr), select(&data, &va)))
}

fn auc(net: &Network<f32>, val: &[GridEpoch]) -> erpenet::Result<f64> {
    let p: Vec<f64> = net.classify(val)?.into_iter().map(f64::from).collect();
    let l: Vec<Label> = val.iter().map(|e| e.label).collect();
    roc_auc(&l, &p)
}

fn main() -> erpenet::Result<()> {
    let (train, val) = corpus(&SynthConfig { trials_per_subject: 800, seed: 1, ..SynthConfig::default() })?;
    let mut net = Network::<f32>::erpenet(0)?;
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Rmsprop,
        learning_rate: 1e-3,
        decay: 0.0,
        max_epochs: 2,
        bn_momentum: 0.9,
        ..TrainConfig::pretrain()
    };
    let log = |r: &erpenet::train::EpochRecord| println!("  epoch {} val loss {:.4} ({:.0} s)", r.epoch, r.val_loss, r.wall_s);
    println!("pre-training on {} epochs", train.len());
    pretrain(&mut net, &train, &val, &cfg, &mut |r| log(r))?;
    println!("pre-trained AUC {:.2}", auc(&net, &val)?);

    let (train2, val2) = corpus(&SynthConfig {
        trials_per_subject: 400,
        p300_latency_s: 0.4,
        dataset_id: "late".into(),
        seed: 9,
        ..SynthConfig::default()
    })?;
    let ft = TrainConfig {
        optimizer: OptimizerKind::Rmsprop,
        max_epochs: 3,
        bn_momentum: 0.9,
        schedule: Schedule::Triangular(TriangularSchedule::default().compressed(3)),
        ..TrainConfig::fine_tune()
    };
    for (name, start) in [("pre-trained", net.weights().clone()), ("fresh", Network::<f32>::erpenet(1)?.into_weights())] {
        println!("fine-tuning from {name} weights");
        let (tuned, report) = fine_tune(Architecture::erpenet(), start, &train2, &val2, &ft, &mut |r| log(r))?;
        println!("  best epoch {}, AUC {:.2}", report.best_epoch, auc(&tuned, &val2)?);
    }
    Ok(())
}
