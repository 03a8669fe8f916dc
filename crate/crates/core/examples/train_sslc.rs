//! Trains the dense SSLC-AE autoencoder on synthetic data with the joint
//! objective, then compares its reconstructions with a per-channel
//! temporal-mean predictor and scores its classifier head.
//!
//! ```text
//! cargo run --release --example train_sslc -- 15
//! ```

use erpenet::eval::{evaluate_model, mse_report, temporal_mean_errors, MeanSe, MetricsReport};
use erpenet::io::{save_weights, synth_generate, SynthConfig};
use erpenet::model::Network;
use erpenet::signal::{preprocess, PreprocessConfig};
use erpenet::tensor::optim::OptimizerKind;
use erpenet::train::{make_splits, pretrain, select, SplitMode, TrainConfig};

fn main() -> erpenet::Result<()> {
    let epochs_to_run: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let mut data = Vec::new();
    for r in synth_generate(&SynthConfig { trials_per_subject: 600, seed: 2, ..SynthConfig::default() })? {
        data.extend(preprocess(&r, &PreprocessConfig::default())?.epochs);
    }
    let (tr, va) = make_splits(&data, SplitMode::Holdout, 0)?.round(0);
    let (train, val) = (select(&data, &tr), select(&data, &va));

    let cfg = TrainConfig {
        optimizer: OptimizerKind::Rmsprop,
        learning_rate: 1e-3,
        decay: 0.0,
        max_epochs: epochs_to_run,
        bn_momentum: 0.9,
        ..TrainConfig::pretrain()
    };
    let mut net = Network::<f32>::sslc_ae(0)?;
    let report = pretrain(&mut net, &train, &val, &cfg, &mut |r| {
        println!(
            "epoch {:>3}  train {:>8}  val {:.4}  mse {:.4}  bce {:.4}  ({:.1} s)",
            r.epoch,
            r.train_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.val_loss,
            r.val_mse.unwrap_or(f64::NAN),
            r.val_bce,
            r.wall_s
        )
    })?;
    println!("best epoch {} (val loss {:.4})", report.best_epoch, report.best_val_loss);

    println!("masked MSE  model {}", mse_report(&net, &val)?);
    println!("            mean  {}", MeanSe::of(&temporal_mean_errors(&val)?)?);
    let rows = evaluate_model(&net, "sslc-ae", &val, 0, Some(report.epochs_run), true)?;
    let table = MetricsReport { rows, ..Default::default() };
    table.write_csv(std::io::stdout())?;

    let out = std::env::temp_dir().join("sslc_trained.erpw");
    save_weights(&out, &net)?;
    println!("weights saved to {}", out.display());
    Ok(())
}
