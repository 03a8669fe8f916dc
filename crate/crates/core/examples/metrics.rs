//! Accuracy, ROC AUC and the ROC curve for a set of noisy scores, and a
//! paired signed-rank test between two models across datasets.

use erpenet::eval::{accuracy_default, roc_auc, roc_curve, wilcoxon_signed_rank, MeanSe};
use erpenet::signal::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> erpenet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.25).expect("valid sigma");
    let labels: Vec<Label> = (0..500)
        .map(|_| if rng.random_bool(0.2) { Label::Attended } else { Label::Unattended })
        .collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|l| {
            let centre: f64 = if *l == Label::Attended { 0.65 } else { 0.35 };
            (centre + noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();
    println!("accuracy at 0.5: {:.2}%", accuracy_default(&labels, &scores)?);
    println!("ROC AUC:         {:.2}", roc_auc(&labels, &scores)?);
    let curve = roc_curve(&labels, &scores)?;
    println!("ROC curve has {} points; every 50th (fpr, tpr):", curve.len());
    for (fpr, tpr) in curve.iter().step_by(50) {
        println!("  {fpr:.3} {tpr:.3}");
    }

    // per-dataset AUCs of two models
    let a = [91.2, 88.4, 93.0, 85.1, 90.7, 87.9, 92.3];
    let b = [89.0, 88.9, 90.2, 83.3, 88.1, 86.0, 90.5];
    let w = wilcoxon_signed_rank(&a, &b)?;
    println!(
        "\nmodel A {} vs model B {}",
        MeanSe::of(&a)?,
        MeanSe::of(&b)?
    );
    println!(
        "signed-rank: W+ {} W- {} over {} pairs, p = {:.4} ({})",
        w.w_plus,
        w.w_minus,
        w.n,
        w.p_value,
        if w.exact { "exact" } else { "normal approximation" }
    );
    Ok(())
}
