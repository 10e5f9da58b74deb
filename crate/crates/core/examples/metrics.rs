//! Accuracy, per-class and macro-averaged precision/recall/F1, and the
//! confusion matrix.

use mcm::data::Label;
use mcm::train::compute_metrics;

fn main() -> mcm::Result<()> {
    let y_true = [0, 0, 1, 2, 0, 1, 2, 2, 0, 1];
    let y_pred = [0, 1, 1, 2, 0, 0, 2, 1, 0, 1];
    let m = compute_metrics(&y_true, &y_pred, 3)?;

    println!("accuracy {:.4}", m.accuracy);
    for (c, label) in Label::ALL.iter().enumerate() {
        println!("{label:<9} P {:.4}  R {:.4}  F1 {:.4}", m.precision[c], m.recall[c], m.f1[c]);
    }
    println!("macro     P {:.4}  R {:.4}  F1 {:.4}", m.macro_precision, m.macro_recall, m.macro_f1);

    println!("confusion (rows true, columns predicted)");
    for row in &m.confusion {
        println!("  {row:?}");
    }

    // a majority-class predictor on the same labels
    let majority = compute_metrics(&y_true, &[0; 10], 3)?;
    println!("majority baseline: accuracy {:.2}, macro F1 {:.4}", majority.accuracy, majority.macro_f1);
    Ok(())
}
