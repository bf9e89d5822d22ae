// Threshold-free metrics on a handful of scored lines.

use logmlm::eval::{auroc, best_f1, candidate_thresholds, roc_curve};

fn main() {
    // (oriented score, is abnormal); larger means more anomalous
    let scored = [(0.1, false), (0.4, true), (0.5, false), (0.8, true), (0.8, false), (1.3, true)];
    let f1 = best_f1(&scored).unwrap();
    println!("auroc {:.4}", auroc(&scored).unwrap());
    println!(
        "best f1 {:.4} at threshold {} (precision {:.3}, recall {:.3}, {:?})",
        f1.f1, f1.threshold, f1.precision, f1.recall, f1.confusion
    );
    println!("candidates {:?}", candidate_thresholds(&scored));
    for p in roc_curve(&scored).unwrap() {
        println!("  t {:>6} fpr {:.3} tpr {:.3}", p.threshold, p.fpr, p.tpr);
    }

    let ties = [(1.0, true), (1.0, false), (1.0, false)];
    println!("all ties: auroc {}, best f1 {:.4}", auroc(&ties).unwrap(), best_f1(&ties).unwrap().f1);
}
