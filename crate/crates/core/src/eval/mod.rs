//! OOD scores, detection and calibration metrics, and adversarial attacks.

pub mod attacks;
pub mod metrics;
pub mod scores;

pub use attacks::{fgm_attack, loss_input_gradient, pgd_attack, pgd_default, AttackKind, AttackNorm, AttackOutput};
pub use metrics::{
    auc_pr, auc_pr_brute_force, calibration_curve, ece, ece_from_bins, mean_std, ood_threshold_classifier,
    CalibrationBin, DEFAULT_BINS,
};
pub use scores::{
    default_scores, detection_auc, dirichlet_from_logits, score, DetectionReport, DetectionRow, ScoreName,
};
