use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::scaling::run::{Pool, ScalingResult};
use crate::scaling::{fit_pooled, loss_asr_symmetry, FitWindow, Metric};

/// `T,trial,image_id,target,heldout_model_id,targeted_success,untargeted_success,ce_loss`
/// for the records of one pool.
pub fn results_csv(result: &ScalingResult, pool: Pool) -> String {
    let mut out =
        String::from("T,trial,image_id,target,heldout_model_id,targeted_success,untargeted_success,ce_loss\n");
    for r in result.records.iter().filter(|r| r.pool == pool) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.trial,
            r.image_id,
            r.target,
            r.heldout_model_id,
            u8::from(r.targeted_success),
            u8::from(r.untargeted_success),
            r.ce_loss
        );
    }
    out
}

/// Pooled rows against `ln T`, with standard deviations for error bands.
pub fn plot_csv(result: &ScalingResult) -> String {
    let mut out =
        String::from("pool,T,ln_T,asr_mean,asr_std,loss_mean,loss_std,untargeted_mean,untargeted_std,n_runs\n");
    for pool in [Pool::Heldout, Pool::HeldoutAt] {
        for r in result.pooled(pool) {
            let name = match pool {
                Pool::Heldout => "heldout",
                Pool::HeldoutAt => "heldout_at",
            };
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{}",
                r.t,
                (r.t as f64).ln(),
                r.asr_mean,
                r.asr_std,
                r.loss_mean,
                r.loss_std,
                r.untargeted_mean,
                r.untargeted_std,
                r.n_runs
            );
        }
    }
    out
}

/// Rows, fits, the loss/ASR rank correlation and whatever the caller puts in `extra`.
pub fn summary_json(result: &ScalingResult, window: FitWindow, extra: Value) -> Value {
    let fit = |pool, metric| match fit_pooled(result, pool, metric, window) {
        Ok(f) => json!(f),
        Err(e) => json!({ "error": e.to_string() }),
    };
    json!({
        "rows": result.rows,
        "fits": {
            "heldout_targeted": fit(Pool::Heldout, Metric::Targeted),
            "heldout_untargeted": fit(Pool::Heldout, Metric::Untargeted),
            "heldout_at_untargeted": fit(Pool::HeldoutAt, Metric::Untargeted),
        },
        "fit_window": window,
        "loss_asr_spearman": loss_asr_symmetry(result),
        "extra": extra,
    })
}
