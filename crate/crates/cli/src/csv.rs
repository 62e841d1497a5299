//! CSV rendering. Comma separated, `.` decimals, floats with 17 significant
//! digits so they re-parse to the same `f64`.

use block_fusion::train::{RunRecord, SweepRow};

pub const TRAIN_HEADER: &str = "epoch,train_loss,val_metric";
pub const SWEEP_HEADER: &str = "R,L,param_count,metric_mean,metric_std,seconds";

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per epoch, then `summary,<train loss at best epoch>,<best val metric>`.
pub fn train_csv(record: &RunRecord) -> String {
    let mut s = String::from(TRAIN_HEADER);
    s.push('\n');
    for e in &record.epochs {
        s += &format!("{},{},{}\n", e.epoch, float(e.train_loss), float(e.val_metric));
    }
    s += &format!(
        "summary,{},{}\n",
        float(record.final_train_loss),
        float(record.best_val_metric)
    );
    s
}

/// One row per R; `param_count` is the core term `R·L³`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.r,
            r.l,
            r.param_count,
            float(r.metric_mean),
            float(r.metric_std),
            float(r.seconds)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456.789, 0.0, f64::MIN_POSITIVE] {
            let text = float(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
            let mantissa = text.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }
}
