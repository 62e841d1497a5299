use super::task::Target;
use crate::error::{FusionError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Mean over the `K` outputs of the squared error.
    Mse,
    /// Softmax followed by negative log-likelihood of the target class.
    CrossEntropy,
    /// Per-output sigmoid binary cross-entropy, averaged over `K`.
    BinaryCrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::BinaryCrossEntropy => "binary_cross_entropy",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "binary_cross_entropy" | "bce" => Ok(LossKind::BinaryCrossEntropy),
            other => Err(FusionError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss value and its exact gradient with respect to `y`.
pub fn loss_and_grad(kind: LossKind, y: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    let k = y.len() as f64;
    match (kind, target) {
        (LossKind::Mse, Target::Values(t)) => {
            check_len(y, t)?;
            let loss = y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / k;
            let dy = y.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / k).collect();
            Ok((loss, dy))
        }
        (LossKind::CrossEntropy, Target::Class(c)) => {
            let c = check_class(*c, y.len())?;
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let loss = z.ln() + max - y[c];
            let mut dy: Vec<f64> = exps.iter().map(|e| e / z).collect();
            dy[c] -= 1.0;
            Ok((loss, dy))
        }
        (LossKind::BinaryCrossEntropy, target) => {
            let t = match target {
                Target::Values(t) => {
                    check_len(y, t)?;
                    if let Some(bad) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
                        return Err(FusionError::Contract(format!(
                            "binary cross-entropy target {bad} is not 0 or 1"
                        )));
                    }
                    t.clone()
                }
                Target::Class(c) => {
                    let c = check_class(*c, y.len())?;
                    let mut t = vec![0.0; y.len()];
                    t[c] = 1.0;
                    t
                }
            };
            let loss = y.iter().zip(&t).map(|(&a, &b)| softplus(a) - b * a).sum::<f64>() / k;
            let dy = y.iter().zip(&t).map(|(&a, &b)| (sigmoid(a) - b) / k).collect();
            Ok((loss, dy))
        }
        (LossKind::Mse, Target::Class(_)) => Err(FusionError::Contract(
            "mse needs a real-valued target vector".into(),
        )),
        (LossKind::CrossEntropy, Target::Values(_)) => Err(FusionError::Contract(
            "cross-entropy needs a class-index target".into(),
        )),
    }
}

fn check_len(y: &[f64], t: &[f64]) -> Result<()> {
    if y.len() != t.len() {
        return Err(FusionError::shape("loss target", y.len(), t.len()));
    }
    Ok(())
}

fn check_class(c: usize, k: usize) -> Result<usize> {
    if c >= k {
        return Err(FusionError::Contract(format!(
            "class index {c} outside [0, {k})"
        )));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff_grad;

    #[test]
    fn uniform_logits_give_ln_k() {
        for c in 0..4 {
            let (loss, _) =
                loss_and_grad(LossKind::CrossEntropy, &[0.7; 4], &Target::Class(c)).unwrap();
            assert!((loss - 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_mse() {
        let (loss, dy) =
            loss_and_grad(LossKind::Mse, &[1.0, 2.0], &Target::Values(vec![1.0, 2.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(dy, vec![0.0, 0.0]);
    }

    #[test]
    fn bce_at_zero_logit() {
        let k = 5;
        let (loss, dy) = loss_and_grad(
            LossKind::BinaryCrossEntropy,
            &vec![0.0; k],
            &Target::Values(vec![0.0; k]),
        )
        .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!(dy.iter().all(|&g| (g - 0.5 / k as f64).abs() < 1e-15));
    }

    #[test]
    fn invalid_targets() {
        assert!(loss_and_grad(LossKind::CrossEntropy, &[0.0; 3], &Target::Class(3)).is_err());
        assert!(loss_and_grad(
            LossKind::BinaryCrossEntropy,
            &[0.0; 2],
            &Target::Values(vec![0.5, 1.0])
        )
        .is_err());
        assert!(loss_and_grad(LossKind::Mse, &[0.0; 2], &Target::Values(vec![0.0])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let y = [0.3, -1.2, 2.1, 0.05];
        let cases = [
            (LossKind::Mse, Target::Values(vec![1.0, 0.5, -0.3, 0.0])),
            (LossKind::CrossEntropy, Target::Class(2)),
            (LossKind::BinaryCrossEntropy, Target::Values(vec![1.0, 0.0, 1.0, 0.0])),
            (LossKind::BinaryCrossEntropy, Target::Class(1)),
        ];
        for (kind, target) in cases {
            let (_, dy) = loss_and_grad(kind, &y, &target).unwrap();
            let fd = finite_diff_grad(|v| loss_and_grad(kind, v, &target).unwrap().0, &y, 1e-5);
            for (a, b) in dy.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-8, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, dy) =
            loss_and_grad(LossKind::CrossEntropy, &[1000.0, -1000.0], &Target::Class(1)).unwrap();
        assert!(loss.is_finite() && dy.iter().all(|g| g.is_finite()));
        let (loss, _) = loss_and_grad(
            LossKind::BinaryCrossEntropy,
            &[800.0, -800.0],
            &Target::Values(vec![0.0, 1.0]),
        )
        .unwrap();
        assert!(loss.is_finite());
    }
}
