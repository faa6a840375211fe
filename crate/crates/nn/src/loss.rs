//! Weighted squared-error loss and parameter penalties.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{NnError, Result};
use crate::param::Param;

/// `sum_i w_i (y_i - p_i)^2 / sum_i w_i` and its gradient with respect to the predictions.
pub fn weighted_mse(
    pred: ArrayView1<f64>,
    target: ArrayView1<f64>,
    weights: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>)> {
    if pred.len() != target.len() || pred.len() != weights.len() {
        return Err(crate::error::shape_err(
            "weighted_mse",
            format!("{} targets and weights", pred.len()),
            format!("{} targets, {} weights", target.len(), weights.len()),
        ));
    }
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return Err(NnError::NonPositiveWeightSum(total));
    }
    let mut loss = 0.0;
    let mut grad = Array1::zeros(pred.len());
    Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .and(weights)
        .for_each(|g, &p, &y, &w| {
            let e = p - y;
            loss += w * e * e;
            *g = 2.0 * w * e / total;
        });
    Ok((loss / total, grad))
}

/// `sum l1 |p| + l2 p^2` over every trainable parameter.
pub fn regularization_penalty<'a>(params: impl IntoIterator<Item = &'a Param>) -> f64 {
    params
        .into_iter()
        .filter(|p| p.trainable && !p.reg.is_zero())
        .map(|p| {
            p.value
                .iter()
                .map(|&v| p.reg.l1 * v.abs() + p.reg.l2 * v * v)
                .sum::<f64>()
        })
        .sum()
}

/// Adds the penalty gradient to each parameter's gradient. The subgradient of
/// `|p|` at zero is taken as zero.
pub fn add_regularization_grad<'a>(params: impl IntoIterator<Item = &'a mut Param>) {
    for p in params {
        if !p.trainable || p.reg.is_zero() {
            continue;
        }
        let reg = p.reg;
        Zip::from(&mut p.grad).and(&p.value).for_each(|g, &v| {
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g += reg.l1 * sign + 2.0 * reg.l2 * v;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Regularizer;
    use ndarray::{array, Array2};

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let y = array![0.3, -1.2, 2.0];
        let (l, g) = weighted_mse(y.view(), y.view(), array![1.0, 2.0, 0.5].view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_weights_give_plain_mse() {
        let p = array![1.0, 2.0, 4.0];
        let y = array![1.5, 2.0, 3.0];
        let (l, _) = weighted_mse(p.view(), y.view(), Array1::ones(3).view()).unwrap();
        let mse = (0.25 + 0.0 + 1.0) / 3.0;
        assert!((l - mse).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_weighted_case() {
        let (l, g) = weighted_mse(
            array![1.0, 0.0].view(),
            array![0.0, 0.0].view(),
            array![3.0, 1.0].view(),
        )
        .unwrap();
        assert!((l - 0.75).abs() < 1e-15);
        assert!((g[0] - 1.5).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn zero_weight_sum_is_rejected() {
        let r = weighted_mse(array![1.0].view(), array![0.0].view(), array![0.0].view());
        assert!(matches!(r, Err(NnError::NonPositiveWeightSum(_))));
    }

    #[test]
    fn penalty_formula() {
        let none = Param::new("a", array![[2.0, -3.0]]);
        assert_eq!(regularization_penalty([&none]), 0.0);
        let p = Param::new("w", array![[2.0]]).with_reg(Regularizer::l2(2e-6));
        assert!((regularization_penalty([&p]) - 8e-6).abs() < 1e-20);
        let q = Param::new("u", array![[-2.0, 0.5]]).with_reg(Regularizer::l1(0.1));
        assert!((regularization_penalty([&q]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn l1_subgradient_is_zero_at_origin() {
        let mut p = Param::new("u", Array2::from_elem((1, 3), 0.0)).with_reg(Regularizer::l1(1.0));
        p.value[[0, 1]] = -0.5;
        add_regularization_grad([&mut p]);
        assert_eq!(p.grad[[0, 0]], 0.0);
        assert_eq!(p.grad[[0, 1]], -1.0);
    }
}
