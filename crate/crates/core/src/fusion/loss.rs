use crate::{Error, Result, Scalar};

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub mon: T,
    pub lin: T,
}

fn check<T>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("pred has {} items, gt has {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("loss over an empty batch".into()));
    }
    Ok(())
}

/// Pairwise rank hinge: `(1/m²) Σ_ij max(0, |q_i−q_j| − f_ij·(q̂_i−q̂_j))`
/// with `f_ij = +1` when `q_i ≥ q_j`, else `−1`. Returns the value and
/// `∂/∂pred`.
pub fn loss_mon_grad<T: Scalar>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    check(pred, gt)?;
    let m = pred.len();
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); m];
    for i in 0..m {
        for j in 0..m {
            let f = if gt[i] >= gt[j] { T::one() } else { -T::one() };
            let term = (gt[i] - gt[j]).abs() - f * (pred[i] - pred[j]);
            if term > T::zero() {
                sum += term;
                grad[i] -= f;
                grad[j] += f;
            }
        }
    }
    let scale = T::one() / T::of((m * m) as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((sum * scale, grad))
}

pub fn loss_mon<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    Ok(loss_mon_grad(pred, gt)?.0)
}

/// `(1 − ρ)/2` with ρ the Pearson correlation of the batch. A batch of one,
/// or one with zero variance, has no correlation: the loss is 0.5 with zero
/// gradient and a warning.
pub fn loss_lin_grad<T: Scalar>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    check(pred, gt)?;
    let m = pred.len();
    let half = T::of(0.5);
    let n = T::of(m as f64);
    let mp = pred.iter().copied().sum::<T>() / n;
    let mg = gt.iter().copied().sum::<T>() / n;
    let a: Vec<T> = pred.iter().map(|&p| p - mp).collect();
    let b: Vec<T> = gt.iter().map(|&q| q - mg).collect();
    let saa = a.iter().map(|&x| x * x).sum::<T>();
    let sbb = b.iter().map(|&x| x * x).sum::<T>();
    if m < 2 || saa == T::zero() || sbb == T::zero() {
        log::warn!("linearity loss undefined for this batch (n={m} or zero variance); using 0.5");
        return Ok((half, vec![T::zero(); m]));
    }
    let sab = a.iter().zip(&b).map(|(&x, &y)| x * y).sum::<T>();
    let (na, nb) = (saa.sqrt(), sbb.sqrt());
    let rho = sab / (na * nb);
    let grad = a
        .iter()
        .zip(&b)
        .map(|(&ai, &bi)| -half * (bi / (na * nb) - rho * ai / saa))
        .collect();
    Ok(((T::one() - rho) * half, grad))
}

pub fn loss_lin<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    Ok(loss_lin_grad(pred, gt)?.0)
}

/// `alpha·loss_mon + beta·loss_lin` and its gradient with respect to `pred`.
pub fn total_loss_grad<T: Scalar>(pred: &[T], gt: &[T], alpha: T, beta: T) -> Result<(LossParts<T>, Vec<T>)> {
    let (mon, gm) = loss_mon_grad(pred, gt)?;
    let (lin, gl) = loss_lin_grad(pred, gt)?;
    let grad = gm.iter().zip(&gl).map(|(&x, &y)| alpha * x + beta * y).collect();
    Ok((LossParts { total: alpha * mon + beta * lin, mon, lin }, grad))
}

pub fn total_loss<T: Scalar>(pred: &[T], gt: &[T], alpha: T, beta: T) -> Result<T> {
    Ok(total_loss_grad(pred, gt, alpha, beta)?.0.total)
}
