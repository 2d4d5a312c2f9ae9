//! Softmax, cross-entropy and the teacher/student KL term.

use ndarray::{Array2, ArrayView2, Axis};

use super::params::Real;
use crate::error::{Error, Result};

/// Row-wise tolerance on teacher probability sums.
pub const PROB_SUM_TOL: f64 = 1e-6;

fn log_sum_exp<R: Real>(row: ndarray::ArrayView1<'_, R>) -> R {
    let max = row.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&x| (x - max).exp()).sum::<R>().ln()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<R: Real>(logits: ArrayView2<'_, R>) -> Array2<R> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

pub fn log_softmax_rows<R: Real>(logits: ArrayView2<'_, R>) -> Array2<R> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lse = log_sum_exp(row.view());
        row.mapv_inplace(|x| x - lse);
    }
    out
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for a batch of {rows}", labels.len())));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Data(format!(
            "label {y} at position {i} is outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Checks that every teacher row is a probability vector.
pub fn check_teacher<R: Real>(teacher: ArrayView2<'_, R>) -> Result<()> {
    for (i, row) in teacher.axis_iter(Axis(0)).enumerate() {
        let mut sum = 0.0f64;
        for &p in row {
            let p = p.to_f64().unwrap_or(f64::NAN);
            if !(p >= 0.0) {
                return Err(Error::Data(format!("teacher row {i} has entry {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Data(format!("teacher row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch.
pub fn softmax_cross_entropy<R: Real>(logits: ArrayView2<'_, R>, labels: &[usize]) -> Result<R> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    let n = logits.nrows();
    if n == 0 {
        return Ok(R::zero());
    }
    let total: R = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    // lse >= z_y analytically; clamp away rounding below zero
    Ok((total / R::from_usize(n).unwrap()).max(R::zero()))
}

/// Mean over rows of KL(teacher || softmax(student_logits)).
pub fn kl_divergence<R: Real>(teacher_probs: ArrayView2<'_, R>, student_logits: ArrayView2<'_, R>) -> Result<R> {
    if teacher_probs.dim() != student_logits.dim() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher_probs.dim(),
            student_logits.dim()
        )));
    }
    check_teacher(teacher_probs)?;
    let n = student_logits.nrows();
    if n == 0 {
        return Ok(R::zero());
    }
    Ok(kl_unchecked(teacher_probs, student_logits) / R::from_usize(n).unwrap())
}

/// Sum (not mean) of per-row KL; inputs assumed validated.
pub(crate) fn kl_unchecked<R: Real>(teacher: ArrayView2<'_, R>, logits: ArrayView2<'_, R>) -> R {
    let mut total = R::zero();
    for (p_row, z_row) in teacher.axis_iter(Axis(0)).zip(logits.axis_iter(Axis(0))) {
        let lse = log_sum_exp(z_row);
        let mut row_kl = R::zero();
        for (&p, &z) in p_row.iter().zip(z_row.iter()) {
            if p > R::zero() {
                row_kl += p * (p.ln() - (z - lse));
            }
        }
        total += row_kl.max(R::zero());
    }
    total
}
