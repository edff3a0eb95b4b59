//! Toy reward-weighted-regression trainer over a tabular softmax policy.
//!
//! Contexts are hashed into a fixed number of buckets; each bucket holds one
//! logit per action template. Templates are the distinct record targets.

use std::collections::HashMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rlao::RwrRecord;

#[derive(Debug, Error, PartialEq)]
pub enum RwrError {
    #[error("loss diverged at epoch {epoch}: {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("record targets a template outside the policy vocabulary")]
    UnknownTemplate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub templates: Vec<String>,
    pub buckets: usize,
    /// Row-major: `theta[bucket * templates.len() + template]`.
    pub theta: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(templates: Vec<String>, buckets: usize) -> Self {
        let theta = vec![0.0; templates.len() * buckets];
        Self { templates, buckets, theta }
    }

    pub fn with_theta(templates: Vec<String>, buckets: usize, theta: Vec<f64>) -> Result<Self, RwrError> {
        if buckets == 0 || templates.is_empty() {
            return Err(RwrError::InvalidPolicy("need at least one bucket and one template".into()));
        }
        if theta.len() != templates.len() * buckets {
            return Err(RwrError::InvalidPolicy(format!("expected {} logits, got {}", templates.len() * buckets, theta.len())));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(RwrError::InvalidPolicy("non-finite logit".into()));
        }
        Ok(Self { templates, buckets, theta })
    }

    pub fn width(&self) -> usize {
        self.templates.len()
    }

    pub fn bucket_of(&self, context: &str) -> usize {
        let digest = Sha256::digest(context.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_be_bytes(head) % self.buckets as u64) as usize
    }

    pub fn logits(&self, bucket: usize) -> &[f64] {
        let w = self.width();
        &self.theta[bucket * w..(bucket + 1) * w]
    }

    /// Softmax over the bucket's logits.
    pub fn probs(&self, bucket: usize) -> Vec<f64> {
        let row = self.logits(bucket);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, bucket: usize, template: usize) -> f64 {
        let row = self.logits(bucket);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row[template] - lse
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyItem {
    pub bucket: usize,
    pub template: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToyBatch {
    pub items: Vec<ToyItem>,
}

/// Distinct targets in order of first appearance.
pub fn template_library(records: &[RwrRecord]) -> Vec<String> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for r in records {
        if !seen.contains_key(&r.target) {
            seen.insert(r.target.clone(), out.len());
            out.push(r.target.clone());
        }
    }
    out
}

impl ToyBatch {
    /// Maps each record to (context bucket, exact-match template, weight).
    pub fn from_records(policy: &ToyPolicy, records: &[RwrRecord]) -> Result<Self, RwrError> {
        let index: HashMap<&str, usize> = policy.templates.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let items = records
            .iter()
            .map(|r| {
                let template = *index.get(r.target.as_str()).ok_or(RwrError::UnknownTemplate)?;
                Ok(ToyItem { bucket: policy.bucket_of(&r.context), template, weight: r.weight })
            })
            .collect::<Result<_, RwrError>>()?;
        Ok(Self { items })
    }
}

/// Mean weighted negative log-likelihood; 0 for an empty batch.
pub fn rwr_loss(policy: &ToyPolicy, batch: &ToyBatch) -> f64 {
    if batch.items.is_empty() {
        return 0.0;
    }
    let total: f64 = batch.items.iter().map(|it| -it.weight * policy.log_prob(it.bucket, it.template)).sum();
    total / batch.items.len() as f64
}

/// Gradient of the summed (unaveraged) loss.
pub fn rwr_grad_sum(policy: &ToyPolicy, batch: &ToyBatch) -> Vec<f64> {
    let w = policy.width();
    let mut grad = vec![0.0; policy.theta.len()];
    for it in &batch.items {
        let p = policy.probs(it.bucket);
        for (j, pj) in p.iter().enumerate() {
            let indicator = if j == it.template { 1.0 } else { 0.0 };
            grad[it.bucket * w + j] += it.weight * (pj - indicator);
        }
    }
    grad
}

/// Gradient of [`rwr_loss`]; zero for an empty batch.
pub fn rwr_grad(policy: &ToyPolicy, batch: &ToyBatch) -> Vec<f64> {
    let mut g = rwr_grad_sum(policy, batch);
    if !batch.items.is_empty() {
        let n = batch.items.len() as f64;
        g.iter_mut().for_each(|x| *x /= n);
    }
    g
}

/// Plain gradient descent. Returns the trained policy and the loss after
/// each epoch.
pub fn train_toy(policy: &ToyPolicy, batch: &ToyBatch, lr: f64, epochs: usize) -> Result<(ToyPolicy, Vec<f64>), RwrError> {
    let mut p = policy.clone();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let g = rwr_grad(&p, batch);
        for (t, gi) in p.theta.iter_mut().zip(&g) {
            *t -= lr * gi;
        }
        let loss = rwr_loss(&p, batch);
        if !loss.is_finite() || p.theta.iter().any(|x| !x.is_finite()) {
            return Err(RwrError::DivergedLoss { epoch, loss });
        }
        curve.push(loss);
    }
    Ok((p, curve))
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy4() -> ToyPolicy {
        ToyPolicy::uniform((0..4).map(|i| format!("t{i}")).collect(), 1)
    }

    fn batch(items: &[(usize, usize, f64)]) -> ToyBatch {
        ToyBatch { items: items.iter().map(|&(bucket, template, weight)| ToyItem { bucket, template, weight }).collect() }
    }

    #[test]
    fn loss_examples() {
        let p = policy4();
        assert!((rwr_loss(&p, &batch(&[(0, 0, 1.0)])) - 1.386294).abs() < 1e-6);
        // weight * ln 4
        let heavy = rwr_loss(&p, &batch(&[(0, 0, 12.182494)]));
        assert!((heavy - 12.182494 * 4f64.ln()).abs() < 1e-9);
        assert!((heavy - 16.888523).abs() < 1e-6);
        let sure = ToyPolicy::with_theta(p.templates.clone(), 1, vec![800.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(rwr_loss(&sure, &batch(&[(0, 0, 1.0)])), 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = ToyPolicy::with_theta(vec!["a".into(), "b".into(), "c".into()], 2, vec![1.0, -3.0, 0.5, 40.0, 0.0, -40.0]).unwrap();
        for b in 0..2 {
            assert!((p.probs(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_has_zero_gradient() {
        assert!(rwr_grad(&policy4(), &ToyBatch::default()).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn duplicating_records_doubles_summed_gradient() {
        let p = ToyPolicy::with_theta(policy4().templates, 1, vec![0.3, -0.2, 0.1, 0.9]).unwrap();
        let one = batch(&[(0, 1, 3.0), (0, 2, 1.0)]);
        let two = batch(&[(0, 1, 3.0), (0, 2, 1.0), (0, 1, 3.0), (0, 2, 1.0)]);
        for (a, b) in rwr_grad_sum(&p, &one).iter().zip(rwr_grad_sum(&p, &two)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let p = policy4();
        let (trained, _) = train_toy(&p, &batch(&[(0, 0, 1.0)]), 0.0, 5).unwrap();
        assert_eq!(trained.theta, p.theta);
    }

    #[test]
    fn heavier_target_wins() {
        let p = ToyPolicy::uniform(vec!["A".into(), "B".into()], 1);
        let b = batch(&[(0, 0, 2.5f64.exp()), (0, 1, 1.0)]);
        let (trained, curve) = train_toy(&p, &b, 0.1, 200).unwrap();
        let probs = trained.probs(0);
        assert!(probs[0] > probs[1]);
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn divergence_is_reported() {
        let p = policy4();
        let b = batch(&[(0, 0, 1e308), (0, 1, 1e308)]);
        assert!(matches!(train_toy(&p, &b, 1e308, 3), Err(RwrError::DivergedLoss { .. })));
    }

    #[test]
    fn csv_header() {
        assert_eq!(loss_curve_csv(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
