//! Ranking metrics for binary relevance.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape("metric inputs", &[scores.len()], &[labels.len()]));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Param(format!("score {s} is not a number")));
    }
    Ok(())
}

/// Indices sorted by descending score, split into groups of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    // Walk from the lowest score up, counting negatives already passed.
    let mut negatives_below = 0usize;
    let mut wins = 0.0f64;
    for group in tie_groups(scores).iter().rev() {
        let gp = group.iter().filter(|&&i| labels[i]).count();
        let gn = group.len() - gp;
        wins += gp as f64 * (negatives_below as f64 + 0.5 * gn as f64);
        negatives_below += gn;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision: `Σ precision(k) · Δrecall(k)` over a descending-score
/// sweep in which tied scores form a single threshold.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| labels[i]).count();
        tp += gp;
        seen += group.len();
        if gp > 0 {
            ap += (tp as f64 / seen as f64) * (gp as f64 / pos as f64);
        }
    }
    Ok(ap)
}
