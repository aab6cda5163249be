use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("undefined AUC: {positives} positive and {negatives} negative labels")]
    UndefinedAuc { positives: usize, negatives: usize },
    #[error("every entry is masked")]
    FullyMasked,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, with tied pairs counting one half. Labels are 0/1; anything
/// above 0.5 counts as positive.
pub fn rocauc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::UndefinedAuc { positives, negatives });
    }
    // sum of midranks over positives, counted in doubled units to stay exact
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] > 0.5).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * negatives as u128) as f64)
}

/// Root mean squared difference over entries where `mask` is true.
pub fn rmse(preds: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() || preds.len() != mask.len() {
        return Err(MetricError::Length(preds.len(), targets.len()));
    }
    let (mut ss, mut n) = (0.0, 0usize);
    for k in 0..preds.len() {
        if mask[k] {
            let d = preds[k] - targets[k];
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::FullyMasked);
    }
    Ok((ss / n as f64).sqrt())
}

/// Per-task metrics on one split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: crate::datasets::Metric,
    pub split: String,
    pub per_task: Vec<Option<f64>>,
    /// Mean over tasks whose metric is defined.
    pub mean: f64,
    /// Tasks left out of the mean because only one class is present.
    pub skipped_tasks: Vec<usize>,
    pub n_evaluated: usize,
    pub seed: u64,
}
