use crate::error::{GenliError, Result};

/// Area under the ROC curve by the rank-sum formulation; tied scores share
/// their average rank, so a tied positive/negative pair counts one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GenliError::data(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(GenliError::Numerical(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(GenliError::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        let hits = idx[i..j].iter().filter(|&&t| labels[t] == 1).count();
        rank_sum += avg * hits as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Streaming collector of (score, label) pairs.
#[derive(Clone, Debug, Default)]
pub struct AucAccumulator {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl AucAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64, label: u8) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn extend(&mut self, scores: &[f64], labels: &[u8]) {
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn value(&self) -> Result<f64> {
        auc(&self.scores, &self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.7, 0.6, 0.5], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(GenliError::UndefinedMetric(_))));
    }
}
