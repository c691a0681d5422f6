use super::{Classifier, LabeledVectors};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;

/// Majority label among the `k` nearest training rows by Euclidean distance.
///
/// Equal distances are ordered by training index, and a tied vote goes to the
/// smallest label.
pub fn knn_classify(train: &LabeledVectors, query: &[f64], k: usize) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::Data("k-nearest neighbours needs training data".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidInput(format!("k = {k} must lie in 1..={}", train.len())));
    }
    if query.len() != train.dim() {
        return Err(crate::error::shape_err(format!(
            "query has {} features, training rows have {}",
            query.len(),
            train.dim()
        )));
    }
    let mut dist: Vec<(f64, usize)> = train
        .rows()
        .enumerate()
        .map(|(i, row)| (row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, order);
    }
    let mut votes = vec![0usize; train.num_classes()];
    for &(_, i) in &dist[..k] {
        votes[train.labels()[i]] += 1;
    }
    let best = *votes.iter().max().expect("at least one class");
    Ok(votes.iter().position(|&v| v == best).expect("maximum exists"))
}

#[derive(Debug, Clone)]
pub struct Knn {
    train: LabeledVectors,
    k: usize,
}

impl Knn {
    pub fn fit(train: LabeledVectors, k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("k-nearest neighbours needs training data".into()));
        }
        if k == 0 || k > train.len() {
            return Err(Error::InvalidInput(format!("k = {k} must lie in 1..={}", train.len())));
        }
        Ok(Self { train, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl Classifier for Knn {
    fn predict(&self, query: &[f64]) -> Result<usize> {
        knn_classify(&self.train, query, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let t = LabeledVectors::new(vec![1.0, 2.0], 2, vec![7]).unwrap();
        assert_eq!(knn_classify(&t, &[100.0, -3.0], 1).unwrap(), 7);
    }

    #[test]
    fn exact_match_wins() {
        let t = LabeledVectors::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(knn_classify(&t, &[2.0], 1).unwrap(), 2);
    }

    #[test]
    fn ties_go_to_smaller_label() {
        let t = LabeledVectors::new(vec![-1.0, 1.0], 1, vec![4, 2]).unwrap();
        assert_eq!(knn_classify(&t, &[0.0], 2).unwrap(), 2);
        // Equidistant neighbours: the lower index is nearer.
        assert_eq!(knn_classify(&t, &[0.0], 1).unwrap(), 4);
    }

    #[test]
    fn errors() {
        let empty = LabeledVectors::new(vec![], 1, vec![]).unwrap();
        assert!(matches!(knn_classify(&empty, &[0.0], 1), Err(Error::Data(_))));
        let t = LabeledVectors::new(vec![0.0], 1, vec![0]).unwrap();
        assert!(knn_classify(&t, &[0.0], 2).is_err());
        assert!(knn_classify(&t, &[0.0, 1.0], 1).is_err());
    }
}
