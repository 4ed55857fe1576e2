use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncertaintyMetric {
    #[serde(rename = "varR", alias = "var_r")]
    VarR,
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "bald")]
    Bald,
}

impl UncertaintyMetric {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMetric::VarR => "varR",
            UncertaintyMetric::Entropy => "entropy",
            UncertaintyMetric::Bald => "bald",
        }
    }
}

fn entropy(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Scores one stack of stochastic softmax outputs (`passes x D`).
pub fn uncertainty_score(stack: &Array2<f64>, metric: UncertaintyMetric) -> Result<f64> {
    let k = stack.nrows();
    if k == 0 || (k < 2 && metric != UncertaintyMetric::Entropy) {
        return Err(Error::invalid(format!("{} needs at least 2 passes", metric.name())));
    }
    let mean = stack.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Ok(match metric {
        UncertaintyMetric::VarR => {
            let mut counts = vec![0usize; stack.ncols()];
            for row in stack.rows() {
                counts[argmax(row.iter().copied())] += 1;
            }
            1.0 - *counts.iter().max().expect("classes") as f64 / k as f64
        }
        UncertaintyMetric::Entropy => entropy(mean.iter().copied()),
        UncertaintyMetric::Bald => {
            let expected: f64 = stack
                .rows()
                .into_iter()
                .map(|r| entropy(r.iter().copied()))
                .sum::<f64>()
                / k as f64;
            entropy(mean.iter().copied()) - expected
        }
    })
}

pub fn uncertainty_scores(stacks: &[Array2<f64>], metric: UncertaintyMetric) -> Result<Vec<f64>> {
    stacks.iter().map(|s| uncertainty_score(s, metric)).collect()
}

/// Positions of the `p` largest scores, ties to the lowest position.
pub fn top_p(scores: &[f64], p: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(p);
    order
}

/// `p` of `unlabeled` uniformly without replacement.
pub fn baseline_random(unlabeled: &[usize], p: usize, seed: u64) -> Result<Vec<usize>> {
    if p > unlabeled.len() {
        return Err(Error::invalid(format!(
            "pool of {p} from {} unlabeled points",
            unlabeled.len()
        )));
    }
    let mut r = rng::rng(rng::derive(seed, "random-baseline"));
    Ok(index::sample(&mut r, unlabeled.len(), p)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect())
}
