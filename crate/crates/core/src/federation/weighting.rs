//! Aggregation weights `alpha_k` for one round.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Proportional to local sample counts.
    Fedavg,
    /// Softmax of negated mean training losses.
    #[serde(alias = "loss")]
    LossSoftmax,
    /// Softmax of `1 - wer` on each client's validation split.
    #[serde(alias = "wer")]
    WerSoftmax,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Fedavg, Strategy::LossSoftmax, Strategy::WerSoftmax];

    /// Short name used on the command line and in file names.
    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::Fedavg => "fedavg",
            Strategy::LossSoftmax => "loss",
            Strategy::WerSoftmax => "wer",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Strategy::Fedavg),
            "loss" | "loss_softmax" => Ok(Strategy::LossSoftmax),
            "wer" | "wer_softmax" => Ok(Strategy::WerSoftmax),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected fedavg, loss or wer)"
            ))),
        }
    }
}

pub fn weights_fedavg(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Precondition("no clients to weight".into()));
    }
    if counts.contains(&0) {
        return Err(Error::Precondition("client with zero samples".into()));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

pub fn weights_loss_softmax(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Precondition("non-finite client loss".into()));
    }
    softmax(losses.iter().map(|l| -l))
}

pub fn weights_wer_softmax(wers: &[f64]) -> Result<Vec<f64>> {
    if wers.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Precondition("client WER must be finite and non-negative".into()));
    }
    softmax(wers.iter().map(|w| 1.0 - w))
}

fn softmax(scores: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let scores: Vec<f64> = scores.collect();
    if scores.is_empty() {
        return Err(Error::Precondition("no clients to weight".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn fedavg_examples() {
        assert!(close(&weights_fedavg(&[2, 3, 5]).unwrap(), &[0.2, 0.3, 0.5], 1e-15));
        assert_eq!(weights_fedavg(&[7]).unwrap(), vec![1.0]);
        assert_eq!(weights_fedavg(&[1, 1, 1, 1]).unwrap(), vec![0.25; 4]);
        assert!(weights_fedavg(&[]).is_err());
    }

    #[test]
    fn loss_softmax_examples() {
        let third = 1.0 / 3.0;
        assert!(close(&weights_loss_softmax(&[4.2; 3]).unwrap(), &[third; 3], 1e-15));
        assert!(close(&weights_loss_softmax(&[0.0, 3f64.ln()]).unwrap(), &[0.75, 0.25], 1e-15));
        let e = std::f64::consts::E;
        let big = weights_loss_softmax(&[1000.0, 1001.0]).unwrap();
        assert!(close(&big, &[e / (1.0 + e), 1.0 / (1.0 + e)], 1e-12));
        assert!((big[0] - 0.7311).abs() < 1e-4);
        assert!(weights_loss_softmax(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn wer_softmax_examples() {
        assert_eq!(weights_wer_softmax(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        let e = std::f64::consts::E;
        assert!(close(
            &weights_wer_softmax(&[0.0, 1.0]).unwrap(),
            &[e / (e + 1.0), 1.0 / (e + 1.0)],
            1e-15
        ));
        assert!(close(
            &weights_wer_softmax(&[0.2, 1.2, 2.2]).unwrap(),
            &weights_wer_softmax(&[0.0, 1.0, 2.0]).unwrap(),
            1e-12
        ));
        assert!(weights_wer_softmax(&[]).is_err());
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!("loss".parse::<Strategy>().unwrap(), Strategy::LossSoftmax);
        assert_eq!("wer_softmax".parse::<Strategy>().unwrap(), Strategy::WerSoftmax);
        assert!("median".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn fedavg_is_scale_invariant(counts in prop::collection::vec(1usize..500, 1..12), c in 1usize..20) {
            let scaled: Vec<usize> = counts.iter().map(|n| n * c).collect();
            prop_assert!(close(&weights_fedavg(&counts).unwrap(), &weights_fedavg(&scaled).unwrap(), 1e-15));
        }

        #[test]
        fn softmax_raising_one_input_lowers_its_weight(
            xs in prop::collection::vec(0.0f64..5.0, 2..10),
            idx in 0usize..10,
            bump in 0.01f64..3.0,
        ) {
            let i = idx % xs.len();
            let mut raised = xs.clone();
            raised[i] += bump;
            for f in [weights_loss_softmax, weights_wer_softmax] {
                let before = f(&xs).unwrap();
                let after = f(&raised).unwrap();
                prop_assert!(after[i] < before[i]);
                for j in (0..xs.len()).filter(|&j| j != i) {
                    prop_assert!(after[j] > before[j]);
                }
            }
        }
    }
}
