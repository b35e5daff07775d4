//! Classification rates and parameter recovery measures.
//!
//! Every measure is a per-replication mean first, then a mean across
//! replications. Omitted replications are skipped.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::matrix::BinaryMatrix;
use crate::models::{slip_guess_of, ItemParams, SlipGuess};
use crate::qmatrix::QMatrix;

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub est_profiles: BinaryMatrix,
    pub true_profiles: BinaryMatrix,
    /// `None` for methods without item parameters.
    pub est_slip_guess: Option<Vec<SlipGuess>>,
    pub true_slip_guess: Vec<SlipGuess>,
    pub omitted: bool,
}

impl ReplicationOutcome {
    fn check(&self) -> Result<()> {
        let (a, b) = (&self.est_profiles, &self.true_profiles);
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(domain(format!(
                "estimated profiles are {}x{}, true profiles {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if let Some(est) = &self.est_slip_guess {
            if est.len() != self.true_slip_guess.len() {
                return Err(Error::Dimension { expected: self.true_slip_guess.len(), got: est.len() });
            }
        }
        Ok(())
    }
}

fn used(outcomes: &[ReplicationOutcome]) -> Result<Vec<&ReplicationOutcome>> {
    let kept: Vec<_> = outcomes.iter().filter(|o| !o.omitted).collect();
    if kept.is_empty() {
        return Err(Error::EmptyCell);
    }
    for o in &kept {
        o.check()?;
    }
    let k = kept[0].true_profiles.cols();
    if kept.iter().any(|o| o.true_profiles.cols() != k) {
        return Err(domain("replications disagree on the number of attributes"));
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eacr {
    pub per_attribute: Vec<f64>,
    pub mean: f64,
}

pub fn eacr(outcomes: &[ReplicationOutcome]) -> Result<Eacr> {
    let kept = used(outcomes)?;
    let k = kept[0].true_profiles.cols();
    let mut per_attribute = vec![0.0; k];
    for o in &kept {
        let n = o.true_profiles.rows();
        for (attr, acc) in per_attribute.iter_mut().enumerate() {
            let hits = (0..n).filter(|&i| o.est_profiles.get(i, attr) == o.true_profiles.get(i, attr)).count();
            *acc += if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        }
    }
    per_attribute.iter_mut().for_each(|v| *v /= kept.len() as f64);
    let mean = per_attribute.iter().sum::<f64>() / k as f64;
    Ok(Eacr { per_attribute, mean })
}

pub fn pacr(outcomes: &[ReplicationOutcome]) -> Result<f64> {
    let kept = used(outcomes)?;
    let total: f64 = kept
        .iter()
        .map(|o| {
            let n = o.true_profiles.rows();
            let hits = (0..n).filter(|&i| o.est_profiles.row(i) == o.true_profiles.row(i)).count();
            if n == 0 {
                0.0
            } else {
                hits as f64 / n as f64
            }
        })
        .sum();
    Ok(total / kept.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Slip,
    Guess,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRmse {
    /// (bias, rmse) per item.
    pub per_item: Vec<(f64, f64)>,
    pub bias: f64,
    pub rmse: f64,
}

/// Bias and RMSE per item across replications, then averaged over items.
/// `Ok(None)` when the outcomes carry no item estimates.
pub fn bias_rmse(outcomes: &[ReplicationOutcome], which: Which) -> Result<Option<BiasRmse>> {
    let kept = used(outcomes)?;
    if kept.iter().any(|o| o.est_slip_guess.is_none()) {
        return Ok(None);
    }
    let j_count = kept[0].true_slip_guess.len();
    if kept.iter().any(|o| o.true_slip_guess.len() != j_count) {
        return Err(domain("replications disagree on the number of items"));
    }
    let pick = |sg: &SlipGuess| match which {
        Which::Slip => sg.slip,
        Which::Guess => sg.guess,
    };
    let reps = kept.len() as f64;
    let per_item: Vec<(f64, f64)> = (0..j_count)
        .map(|j| {
            let (sum, sq) = kept.iter().fold((0.0, 0.0), |(s, q), o| {
                let est = o.est_slip_guess.as_ref().expect("checked above");
                let d = pick(&est[j]) - pick(&o.true_slip_guess[j]);
                (s + d, q + d * d)
            });
            (sum / reps, (sq / reps).sqrt())
        })
        .collect();
    let bias = per_item.iter().map(|p| p.0).sum::<f64>() / j_count as f64;
    let rmse = per_item.iter().map(|p| p.1).sum::<f64>() / j_count as f64;
    Ok(Some(BiasRmse { per_item, bias, rmse }))
}

/// Slip and guess of every fitted item.
pub fn slip_guess_from_fit(params: &[ItemParams], q: &QMatrix) -> Result<Vec<SlipGuess>> {
    if params.len() != q.n_items() {
        return Err(Error::Dimension { expected: q.n_items(), got: params.len() });
    }
    params
        .iter()
        .enumerate()
        .map(|(j, p)| slip_guess_of(p, &q.row(j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[u8]]) -> BinaryMatrix {
        BinaryMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sg(slip: f64, guess: f64) -> SlipGuess {
        SlipGuess { slip, guess }
    }

    fn outcome(est: BinaryMatrix, truth: BinaryMatrix) -> ReplicationOutcome {
        ReplicationOutcome {
            est_profiles: est,
            true_profiles: truth,
            est_slip_guess: None,
            true_slip_guess: vec![],
            omitted: false,
        }
    }

    #[test]
    fn rates_on_hand_cases() {
        let truth = m(&[&[1, 0], &[0, 1]]);
        let same = outcome(truth.clone(), truth.clone());
        assert_eq!(eacr(std::slice::from_ref(&same)).unwrap().mean, 1.0);
        assert_eq!(pacr(&[same]).unwrap(), 1.0);

        let flipped = outcome(m(&[&[0, 1], &[1, 0]]), truth.clone());
        assert_eq!(eacr(std::slice::from_ref(&flipped)).unwrap().mean, 0.0);

        let one_wrong = outcome(m(&[&[1, 1], &[0, 1]]), truth);
        assert_eq!(eacr(std::slice::from_ref(&one_wrong)).unwrap().mean, 0.75);
        assert_eq!(pacr(&[one_wrong]).unwrap(), 0.5);
    }

    #[test]
    fn omitted_replications_are_skipped() {
        let truth = m(&[&[1, 0]]);
        let good = outcome(truth.clone(), truth.clone());
        let mut bad = outcome(m(&[&[0, 1]]), truth);
        bad.omitted = true;
        assert_eq!(pacr(&[good, bad.clone()]).unwrap(), 1.0);
        assert!(matches!(pacr(&[bad]), Err(Error::EmptyCell)));
    }

    fn with_sg(est: Vec<SlipGuess>, truth: Vec<SlipGuess>) -> ReplicationOutcome {
        let p = m(&[&[1]]);
        ReplicationOutcome {
            est_profiles: p.clone(),
            true_profiles: p,
            est_slip_guess: Some(est),
            true_slip_guess: truth,
            omitted: false,
        }
    }

    #[test]
    fn bias_rmse_hand_cases() {
        let exact = with_sg(vec![sg(0.1, 0.2)], vec![sg(0.1, 0.2)]);
        let r = bias_rmse(&[exact], Which::Slip).unwrap().unwrap();
        assert_eq!((r.bias, r.rmse), (0.0, 0.0));

        let offset = with_sg(vec![sg(0.2, 0.2)], vec![sg(0.1, 0.2)]);
        let r = bias_rmse(&[offset.clone(), offset], Which::Slip).unwrap().unwrap();
        assert!((r.bias - 0.1).abs() < 1e-12 && (r.rmse - 0.1).abs() < 1e-12);

        let up = with_sg(vec![sg(0.3, 0.2)], vec![sg(0.2, 0.2)]);
        let down = with_sg(vec![sg(0.1, 0.2)], vec![sg(0.2, 0.2)]);
        let r = bias_rmse(&[up, down], Which::Slip).unwrap().unwrap();
        assert!(r.bias.abs() < 1e-12 && (r.rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn np_has_no_bias() {
        let p = m(&[&[1]]);
        let o = outcome(p.clone(), p);
        assert_eq!(bias_rmse(&[o], Which::Guess).unwrap(), None);
    }

    fn arb_outcomes() -> impl Strategy<Value = Vec<ReplicationOutcome>> {
        (1usize..6, 1usize..4, 1usize..4).prop_flat_map(|(n, k, j)| {
            prop::collection::vec(
                (
                    prop::collection::vec(0u8..2, n * k),
                    prop::collection::vec(0u8..2, n * k),
                    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), j),
                    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), j),
                ),
                1..6,
            )
            .prop_map(move |reps| {
                reps.into_iter()
                    .map(|(a, b, e, t)| {
                        let to = |v: Vec<u8>| BinaryMatrix::from_rows(&v.chunks(k).map(<[u8]>::to_vec).collect::<Vec<_>>()).unwrap();
                        ReplicationOutcome {
                            est_profiles: to(a),
                            true_profiles: to(b),
                            est_slip_guess: Some(e.into_iter().map(|(s, g)| sg(s, g)).collect()),
                            true_slip_guess: t.into_iter().map(|(s, g)| sg(s, g)).collect(),
                            omitted: false,
                        }
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn pacr_never_exceeds_eacr(outs in arb_outcomes()) {
            prop_assert!(pacr(&outs).unwrap() <= eacr(&outs).unwrap().mean + 1e-12);
        }

        #[test]
        fn bias_bounded_by_rmse(outs in arb_outcomes()) {
            for which in [Which::Slip, Which::Guess] {
                let r = bias_rmse(&outs, which).unwrap().unwrap();
                for (b, e) in r.per_item {
                    prop_assert!(b * b <= e * e + 1e-12);
                }
            }
        }

        #[test]
        fn order_invariant(outs in arb_outcomes()) {
            let mut rev = outs.clone();
            rev.reverse();
            prop_assert!((eacr(&outs).unwrap().mean - eacr(&rev).unwrap().mean).abs() < 1e-12);
            prop_assert!((pacr(&outs).unwrap() - pacr(&rev).unwrap()).abs() < 1e-12);
        }
    }
}
