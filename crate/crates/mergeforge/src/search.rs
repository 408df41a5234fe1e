//! Exhaustive coefficient sweeps: enumerate a grid of candidate merges,
//! materialize and score each one, and emit a ranked report.

use crate::error::{Error, Result};
use crate::mergecore::{
    dare_ties_merge, linear_merge, slerp_merge, ties_merge, DareOptions, MergeWeights,
    TiesOptions,
};
use crate::tensorio::TensorArchive;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default sweep values. The endpoints and midpoint are exact; the two
/// remaining values are thirds so that ratios of grid values coincide where
/// they should (e.g. 1/3 : 2/3 and 1/2 : 1 normalize identically).
pub fn default_grid_values() -> Vec<f64> {
    vec![0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMethod {
    Linear,
    Slerp,
    Ties,
    DareTies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub values: Vec<f64>,
    pub method: GridMethod,
    pub arity: usize,
}

impl GridSpec {
    pub fn new(values: Vec<f64>, method: GridMethod, arity: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::BadGrid("value set is empty".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::BadGrid("values must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadGrid("values must be strictly increasing".into()));
        }
        if arity < 2 {
            return Err(Error::BadGrid("arity must be at least 2".into()));
        }
        if method == GridMethod::Slerp && arity != 2 {
            return Err(Error::BadGrid("slerp sweeps take exactly two models".into()));
        }
        Ok(GridSpec {
            values,
            method,
            arity,
        })
    }
}

/// One point of the sweep: the coefficient tuple to merge with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub coefficients: Vec<f64>,
}

fn tuples(values: &[f64], arity: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut t = prefix.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Enumerate candidates. Linear tuples are normalized to sum 1 and
/// deduplicated (1e-9 tolerance, first occurrence kept); slerp yields one
/// candidate per value; consensus methods keep the raw tuples as election
/// weights. The all-zero tuple is always excluded.
pub fn enumerate_grid(grid: &GridSpec) -> Result<Vec<Candidate>> {
    if grid.method == GridMethod::Slerp {
        return Ok(grid
            .values
            .iter()
            .map(|&t| Candidate {
                coefficients: vec![t],
            })
            .collect());
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for tuple in tuples(&grid.values, grid.arity) {
        let sum: f64 = tuple.iter().sum();
        if sum == 0.0 {
            continue;
        }
        let coefficients = match grid.method {
            GridMethod::Linear => tuple.iter().map(|v| v / sum).collect(),
            _ => tuple,
        };
        let duplicate = grid.method == GridMethod::Linear
            && candidates.iter().any(|c| {
                c.coefficients
                    .iter()
                    .zip(&coefficients)
                    .all(|(a, b)| (a - b).abs() <= 1e-9)
            });
        if !duplicate {
            candidates.push(Candidate { coefficients });
        }
    }
    Ok(candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "UPPERCASE")]
pub enum CandidateStatus {
    Scored,
    Failed { reason: String },
    Unscored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub candidate: Candidate,
    pub scores: Option<BTreeMap<String, f64>>,
    pub rank_score: Option<f64>,
    #[serde(flatten)]
    pub status: CandidateStatus,
}

/// Method options shared by every candidate of one sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: GridSpec,
    pub ties: TiesOptions,
    pub dare: DareOptions,
}

fn materialize(
    cfg: &SweepConfig,
    candidate: &Candidate,
    models: &[&TensorArchive],
    base: Option<&TensorArchive>,
) -> Result<TensorArchive> {
    let need_base = || {
        base.ok_or_else(|| Error::InvariantViolation("consensus sweep needs a base model".into()))
    };
    match cfg.grid.method {
        GridMethod::Linear => linear_merge(
            models,
            &MergeWeights::new(candidate.coefficients.clone())?,
        ),
        GridMethod::Slerp => slerp_merge(models[0], models[1], candidate.coefficients[0]),
        GridMethod::Ties => {
            let opts = TiesOptions {
                weights: Some(candidate.coefficients.clone()),
                ..cfg.ties.clone()
            };
            ties_merge(models, need_base()?, &opts)
        }
        GridMethod::DareTies => {
            let opts = TiesOptions {
                weights: Some(candidate.coefficients.clone()),
                ..cfg.ties.clone()
            };
            dare_ties_merge(models, need_base()?, &opts, &cfg.dare)
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("grid coefficients are finite") {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn rank_rows(mut rows: Vec<SweepRow>) -> Vec<SweepRow> {
    rows.sort_by(|a, b| match (a.rank_score, b.rank_score) {
        (Some(x), Some(y)) => y
            .partial_cmp(&x)
            .unwrap()
            .then_with(|| lex_cmp(&a.candidate.coefficients, &b.candidate.coefficients)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => lex_cmp(&a.candidate.coefficients, &b.candidate.coefficients),
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

/// Combined ranking key: mean of the general score and the negated absolute
/// safety gap, so high general performance and a safety score near the
/// target both pull a candidate up.
pub fn rank_score(scores: &BTreeMap<String, f64>) -> Option<f64> {
    let general = scores.get("general")?;
    let safety = scores.get("safety")?;
    Some((general - safety.abs()) / 2.0)
}

/// Materialize and score every candidate. A failing candidate is marked
/// FAILED and does not abort the sweep; ordering is deterministic for a
/// fixed evaluator and seed.
pub fn run_sweep<E>(
    cfg: &SweepConfig,
    candidates: &[Candidate],
    models: &[&TensorArchive],
    base: Option<&TensorArchive>,
    evaluator: E,
) -> Vec<SweepRow>
where
    E: Fn(&TensorArchive) -> Result<BTreeMap<String, f64>>,
{
    let rows = candidates
        .iter()
        .map(|candidate| {
            let outcome = materialize(cfg, candidate, models, base)
                .and_then(|merged| evaluator(&merged))
                .and_then(|scores| {
                    rank_score(&scores)
                        .map(|r| (scores, r))
                        .ok_or_else(|| {
                            Error::MissingScores(
                                "evaluator must produce \"safety\" and \"general\"".into(),
                            )
                        })
                });
            match outcome {
                Ok((scores, r)) => SweepRow {
                    rank: 0,
                    candidate: candidate.clone(),
                    scores: Some(scores),
                    rank_score: Some(r),
                    status: CandidateStatus::Scored,
                },
                Err(e) => SweepRow {
                    rank: 0,
                    candidate: candidate.clone(),
                    scores: None,
                    rank_score: None,
                    status: CandidateStatus::Failed {
                        reason: e.to_string(),
                    },
                },
            }
        })
        .collect();
    rank_rows(rows)
}

/// Rank candidates against an externally produced scores table instead of
/// materializing merges. Candidates without a matching entry are UNSCORED.
pub fn join_scores(
    candidates: &[Candidate],
    scores: &[(Vec<f64>, BTreeMap<String, f64>)],
) -> Vec<SweepRow> {
    let rows = candidates
        .iter()
        .map(|candidate| {
            let hit = scores.iter().find(|(coeffs, _)| {
                coeffs.len() == candidate.coefficients.len()
                    && coeffs
                        .iter()
                        .zip(&candidate.coefficients)
                        .all(|(a, b)| (a - b).abs() <= 1e-9)
            });
            match hit {
                Some((_, s)) => {
                    let r = rank_score(s);
                    SweepRow {
                        rank: 0,
                        candidate: candidate.clone(),
                        scores: Some(s.clone()),
                        rank_score: r,
                        status: if r.is_some() {
                            CandidateStatus::Scored
                        } else {
                            CandidateStatus::Failed {
                                reason: "scores file lacks safety/general".into(),
                            }
                        },
                    }
                }
                None => SweepRow {
                    rank: 0,
                    candidate: candidate.clone(),
                    scores: None,
                    rank_score: None,
                    status: CandidateStatus::Unscored,
                },
            }
        })
        .collect();
    rank_rows(rows)
}

/// Tab-separated report, one row per candidate.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("rank\tcoefficients\tsafety\tgeneral\trank_score\tstatus\n");
    for row in rows {
        let coeffs = row
            .candidate
            .coefficients
            .iter()
            .map(|c| format!("{c:.6}"))
            .collect::<Vec<_>>()
            .join(",");
        let metric = |key: &str| {
            row.scores
                .as_ref()
                .and_then(|s| s.get(key))
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into())
        };
        let status = match &row.status {
            CandidateStatus::Scored => "OK".to_string(),
            CandidateStatus::Failed { reason } => format!("FAILED: {reason}"),
            CandidateStatus::Unscored => "UNSCORED".to_string(),
        };
        let rank_score = row
            .rank_score
            .map(|r| format!("{r:.6}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            row.rank,
            coeffs,
            metric("safety"),
            metric("general"),
            rank_score,
            status
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::Tensor;

    fn one_tensor(values: &[f32]) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w", Tensor::f32(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        a
    }

    #[test]
    fn slerp_grid_has_one_candidate_per_value() {
        let g = GridSpec::new(default_grid_values(), GridMethod::Slerp, 2).unwrap();
        let c = enumerate_grid(&g).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c[1].coefficients, vec![1.0 / 3.0]);
    }

    #[test]
    fn linear_grid_dedups_after_normalization() {
        let g = GridSpec::new(default_grid_values(), GridMethod::Linear, 2).unwrap();
        let c = enumerate_grid(&g).unwrap();
        assert_eq!(c.len(), 11);
        for cand in &c {
            let sum: f64 = cand.coefficients.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_grid_keeps_raw_tuples_without_all_zero() {
        let g = GridSpec::new(vec![0.0, 1.0], GridMethod::Ties, 2).unwrap();
        let c = enumerate_grid(&g).unwrap();
        let tuples: Vec<Vec<f64>> = c.into_iter().map(|c| c.coefficients).collect();
        assert_eq!(tuples, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn grid_count_matches_closed_form() {
        for arity in [2usize, 3] {
            let g = GridSpec::new(default_grid_values(), GridMethod::Ties, arity).unwrap();
            assert_eq!(enumerate_grid(&g).unwrap().len(), 5usize.pow(arity as u32) - 1);
        }
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(GridSpec::new(vec![], GridMethod::Linear, 2).is_err());
        assert!(GridSpec::new(vec![0.5, 0.3], GridMethod::Linear, 2).is_err());
        assert!(GridSpec::new(vec![0.0, 1.2], GridMethod::Linear, 2).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0], GridMethod::Slerp, 3).is_err());
    }

    fn l2(a: &TensorArchive, b: &TensorArchive) -> f64 {
        a.iter()
            .map(|(name, t)| {
                t.data()
                    .iter()
                    .zip(b.get(name).unwrap().data())
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn sweep_recovers_known_combination() {
        let m1 = one_tensor(&[1.0, 0.0, 2.0]);
        let m2 = one_tensor(&[0.0, 1.0, -2.0]);
        // target is the 2/3 : 1/3 combination, which the default grid contains
        let target = linear_merge(
            &[&m1, &m2],
            &MergeWeights::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap(),
        )
        .unwrap();
        let cfg = SweepConfig {
            grid: GridSpec::new(default_grid_values(), GridMethod::Linear, 2).unwrap(),
            ties: TiesOptions::default(),
            dare: DareOptions {
                drop_prob: 0.0,
                rng_seed: 0,
            },
        };
        let candidates = enumerate_grid(&cfg.grid).unwrap();
        let rows = run_sweep(&cfg, &candidates, &[&m1, &m2], None, |merged| {
            let mut s = BTreeMap::new();
            s.insert("general".to_string(), -l2(merged, &target));
            s.insert("safety".to_string(), 0.0);
            Ok(s)
        });
        assert!(matches!(rows[0].status, CandidateStatus::Scored));
        assert!((rows[0].candidate.coefficients[0] - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn equal_scores_rank_lexicographically() {
        let m1 = one_tensor(&[1.0]);
        let m2 = one_tensor(&[2.0]);
        let cfg = SweepConfig {
            grid: GridSpec::new(default_grid_values(), GridMethod::Slerp, 2).unwrap(),
            ties: TiesOptions::default(),
            dare: DareOptions {
                drop_prob: 0.0,
                rng_seed: 0,
            },
        };
        let candidates = enumerate_grid(&cfg.grid).unwrap();
        let rows = run_sweep(&cfg, &candidates, &[&m1, &m2], None, |_| {
            let mut s = BTreeMap::new();
            s.insert("general".to_string(), 1.0);
            s.insert("safety".to_string(), 0.0);
            Ok(s)
        });
        let coeffs: Vec<f64> = rows.iter().map(|r| r.candidate.coefficients[0]).collect();
        let mut sorted = coeffs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(coeffs, sorted);
    }

    #[test]
    fn failed_candidate_does_not_abort_sweep() {
        let m1 = one_tensor(&[1.0]);
        let m2 = one_tensor(&[2.0]);
        let cfg = SweepConfig {
            grid: GridSpec::new(default_grid_values(), GridMethod::Slerp, 2).unwrap(),
            ties: TiesOptions::default(),
            dare: DareOptions {
                drop_prob: 0.0,
                rng_seed: 0,
            },
        };
        let candidates = enumerate_grid(&cfg.grid).unwrap();
        let rows = run_sweep(&cfg, &candidates, &[&m1, &m2], None, |merged| {
            let v = merged.get("w").unwrap().data()[0] as f64;
            if (v - 1.0).abs() < 1e-9 {
                Err(Error::MissingScores("degenerate".into()))
            } else {
                let mut s = BTreeMap::new();
                s.insert("general".to_string(), v);
                s.insert("safety".to_string(), 0.0);
                Ok(s)
            }
        });
        let failed = rows
            .iter()
            .filter(|r| matches!(r.status, CandidateStatus::Failed { .. }))
            .count();
        assert_eq!(failed, 1);
        assert_eq!(rows.len(), 5);
        // failed rows sink to the bottom
        assert!(matches!(
            rows.last().unwrap().status,
            CandidateStatus::Failed { .. }
        ));
    }

    #[test]
    fn join_marks_missing_candidates_unscored() {
        let candidates = vec![
            Candidate {
                coefficients: vec![0.0],
            },
            Candidate {
                coefficients: vec![0.5],
            },
        ];
        let mut s = BTreeMap::new();
        s.insert("general".to_string(), 70.0);
        s.insert("safety".to_string(), -50.0);
        let rows = join_scores(&candidates, &[(vec![0.5], s)]);
        assert!(matches!(rows[0].status, CandidateStatus::Scored));
        assert!(matches!(rows[1].status, CandidateStatus::Unscored));
    }
}
