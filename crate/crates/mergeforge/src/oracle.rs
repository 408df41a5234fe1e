//! Brute-force scalar reference implementations used only by tests.
//!
//! Everything here is a direct transliteration of the merge rules over flat
//! f64 lists, written without touching any other module in this crate, so
//! the main kernels can be checked against genuinely independent code. Any
//! disagreement beyond 1e-6 is a defect.

/// Sign-election rule, mirrored locally so this module stays standalone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSignMode {
    /// Majority vote over signs.
    SumOfSigns,
    /// Vote by summed magnitude-carrying values.
    SumOfValues,
}

pub fn oracle_linear(models: &[Vec<f64>], alphas: &[f64]) -> Vec<f64> {
    let sum: f64 = alphas.iter().sum();
    let n = models[0].len();
    let mut out = vec![0.0; n];
    for (model, &alpha) in models.iter().zip(alphas) {
        for (o, &v) in out.iter_mut().zip(model) {
            *o += (alpha / sum) * v;
        }
    }
    out
}

pub fn oracle_slerp(v1: &[f64], v2: &[f64], t: f64) -> Vec<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let lerp = || -> Vec<f64> {
        v1.iter()
            .zip(v2)
            .map(|(&a, &b)| (1.0 - t) * a + t * b)
            .collect()
    };
    if t == 0.0 {
        return v1.to_vec();
    }
    if t == 1.0 {
        return v2.to_vec();
    }
    let (n1, n2) = (norm(v1), norm(v2));
    if n1 == 0.0 || n2 == 0.0 {
        return lerp();
    }
    let cos = (v1.iter().zip(v2).map(|(&a, &b)| a * b).sum::<f64>() / (n1 * n2)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega.sin() < 1e-6 || cos.abs() > 0.9995 {
        return lerp();
    }
    v1.iter()
        .zip(v2)
        .map(|(&a, &b)| {
            (((1.0 - t) * omega).sin() * a + (t * omega).sin() * b) / omega.sin()
        })
        .collect()
}

fn oracle_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn oracle_trim(values: &[f64], density: f64) -> Vec<f64> {
    let keep = ((density * values.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; values.len()];
    for &i in order.iter().take(keep) {
        out[i] = values[i];
    }
    out
}

/// The five-step consensus pipeline on deltas: subtract base, trim by
/// magnitude, elect signs, disjoint-mean the aligned values, re-add base.
pub fn oracle_ties(
    models: &[Vec<f64>],
    base: &[f64],
    density: f64,
    mode: OracleSignMode,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let weights: Vec<f64> = weights
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![1.0; models.len()]);
    let deltas: Vec<Vec<f64>> = models
        .iter()
        .map(|m| m.iter().zip(base).map(|(&v, &b)| v - b).collect())
        .collect();
    let trimmed: Vec<Vec<f64>> = deltas.iter().map(|d| oracle_trim(d, density)).collect();

    (0..base.len())
        .map(|i| {
            let vote: f64 = trimmed
                .iter()
                .zip(&weights)
                .map(|(d, &w)| match mode {
                    OracleSignMode::SumOfSigns => w * oracle_sign(d[i]),
                    OracleSignMode::SumOfValues => w * d[i],
                })
                .sum();
            let consensus = oracle_sign(vote);
            if consensus == 0.0 {
                return base[i];
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (d, &w) in trimmed.iter().zip(&weights) {
                if oracle_sign(d[i]) == consensus {
                    num += w * d[i];
                    den += w;
                }
            }
            if den == 0.0 {
                base[i]
            } else {
                base[i] + num / den
            }
        })
        .collect()
}

// Local transliteration of the counter-based dropout mask.
fn oracle_unit_sample(seed: u64, name: &str, index: u64) -> f64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for chunk in [
        seed.to_le_bytes().as_slice(),
        name.as_bytes(),
        index.to_le_bytes().as_slice(),
    ] {
        for &b in chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h = h.wrapping_add(0x9e3779b97f4a7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn oracle_dare(values: &[f64], name: &str, drop_prob: f64, seed: u64) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if oracle_unit_sample(seed, name, i as u64) >= drop_prob {
                if drop_prob == 0.0 {
                    v
                } else {
                    v / (1.0 - drop_prob)
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Dropout-and-rescale each delta, then the consensus pipeline.
#[allow(clippy::too_many_arguments)]
pub fn oracle_dare_ties(
    models: &[Vec<f64>],
    base: &[f64],
    tensor_name: &str,
    density: f64,
    mode: OracleSignMode,
    weights: Option<&[f64]>,
    drop_prob: f64,
    seed: u64,
) -> Vec<f64> {
    let weights: Vec<f64> = weights
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![1.0; models.len()]);
    let trimmed: Vec<Vec<f64>> = models
        .iter()
        .map(|m| {
            let delta: Vec<f64> = m.iter().zip(base).map(|(&v, &b)| v - b).collect();
            oracle_trim(&oracle_dare(&delta, tensor_name, drop_prob, seed), density)
        })
        .collect();

    (0..base.len())
        .map(|i| {
            let vote: f64 = trimmed
                .iter()
                .zip(&weights)
                .map(|(d, &w)| match mode {
                    OracleSignMode::SumOfSigns => w * oracle_sign(d[i]),
                    OracleSignMode::SumOfValues => w * d[i],
                })
                .sum();
            let consensus = oracle_sign(vote);
            if consensus == 0.0 {
                return base[i];
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (d, &w) in trimmed.iter().zip(&weights) {
                if oracle_sign(d[i]) == consensus {
                    num += w * d[i];
                    den += w;
                }
            }
            if den == 0.0 {
                base[i]
            } else {
                base[i] + num / den
            }
        })
        .collect()
}
