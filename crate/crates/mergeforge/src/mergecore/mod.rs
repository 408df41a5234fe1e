//! The four merge algorithms as pure per-tensor kernels plus whole-archive
//! drivers: linear weighted averaging, spherical linear interpolation,
//! sign-consensus (TIES) merging and drop-and-rescale (DARE) on top of it.
//!
//! All arithmetic runs in f64 over the f32 payloads and is cast back to f32
//! at the end; output tensors take the dtype of the first input model.

pub mod mask;

use crate::error::{Error, Result};
use crate::tensorio::{validate_compat, Tensor, TensorArchive};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Sign-election rule for consensus merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    /// Majority vote over signs: s = sign(sum_i w_i * sign(d_i)).
    Paper,
    /// Vote by mass: s = sign(sum_i w_i * d_i).
    Mass,
}

/// Whether the TIES pipeline runs on task-vector deltas against a base or
/// directly on raw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyTo {
    Deltas,
    Raw,
}

/// Per-model coefficients for linear merging; normalized to sum 1 before use.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights {
    alphas: Vec<f64>,
}

impl MergeWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.iter().any(|&a| !a.is_finite() || a < 0.0) {
            return Err(Error::InvariantViolation(
                "merge weights must be finite and non-negative".into(),
            ));
        }
        Ok(MergeWeights { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Alphas scaled to sum exactly 1 within 1e-9.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let sum: f64 = self.alphas.iter().sum();
        if sum == 0.0 {
            return Err(Error::ZeroWeightSum);
        }
        Ok(self.alphas.iter().map(|a| a / sum).collect())
    }
}

/// Per-tensor delta of a fine-tuned checkpoint against its base.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    deltas: BTreeMap<String, Tensor>,
    base_id: String,
}

impl TaskVector {
    pub fn deltas(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.deltas.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.deltas.get(name)
    }

    pub fn base_id(&self) -> &str {
        &self.base_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiesOptions {
    pub density: f64,
    pub sign_mode: SignMode,
    pub weights: Option<Vec<f64>>,
    pub apply_to: ApplyTo,
}

impl Default for TiesOptions {
    fn default() -> Self {
        TiesOptions {
            density: 0.5,
            sign_mode: SignMode::Paper,
            weights: None,
            apply_to: ApplyTo::Deltas,
        }
    }
}

impl TiesOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvariantViolation(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareOptions {
    pub drop_prob: f64,
    pub rng_seed: u64,
}

impl DareOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_prob >= 0.0 && self.drop_prob < 1.0) {
            return Err(Error::InvariantViolation(format!(
                "drop_prob must be in [0, 1), got {}",
                self.drop_prob
            )));
        }
        Ok(())
    }
}

fn check_compat(archives: &[&TensorArchive]) -> Result<()> {
    let report = validate_compat(archives);
    if report.is_ok() {
        Ok(())
    } else {
        Err(Error::IncompatibleArchives(format!(
            "{} structural mismatches, first: {:?}",
            report.issues.len(),
            report.issues[0]
        )))
    }
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn from_f64(values: &[f64], shape: &[usize], like: &Tensor) -> Tensor {
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    Tensor::f32(shape.to_vec(), data)
        .expect("kernel preserves element count")
        .cast(like.dtype())
}

/// Per tensor: model − base, elementwise in f32.
pub fn compute_delta(model: &TensorArchive, base: &TensorArchive) -> Result<TaskVector> {
    check_compat(&[model, base])?;
    let mut deltas = BTreeMap::new();
    for (name, t) in model.iter() {
        let b = base.get(name).expect("compat checked");
        let data: Vec<f32> = t
            .data()
            .iter()
            .zip(b.data())
            .map(|(&m, &b)| (m as f64 - b as f64) as f32)
            .collect();
        deltas.insert(name.to_string(), Tensor::f32(t.shape().to_vec(), data)?);
    }
    Ok(TaskVector {
        deltas,
        base_id: base.model_id().to_string(),
    })
}

/// Inverse of [`compute_delta`]: base + delta per tensor.
pub fn apply_delta(base: &TensorArchive, delta: &TaskVector) -> Result<TensorArchive> {
    let mut out = TensorArchive::new();
    for (name, b) in base.iter() {
        let d = delta
            .get(name)
            .ok_or_else(|| Error::IncompatibleArchives(format!("delta missing tensor {name:?}")))?;
        if d.shape() != b.shape() {
            return Err(Error::IncompatibleArchives(format!(
                "shape mismatch on {name:?}"
            )));
        }
        let data: Vec<f32> = b
            .data()
            .iter()
            .zip(d.data())
            .map(|(&b, &d)| (b as f64 + d as f64) as f32)
            .collect();
        out.insert(name, Tensor::f32(b.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

/// Elementwise weighted sum with normalized alphas. Summation order is fixed
/// by sorted model id so permuting (models, alphas) together cannot change
/// the result; exact-zero weights contribute no term, making one-hot alphas
/// an exact identity.
pub fn linear_merge(models: &[&TensorArchive], weights: &MergeWeights) -> Result<TensorArchive> {
    if models.len() < 2 {
        return Err(Error::InvariantViolation(
            "linear merge needs at least two models".into(),
        ));
    }
    if models.len() != weights.alphas().len() {
        return Err(Error::InvariantViolation(format!(
            "{} models but {} alphas",
            models.len(),
            weights.alphas().len()
        )));
    }
    check_compat(models)?;
    let alphas = weights.normalized()?;

    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by_key(|&i| models[i].model_id().to_string());

    let names: Vec<&str> = models[0].names().collect();
    let merged: Vec<(String, Tensor)> = names
        .par_iter()
        .map(|&name| {
            let first = models[0].get(name).expect("name from model 0");
            let mut acc: Option<Vec<f64>> = None;
            for &i in &order {
                let alpha = alphas[i];
                if alpha == 0.0 {
                    continue;
                }
                let data = models[i].get(name).expect("compat checked").data();
                match acc.as_mut() {
                    None => acc = Some(data.iter().map(|&v| alpha * v as f64).collect()),
                    Some(acc) => {
                        for (a, &v) in acc.iter_mut().zip(data) {
                            *a += alpha * v as f64;
                        }
                    }
                }
            }
            let acc = acc.expect("normalized weights cannot all be zero");
            (name.to_string(), from_f64(&acc, first.shape(), first))
        })
        .collect();

    let mut out = TensorArchive::new();
    for (name, tensor) in merged {
        out.insert(name, tensor)?;
    }
    Ok(out)
}

fn slerp_kernel(v1: &[f64], v2: &[f64], t: f64) -> Vec<f64> {
    let linear = |t: f64| -> Vec<f64> {
        v1.iter()
            .zip(v2)
            .map(|(&a, &b)| (1.0 - t) * a + t * b)
            .collect()
    };
    let n1 = v1.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let n2 = v2.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return linear(t);
    }
    let dot: f64 = v1.iter().zip(v2).map(|(&a, &b)| a * b).sum();
    let cos = (dot / (n1 * n2)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let sin_omega = omega.sin();
    if sin_omega < 1e-6 || cos.abs() > 0.9995 {
        return linear(t);
    }
    let a = (((1.0 - t) * omega).sin()) / sin_omega;
    let b = ((t * omega).sin()) / sin_omega;
    v1.iter().zip(v2).map(|(&x, &y)| a * x + b * y).collect()
}

/// Spherical interpolation between exactly two models with a per-tensor
/// coefficient. The angle comes from unit-normalized copies, the
/// interpolation is applied to the original tensors, and nearly colinear or
/// zero-norm pairs fall back to plain linear interpolation. `t = 0` returns
/// model 1 exactly and `t = 1` model 2.
pub fn slerp_merge_with<F>(
    m1: &TensorArchive,
    m2: &TensorArchive,
    t_for: F,
) -> Result<TensorArchive>
where
    F: Fn(&str) -> f64 + Sync,
{
    check_compat(&[m1, m2])?;
    let names: Vec<&str> = m1.names().collect();
    let merged: Vec<(String, Result<Tensor>)> = names
        .par_iter()
        .map(|&name| {
            let t1 = m1.get(name).expect("name from model 1");
            let t2 = m2.get(name).expect("compat checked");
            let t = t_for(name);
            let tensor = if !(0.0..=1.0).contains(&t) {
                Err(Error::BadCoefficient(t))
            } else if t == 0.0 {
                Ok(t1.clone())
            } else if t == 1.0 {
                Ok(t2.clone().cast(t1.dtype()))
            } else {
                let out = slerp_kernel(&to_f64(t1), &to_f64(t2), t);
                Ok(from_f64(&out, t1.shape(), t1))
            };
            (name.to_string(), tensor)
        })
        .collect();

    let mut out = TensorArchive::new();
    for (name, tensor) in merged {
        out.insert(name, tensor?)?;
    }
    Ok(out)
}

pub fn slerp_merge(m1: &TensorArchive, m2: &TensorArchive, t: f64) -> Result<TensorArchive> {
    slerp_merge_with(m1, m2, |_| t)
}

/// Number of entries kept by magnitude trimming.
fn trim_count(density: f64, n: usize) -> usize {
    // nudge below the product so exact integer multiples are not rounded up
    ((density * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn trim_kernel(values: &[f64], density: f64) -> Vec<f64> {
    let k = trim_count(density, values.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // largest magnitude first, ties broken by lower flat index
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; values.len()];
    for &i in idx.iter().take(k) {
        out[i] = values[i];
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn elect_kernel(deltas: &[Vec<f64>], mode: SignMode, weights: &[f64]) -> Vec<f64> {
    let n = deltas[0].len();
    (0..n)
        .map(|i| {
            let total: f64 = deltas
                .iter()
                .zip(weights)
                .map(|(d, &w)| match mode {
                    SignMode::Paper => w * sign(d[i]),
                    SignMode::Mass => w * d[i],
                })
                .sum();
            sign(total)
        })
        .collect()
}

fn disjoint_kernel(deltas: &[Vec<f64>], signs: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = signs.len();
    (0..n)
        .map(|i| {
            if signs[i] == 0.0 {
                return 0.0;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (d, &w) in deltas.iter().zip(weights) {
                // zero-valued deltas never align with a nonzero consensus
                if sign(d[i]) == signs[i] {
                    num += w * d[i];
                    den += w;
                }
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect()
}

/// Keep the ⌈density·n⌉ largest-magnitude entries, zero the rest.
pub fn trim_by_magnitude(delta: &Tensor, density: f64) -> Tensor {
    let out = trim_kernel(&to_f64(delta), density);
    from_f64(&out, delta.shape(), delta)
}

/// Consensus sign vector with values in {−1, 0, +1}.
pub fn elect_signs(deltas: &[&Tensor], mode: SignMode, weights: Option<&[f64]>) -> Tensor {
    let vals: Vec<Vec<f64>> = deltas.iter().map(|t| to_f64(t)).collect();
    let w = weights
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![1.0; deltas.len()]);
    let out = elect_kernel(&vals, mode, &w);
    Tensor::f32(deltas[0].shape().to_vec(), out.iter().map(|&v| v as f32).collect())
        .expect("kernel preserves element count")
}

/// Weighted mean of the delta values whose sign matches the consensus.
pub fn disjoint_merge(deltas: &[&Tensor], signs: &Tensor, weights: Option<&[f64]>) -> Tensor {
    let vals: Vec<Vec<f64>> = deltas.iter().map(|t| to_f64(t)).collect();
    let s = to_f64(signs);
    let w = weights
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![1.0; deltas.len()]);
    let out = disjoint_kernel(&vals, &s, &w);
    from_f64(&out, deltas[0].shape(), deltas[0])
}

/// Zero each element with probability `drop_prob` using the deterministic
/// counter-based mask for (seed, tensor name, flat index); survivors are
/// scaled by 1/(1−p) so the expectation is preserved.
pub fn dare_drop_rescale(delta: &Tensor, tensor_name: &str, opts: &DareOptions) -> Tensor {
    let out = dare_kernel(&to_f64(delta), tensor_name, opts);
    from_f64(&out, delta.shape(), delta)
}

fn dare_kernel(values: &[f64], tensor_name: &str, opts: &DareOptions) -> Vec<f64> {
    let scale = 1.0 / (1.0 - opts.drop_prob);
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if mask::keep_element(opts.rng_seed, tensor_name, i as u64, opts.drop_prob) {
                if opts.drop_prob == 0.0 {
                    v
                } else {
                    v * scale
                }
            } else {
                0.0
            }
        })
        .collect()
}

fn ties_pipeline(
    models: &[&TensorArchive],
    base: &TensorArchive,
    opts: &TiesOptions,
    dare: Option<&DareOptions>,
    weights_for: &(dyn Fn(&str) -> Option<Vec<f64>> + Sync),
) -> Result<TensorArchive> {
    if models.len() < 2 {
        return Err(Error::InvariantViolation(
            "consensus merge needs at least two models".into(),
        ));
    }
    opts.validate()?;
    if let Some(d) = dare {
        d.validate()?;
    }
    let mut all: Vec<&TensorArchive> = models.to_vec();
    all.push(base);
    check_compat(&all)?;
    if let Some(w) = &opts.weights {
        if w.len() != models.len() {
            return Err(Error::InvariantViolation(format!(
                "{} models but {} election weights",
                models.len(),
                w.len()
            )));
        }
    }

    let names: Vec<&str> = models[0].names().collect();
    let merged: Vec<(String, Result<Tensor>)> = names
        .par_iter()
        .map(|&name| {
            let first = models[0].get(name).expect("name from model 0");
            let base_vals = to_f64(base.get(name).expect("compat checked"));
            let weights = weights_for(name)
                .or_else(|| opts.weights.clone())
                .unwrap_or_else(|| vec![1.0; models.len()]);
            if weights.len() != models.len() {
                return (
                    name.to_string(),
                    Err(Error::InvariantViolation(format!(
                        "per-tensor weights for {name:?} have wrong arity"
                    ))),
                );
            }

            let mut inputs: Vec<Vec<f64>> = models
                .iter()
                .map(|m| {
                    let vals = to_f64(m.get(name).expect("compat checked"));
                    match opts.apply_to {
                        ApplyTo::Deltas => vals
                            .iter()
                            .zip(&base_vals)
                            .map(|(&v, &b)| v - b)
                            .collect(),
                        ApplyTo::Raw => vals,
                    }
                })
                .collect();
            if let Some(dare) = dare {
                for input in &mut inputs {
                    *input = dare_kernel(input, name, dare);
                }
            }
            let trimmed: Vec<Vec<f64>> = inputs
                .iter()
                .map(|d| trim_kernel(d, opts.density))
                .collect();
            let signs = elect_kernel(&trimmed, opts.sign_mode, &weights);
            let merged = disjoint_kernel(&trimmed, &signs, &weights);
            let out: Vec<f64> = match opts.apply_to {
                ApplyTo::Deltas => base_vals
                    .iter()
                    .zip(&merged)
                    .map(|(&b, &d)| b + d)
                    .collect(),
                ApplyTo::Raw => merged,
            };
            (name.to_string(), Ok(from_f64(&out, first.shape(), first)))
        })
        .collect();

    let mut out = TensorArchive::new();
    for (name, tensor) in merged {
        out.insert(name, tensor?)?;
    }
    Ok(out)
}

/// Trim → elect signs → disjoint mean, on deltas against `base` (or raw
/// parameters), re-adding the base afterwards in delta mode.
pub fn ties_merge(
    models: &[&TensorArchive],
    base: &TensorArchive,
    opts: &TiesOptions,
) -> Result<TensorArchive> {
    ties_pipeline(models, base, opts, None, &|_| None)
}

/// [`ties_merge`] with a per-tensor override for the election weights.
pub fn ties_merge_with<F>(
    models: &[&TensorArchive],
    base: &TensorArchive,
    opts: &TiesOptions,
    weights_for: F,
) -> Result<TensorArchive>
where
    F: Fn(&str) -> Option<Vec<f64>> + Sync,
{
    ties_pipeline(models, base, opts, None, &weights_for)
}

/// DARE dropout on each input, then the TIES pipeline. With `drop_prob = 0`
/// this is bit-identical to [`ties_merge`].
pub fn dare_ties_merge(
    models: &[&TensorArchive],
    base: &TensorArchive,
    ties: &TiesOptions,
    dare: &DareOptions,
) -> Result<TensorArchive> {
    ties_pipeline(models, base, ties, Some(dare), &|_| None)
}

pub fn dare_ties_merge_with<F>(
    models: &[&TensorArchive],
    base: &TensorArchive,
    ties: &TiesOptions,
    dare: &DareOptions,
    weights_for: F,
) -> Result<TensorArchive>
where
    F: Fn(&str) -> Option<Vec<f64>> + Sync,
{
    ties_pipeline(models, base, ties, Some(dare), &weights_for)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tensor(values: &[f32]) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w", Tensor::f32(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        a
    }

    fn values(a: &TensorArchive) -> Vec<f32> {
        a.get("w").unwrap().data().to_vec()
    }

    #[test]
    fn delta_is_elementwise_difference() {
        let tv = compute_delta(&one_tensor(&[3.0, 5.0]), &one_tensor(&[1.0, 2.0])).unwrap();
        assert_eq!(tv.get("w").unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn delta_of_identical_models_is_zero() {
        let m = one_tensor(&[0.5, -0.5]);
        let tv = compute_delta(&m, &m).unwrap();
        assert_eq!(tv.get("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn apply_delta_inverts_compute_delta() {
        let base = one_tensor(&[1.0, 2.0]);
        let model = one_tensor(&[3.0, 5.0]);
        let tv = compute_delta(&model, &base).unwrap();
        assert_eq!(values(&apply_delta(&base, &tv).unwrap()), values(&model));
    }

    #[test]
    fn linear_one_hot_is_endpoint_identity() {
        let m1 = one_tensor(&[2.0, 4.0]);
        let m2 = one_tensor(&[9.0, 9.0]);
        let out = linear_merge(&[&m1, &m2], &MergeWeights::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(values(&out), vec![2.0, 4.0]);
    }

    #[test]
    fn linear_even_blend() {
        let m1 = one_tensor(&[2.0, 4.0]);
        let m2 = one_tensor(&[4.0, 8.0]);
        let out = linear_merge(&[&m1, &m2], &MergeWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(values(&out), vec![3.0, 6.0]);
    }

    #[test]
    fn linear_all_zero_weights_rejected() {
        let m1 = one_tensor(&[1.0]);
        let m2 = one_tensor(&[2.0]);
        assert!(matches!(
            linear_merge(&[&m1, &m2], &MergeWeights::new(vec![0.0, 0.0]).unwrap()),
            Err(Error::ZeroWeightSum)
        ));
    }

    #[test]
    fn slerp_endpoints_exact() {
        let m1 = one_tensor(&[1.0, 0.0]);
        let m2 = one_tensor(&[0.0, 1.0]);
        assert_eq!(values(&slerp_merge(&m1, &m2, 0.0).unwrap()), values(&m1));
        assert_eq!(values(&slerp_merge(&m1, &m2, 1.0).unwrap()), values(&m2));
    }

    #[test]
    fn slerp_orthogonal_midpoint() {
        let m1 = one_tensor(&[1.0, 0.0]);
        let m2 = one_tensor(&[0.0, 1.0]);
        let out = values(&slerp_merge(&m1, &m2, 0.5).unwrap());
        for v in out {
            assert!((v - 0.7071068).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn slerp_colinear_falls_back_to_lerp() {
        let m1 = one_tensor(&[1.0, 2.0]);
        let m2 = one_tensor(&[2.0, 4.0]);
        let out = values(&slerp_merge(&m1, &m2, 0.25).unwrap());
        // (1-t)*v + t*2v = 1.25 v
        assert!((out[0] - 1.25).abs() < 1e-6);
        assert!((out[1] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn slerp_rejects_out_of_range_t() {
        let m1 = one_tensor(&[1.0]);
        let m2 = one_tensor(&[2.0]);
        assert!(matches!(
            slerp_merge(&m1, &m2, 1.5),
            Err(Error::BadCoefficient(_))
        ));
    }

    #[test]
    fn trim_keeps_top_magnitudes() {
        let t = Tensor::f32(vec![4], vec![0.9, -0.1, 0.5, 0.05]).unwrap();
        assert_eq!(trim_by_magnitude(&t, 0.5).data(), &[0.9, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn trim_density_one_is_identity() {
        let t = Tensor::f32(vec![3], vec![0.1, -0.2, 0.0]).unwrap();
        assert_eq!(trim_by_magnitude(&t, 1.0).data(), t.data());
    }

    #[test]
    fn trim_ties_break_by_lower_index() {
        let t = Tensor::f32(vec![4], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(trim_by_magnitude(&t, 0.5).data(), &[1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn elect_signs_paper_mode() {
        let a = Tensor::f32(vec![1], vec![2.0]).unwrap();
        let b = Tensor::f32(vec![1], vec![-1.0]).unwrap();
        let c = Tensor::f32(vec![1], vec![0.5]).unwrap();
        let s = elect_signs(&[&a, &b, &c], SignMode::Paper, None);
        assert_eq!(s.data(), &[1.0]);
        // two-way disagreement is a tie under sign voting
        let s = elect_signs(&[&a, &b], SignMode::Paper, None);
        assert_eq!(s.data(), &[0.0]);
        // but mass voting favors the larger magnitude
        let s = elect_signs(&[&a, &b], SignMode::Mass, None);
        assert_eq!(s.data(), &[1.0]);
    }

    #[test]
    fn disjoint_merge_means_aligned_values() {
        let d: Vec<Tensor> = [2.0, -1.0, 4.0]
            .iter()
            .map(|&v| Tensor::f32(vec![1], vec![v]).unwrap())
            .collect();
        let refs: Vec<&Tensor> = d.iter().collect();
        let s = Tensor::f32(vec![1], vec![1.0]).unwrap();
        assert_eq!(disjoint_merge(&refs, &s, None).data(), &[3.0]);
        let w = [1.0, 1.0, 0.5];
        let out = disjoint_merge(&refs, &s, Some(&w));
        assert!((out.data()[0] - 2.6666667).abs() < 1e-6);
        let zero = Tensor::f32(vec![1], vec![0.0]).unwrap();
        assert_eq!(disjoint_merge(&refs, &zero, None).data(), &[0.0]);
    }

    #[test]
    fn ties_hand_trace() {
        let base = one_tensor(&[0.0; 5]);
        let m1 = one_tensor(&[1.0, -2.0, 0.1, 0.0, 3.0]);
        let m2 = one_tensor(&[2.0, 2.0, -0.2, 0.0, -3.0]);
        let opts = TiesOptions {
            density: 0.6,
            ..TiesOptions::default()
        };
        let out = ties_merge(&[&m1, &m2], &base, &opts).unwrap();
        assert_eq!(values(&out), vec![1.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_of_base_equals_base() {
        let base = one_tensor(&[0.5, -0.25, 3.0]);
        let out = ties_merge(&[&base, &base], &base, &TiesOptions::default()).unwrap();
        assert_eq!(values(&out), values(&base));
    }

    #[test]
    fn dare_zero_drop_is_identity() {
        let t = Tensor::f32(vec![2], vec![2.0, 4.0]).unwrap();
        let opts = DareOptions {
            drop_prob: 0.0,
            rng_seed: 9,
        };
        assert_eq!(dare_drop_rescale(&t, "w", &opts).data(), t.data());
    }

    #[test]
    fn dare_survivors_are_rescaled() {
        let t = Tensor::f32(vec![2], vec![2.0, 4.0]).unwrap();
        // find a seed realizing [keep, drop] so the trace is explicit
        let seed = (0..u64::MAX)
            .find(|&s| {
                mask::keep_element(s, "w", 0, 0.5) && !mask::keep_element(s, "w", 1, 0.5)
            })
            .unwrap();
        let opts = DareOptions {
            drop_prob: 0.5,
            rng_seed: seed,
        };
        assert_eq!(dare_drop_rescale(&t, "w", &opts).data(), &[4.0, 0.0]);
    }

    #[test]
    fn dare_ties_with_p_zero_matches_ties() {
        let base = one_tensor(&[0.0; 5]);
        let m1 = one_tensor(&[1.0, -2.0, 0.1, 0.0, 3.0]);
        let m2 = one_tensor(&[2.0, 2.0, -0.2, 0.0, -3.0]);
        let opts = TiesOptions {
            density: 0.6,
            ..TiesOptions::default()
        };
        for seed in [0u64, 1, 99] {
            let dare = DareOptions {
                drop_prob: 0.0,
                rng_seed: seed,
            };
            let a = dare_ties_merge(&[&m1, &m2], &base, &opts, &dare).unwrap();
            let b = ties_merge(&[&m1, &m2], &base, &opts).unwrap();
            assert_eq!(values(&a), values(&b));
        }
    }

    #[test]
    fn incompatible_archives_rejected() {
        let m1 = one_tensor(&[1.0, 2.0]);
        let mut m2 = TensorArchive::new();
        m2.insert("v", Tensor::f32(vec![2], vec![0.0; 2]).unwrap())
            .unwrap();
        assert!(matches!(
            linear_merge(&[&m1, &m2], &MergeWeights::new(vec![0.5, 0.5]).unwrap()),
            Err(Error::IncompatibleArchives(_))
        ));
    }
}
