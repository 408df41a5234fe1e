//! Declarative merge recipes: a TOML document naming the method, input
//! checkpoints and coefficients. Unknown fields are errors so coefficient
//! typos fail loudly, and every default the executor fills in is echoed
//! both to the caller and into the output archive's metadata.
//!
//! Blend coefficients follow the blend-ratio convention: `t` (and each
//! anchor) is the fraction of model 1, so `t = 0` takes 100% of model 2's
//! parameters and `t = 1` ends on model 1.

use crate::error::{Error, Result};
use crate::mergecore::{
    dare_ties_merge_with, linear_merge, slerp_merge_with, ties_merge_with, ApplyTo, DareOptions,
    MergeWeights, SignMode, TiesOptions,
};
use crate::schedule::{per_tensor_t, BlendSchedule, LayerMap};
use crate::tensorio::{read_archive, write_archive, Dtype, TensorArchive};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Linear,
    Slerp,
    Ties,
    DareTies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignModeName {
    Paper,
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyToName {
    Deltas,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OutputDtype {
    #[serde(rename = "auto")]
    Auto,
    F32,
    F16,
}

/// One merge, declaratively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub method: Method,
    pub models: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_mode: Option<SignModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apply_to: Option<ApplyToName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<OutputDtype>,
}

pub fn load_recipe(path: impl AsRef<Path>) -> Result<MergeRecipe> {
    let text = std::fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::RecipeInvalid(e.to_string()))
}

fn invalid(field: &str) -> Error {
    Error::RecipeInvalid(field.to_string())
}

fn forbid<T>(value: &Option<T>, field: &'static str) -> Result<()> {
    if value.is_some() {
        Err(invalid(field))
    } else {
        Ok(())
    }
}

impl MergeRecipe {
    /// Cross-field validation. Defaults are applied later, by `execute`.
    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(invalid("models"));
        }
        match self.method {
            Method::Linear => {
                let alphas = self.alphas.as_ref().ok_or_else(|| invalid("alphas"))?;
                if alphas.len() != self.models.len() {
                    return Err(invalid("alphas"));
                }
                forbid(&self.t, "t")?;
                forbid(&self.anchors, "anchors")?;
                forbid(&self.default_t, "default_t")?;
                forbid(&self.base, "base")?;
                forbid(&self.density, "density")?;
                forbid(&self.sign_mode, "sign_mode")?;
                forbid(&self.weights, "weights")?;
                forbid(&self.apply_to, "apply_to")?;
                forbid(&self.drop_prob, "drop_prob")?;
                forbid(&self.seed, "seed")?;
            }
            Method::Slerp => {
                if self.models.len() != 2 {
                    return Err(invalid("models"));
                }
                if self.t.is_none() == self.anchors.is_none() {
                    return Err(invalid("t"));
                }
                forbid(&self.alphas, "alphas")?;
                forbid(&self.base, "base")?;
                forbid(&self.density, "density")?;
                forbid(&self.sign_mode, "sign_mode")?;
                forbid(&self.weights, "weights")?;
                forbid(&self.apply_to, "apply_to")?;
                forbid(&self.drop_prob, "drop_prob")?;
                forbid(&self.seed, "seed")?;
            }
            Method::Ties | Method::DareTies => {
                if self.base.is_none() {
                    return Err(invalid("base"));
                }
                forbid(&self.alphas, "alphas")?;
                forbid(&self.t, "t")?;
                if self.anchors.is_some() {
                    if self.models.len() != 2 {
                        return Err(invalid("anchors"));
                    }
                    if self.weights.is_some() {
                        return Err(invalid("weights"));
                    }
                }
                if let Some(w) = &self.weights {
                    if w.len() != self.models.len() {
                        return Err(invalid("weights"));
                    }
                }
                if self.method == Method::Ties {
                    forbid(&self.drop_prob, "drop_prob")?;
                    forbid(&self.seed, "seed")?;
                }
            }
        }
        Ok(())
    }
}

/// What `execute` did: where the archive went, which defaults were filled
/// in, and the schedule trace when anchors drove the merge.
#[derive(Debug, Clone)]
pub struct ExecutionSummary {
    pub output: PathBuf,
    pub defaults_applied: Vec<String>,
    pub recipe_json: String,
    pub schedule_layer_t: Option<Vec<f64>>,
}

fn schedule_for(recipe: &MergeRecipe) -> Result<Option<BlendSchedule>> {
    match &recipe.anchors {
        Some(anchors) => Ok(Some(
            BlendSchedule::new(anchors.clone(), recipe.default_t)
                .map_err(|e| Error::RecipeInvalid(format!("anchors: {e}")))?,
        )),
        None => Ok(None),
    }
}

fn layer_trace(schedule: &BlendSchedule, layers: &LayerMap) -> Vec<f64> {
    let count = layers.layer_count();
    (0..count)
        .map(|i| {
            if count <= 1 {
                schedule.eval(0.0)
            } else {
                schedule.eval(i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Resolve defaults, run the merge, and write the output archive with the
/// fully resolved recipe recorded under the "merge_recipe" metadata key.
pub fn execute_recipe(
    recipe: &MergeRecipe,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<ExecutionSummary> {
    recipe.validate()?;
    let output = out_override
        .or_else(|| recipe.output.clone())
        .ok_or_else(|| invalid("output"))?;

    let mut defaults_applied = Vec::new();
    let mut resolved = recipe.clone();
    // the output location is not part of the merge semantics, so it is left
    // out of the recorded recipe to keep equal merges byte-identical
    resolved.output = None;

    let models: Vec<TensorArchive> = recipe
        .models
        .iter()
        .map(|p| {
            let mut m = read_archive(p)?;
            m.set_metadata("model_id", p.display().to_string());
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let model_refs: Vec<&TensorArchive> = models.iter().collect();
    let base = recipe
        .base
        .as_ref()
        .map(|p| read_archive(p))
        .transpose()?;

    let schedule = schedule_for(recipe)?;
    let layers = LayerMap::from_names(models[0].names());
    let schedule_layer_t = schedule.as_ref().map(|s| layer_trace(s, &layers));
    if schedule.is_some() && recipe.default_t.is_none() {
        let s = schedule.as_ref().unwrap();
        defaults_applied.push(format!("default_t={}", s.default_t()));
        resolved.default_t = Some(s.default_t());
    }

    // fraction-of-model-1 for one tensor, from the schedule or constant t
    let t_of = |name: &str| -> f64 {
        match &schedule {
            Some(s) => per_tensor_t(s, &layers, name).unwrap_or_else(|_| s.default_t()),
            None => recipe.t.unwrap_or(0.5),
        }
    };

    let merged = match recipe.method {
        Method::Linear => linear_merge(
            &model_refs,
            &MergeWeights::new(recipe.alphas.clone().unwrap_or_default())
                .map_err(|e| Error::RecipeInvalid(format!("alphas: {e}")))?,
        )?,
        Method::Slerp => {
            // slerp's interpolation parameter is the fraction of model 2
            slerp_merge_with(model_refs[0], model_refs[1], |name| 1.0 - t_of(name))?
        }
        Method::Ties | Method::DareTies => {
            let density = recipe.density.unwrap_or_else(|| {
                defaults_applied.push("density=0.5".into());
                0.5
            });
            resolved.density = Some(density);
            let sign_mode = match recipe.sign_mode.unwrap_or(SignModeName::Paper) {
                SignModeName::Paper => SignMode::Paper,
                SignModeName::Mass => SignMode::Mass,
            };
            resolved.sign_mode =
                Some(recipe.sign_mode.unwrap_or(SignModeName::Paper));
            let apply_to = match recipe.apply_to.unwrap_or(ApplyToName::Deltas) {
                ApplyToName::Deltas => ApplyTo::Deltas,
                ApplyToName::Raw => ApplyTo::Raw,
            };
            resolved.apply_to = Some(recipe.apply_to.unwrap_or(ApplyToName::Deltas));
            let opts = TiesOptions {
                density,
                sign_mode,
                weights: recipe.weights.clone(),
                apply_to,
            };
            let base = base.as_ref().expect("validated");
            let weights_for = |name: &str| -> Option<Vec<f64>> {
                schedule.as_ref().map(|_| {
                    let t = t_of(name);
                    vec![t, 1.0 - t]
                })
            };
            if recipe.method == Method::Ties {
                ties_merge_with(&model_refs, base, &opts, weights_for)?
            } else {
                let drop_prob = recipe.drop_prob.unwrap_or_else(|| {
                    defaults_applied.push("drop_prob=0.9".into());
                    0.9
                });
                let rng_seed = seed_override.or(recipe.seed).unwrap_or_else(|| {
                    defaults_applied.push("seed=0".into());
                    0
                });
                resolved.drop_prob = Some(drop_prob);
                resolved.seed = Some(rng_seed);
                let dare = DareOptions {
                    drop_prob,
                    rng_seed,
                };
                dare_ties_merge_with(&model_refs, base, &opts, &dare, weights_for)?
            }
        }
    };

    let output_dtype = recipe.output_dtype.unwrap_or(OutputDtype::Auto);
    resolved.output_dtype = Some(output_dtype);
    let mut merged = match output_dtype {
        OutputDtype::Auto => merged,
        OutputDtype::F32 | OutputDtype::F16 => {
            let target = if output_dtype == OutputDtype::F32 {
                Dtype::F32
            } else {
                Dtype::F16
            };
            let mut cast = TensorArchive::new();
            for (name, tensor) in merged.iter() {
                cast.insert(name, tensor.cast(target))?;
            }
            cast
        }
    };

    let recipe_json = serde_json::json!({
        "recipe": resolved,
        "defaults_applied": defaults_applied,
    })
    .to_string();
    merged.set_metadata("merge_recipe", recipe_json.clone());
    if let Some(trace) = &schedule_layer_t {
        merged.set_metadata(
            "schedule_layer_t",
            serde_json::to_string(trace).expect("trace serializes"),
        );
    }

    write_archive(&merged, &output)?;
    Ok(ExecutionSummary {
        output,
        defaults_applied,
        recipe_json,
        schedule_layer_t,
    })
}
