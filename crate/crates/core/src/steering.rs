// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference-time intervention.
//!
//! The edited model is `decode(map(encode(x)))`: the backend encodes a prompt
//! into its last hidden state plus a scope vector, the registry picks at most
//! one edit whose detector fires, and that edit's map replaces the hidden state
//! before the unembedding. Prompts outside every scope go through untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SakeError};
use crate::linalg::ActivationVector;
use crate::records::PromptRecord;
use crate::registry::Registry;

/// What a backend hands to the steering engine for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub activation: ActivationVector,
    pub scope_vec: ActivationVector,
}

/// A language model split at its unembedding.
///
/// `encode` must be deterministic for a fixed configuration; `decode` returns
/// labels ranked greedily, ties broken by label order.
pub trait LmBackend {
    fn activation_dim(&self) -> usize;
    fn scope_dim(&self) -> usize;
    fn encode(&self, prompt: &PromptRecord) -> Result<Encoded>;
    fn decode(&self, activation: &ActivationVector) -> Result<Vec<String>>;

    fn decode_top(&self, activation: &ActivationVector) -> Result<String> {
        self.decode(activation)?
            .into_iter()
            .next()
            .ok_or_else(|| SakeError::Backend("decode returned no labels".into()))
    }
}

/// Audit trail for one steered position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_label: Option<String>,
    pub steered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_edit_id: Option<String>,
    pub pre_map_activation: ActivationVector,
    pub post_map_activation: ActivationVector,
}

/// Looks up the scope and applies the matched map; does not decode.
pub fn steer_activation(
    registry: &Registry,
    activation: &ActivationVector,
    scope_vec: &ActivationVector,
) -> Result<SteeringOutcome> {
    activation.ensure_dim(registry.activation_dim())?;
    let (post, matched) = match registry.match_scope(scope_vec)? {
        Some(entry) => (entry.map.apply(activation)?, Some(entry.id.clone())),
        None => (activation.clone(), None),
    };
    Ok(SteeringOutcome {
        output_label: None,
        steered: matched.is_some(),
        matched_edit_id: matched,
        pre_map_activation: activation.clone(),
        post_map_activation: post,
    })
}

fn check_compatible<B: LmBackend + ?Sized>(backend: &B, registry: &Registry) -> Result<()> {
    if backend.activation_dim() != registry.activation_dim() {
        return Err(SakeError::DimensionMismatch {
            expected: registry.activation_dim(),
            got: backend.activation_dim(),
        });
    }
    if backend.scope_dim() != registry.scope_dim() {
        return Err(SakeError::DimensionMismatch {
            expected: registry.scope_dim(),
            got: backend.scope_dim(),
        });
    }
    Ok(())
}

/// Runs the edited model on one prompt.
pub fn edited_forward<B: LmBackend + ?Sized>(
    backend: &B,
    registry: &Registry,
    prompt: &PromptRecord,
) -> Result<SteeringOutcome> {
    check_compatible(backend, registry)?;
    let enc = backend.encode(prompt)?;
    let mut outcome = steer_activation(registry, &enc.activation, &enc.scope_vec)?;
    outcome.output_label = Some(backend.decode_top(&outcome.post_map_activation)?);
    Ok(outcome)
}

/// Runs the unedited model on one prompt.
pub fn unedited_forward<B: LmBackend + ?Sized>(backend: &B, prompt: &PromptRecord) -> Result<String> {
    let enc = backend.encode(prompt)?;
    backend.decode_top(&enc.activation)
}

/// When the scope check runs during multi-token generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SteeringPolicy {
    /// Only the first decoded position is eligible for steering.
    #[default]
    First,
    /// Every decoded position is checked against the registry again.
    Every,
}

impl SteeringPolicy {
    pub fn applies_at(self, step: usize) -> bool {
        match self {
            Self::First => step == 0,
            Self::Every => true,
        }
    }
}

impl std::str::FromStr for SteeringPolicy {
    type Err = SakeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "every" => Ok(Self::Every),
            other => Err(SakeError::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// Backend that can produce a hidden state at each autoregressive step.
pub trait StepwiseBackend {
    fn activation_dim(&self) -> usize;
    /// Hidden state and scope vector after the prompt plus `generated` tokens.
    fn encode_step(&self, prompt_id: &str, generated: &[String]) -> Result<Encoded>;
    fn decode_top(&self, activation: &ActivationVector) -> Result<String>;
}

/// Greedy generation of `max_steps` tokens with steering under `policy`.
pub fn generate<B: StepwiseBackend + ?Sized>(
    backend: &B,
    registry: &Registry,
    prompt_id: &str,
    max_steps: usize,
    policy: SteeringPolicy,
) -> Result<Vec<SteeringOutcome>> {
    if backend.activation_dim() != registry.activation_dim() {
        return Err(SakeError::DimensionMismatch {
            expected: registry.activation_dim(),
            got: backend.activation_dim(),
        });
    }
    let mut generated = Vec::with_capacity(max_steps);
    let mut outcomes = Vec::with_capacity(max_steps);
    for step in 0..max_steps {
        let enc = backend.encode_step(prompt_id, &generated)?;
        let mut outcome = if policy.applies_at(step) {
            steer_activation(registry, &enc.activation, &enc.scope_vec)?
        } else {
            SteeringOutcome {
                output_label: None,
                steered: false,
                matched_edit_id: None,
                pre_map_activation: enc.activation.clone(),
                post_map_activation: enc.activation,
            }
        };
        let label = backend.decode_top(&outcome.post_map_activation)?;
        generated.push(label.clone());
        outcome.output_label = Some(label);
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Adapts a single-position backend to the stepwise interface: every step
/// re-encodes the same prompt.
pub struct SingleStep<'a, B: ?Sized> {
    pub backend: &'a B,
    pub prompt: &'a PromptRecord,
}

impl<B: LmBackend + ?Sized> StepwiseBackend for SingleStep<'_, B> {
    fn activation_dim(&self) -> usize {
        self.backend.activation_dim()
    }

    fn encode_step(&self, _prompt_id: &str, _generated: &[String]) -> Result<Encoded> {
        self.backend.encode(self.prompt)
    }

    fn decode_top(&self, activation: &ActivationVector) -> Result<String> {
        self.backend.decode_top(activation)
    }
}
