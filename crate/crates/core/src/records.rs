// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt categories, record roles, and the evaluation view of a prompt.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SakeError};
use crate::linalg::ActivationVector;

/// Which metric a prompt feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EditPrompt,
    Paraphrase,
    Ci,
    Cii,
    Sa,
    Rs,
    Unrelated,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::EditPrompt,
        Category::Paraphrase,
        Category::Ci,
        Category::Cii,
        Category::Sa,
        Category::Rs,
        Category::Unrelated,
    ];

    /// Categories an edit is meant to change.
    pub const IN_SCOPE: [Category; 5] = [
        Category::EditPrompt,
        Category::Paraphrase,
        Category::Ci,
        Category::Cii,
        Category::Sa,
    ];

    pub fn is_in_scope(self) -> bool {
        !matches!(self, Category::Rs | Category::Unrelated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::EditPrompt => "edit_prompt",
            Category::Paraphrase => "paraphrase",
            Category::Ci => "ci",
            Category::Cii => "cii",
            Category::Sa => "sa",
            Category::Rs => "rs",
            Category::Unrelated => "unrelated",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
    Eval,
}

/// A prompt ready for evaluation: its activation, scope vector and expected labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub category: Category,
    pub activation: ActivationVector,
    pub scope_vec: ActivationVector,
    pub expected_pre_edit: String,
    pub expected_post_edit: String,
}

impl PromptRecord {
    /// Checks both expected labels against the backend vocabulary.
    pub fn check_labels(&self, vocab: &[String]) -> Result<()> {
        for label in [&self.expected_pre_edit, &self.expected_post_edit] {
            if !vocab.contains(label) {
                return Err(SakeError::UnknownObject(label.clone()));
            }
        }
        Ok(())
    }
}
