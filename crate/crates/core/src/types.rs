use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::text::normalize_text;
use crate::{Error, Result};

/// A single social-media document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub dataset: String,
}

impl Post {
    /// Builds a post, normalizing its text (NFC, trimmed, whitespace runs
    /// collapsed). Fails if the id is empty or the text normalizes to nothing.
    pub fn new(id: impl Into<String>, text: &str, dataset: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidPost { id, reason: "empty id" });
        }
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(Error::InvalidPost { id, reason: "empty text" });
        }
        Ok(Post { id, text, dataset: dataset.into() })
    }
}

/// A labeling task, posed to the model as a yes/no question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub definition: String,
    #[serde(default = "default_positive")]
    pub positive_token: String,
    #[serde(default = "default_negative")]
    pub negative_token: String,
}

fn default_positive() -> String {
    "Yes".to_string()
}

fn default_negative() -> String {
    "No".to_string()
}

impl Dimension {
    /// A dimension answered with the tokens `Yes` / `No`.
    pub fn new(name: impl Into<String>, definition: impl Into<String>) -> Result<Self> {
        Self::with_tokens(name, definition, "Yes", "No")
    }

    pub fn with_tokens(
        name: impl Into<String>,
        definition: impl Into<String>,
        positive_token: impl Into<String>,
        negative_token: impl Into<String>,
    ) -> Result<Self> {
        let dim = Dimension {
            name: name.into(),
            definition: definition.into(),
            positive_token: positive_token.into(),
            negative_token: negative_token.into(),
        };
        dim.validate()?;
        Ok(dim)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason| Err(Error::InvalidDimension { name: self.name.clone(), reason });
        if self.name.is_empty() {
            return fail("empty name");
        }
        if !self.definition.trim_end().ends_with('?') {
            return fail("definition must end with '?'");
        }
        if self.positive_token.is_empty() || self.negative_token.is_empty() {
            return fail("empty answer token");
        }
        if self.positive_token == self.negative_token {
            return fail("positive and negative tokens are equal");
        }
        Ok(())
    }

    pub fn answer_token(&self, label: Label) -> &str {
        match label {
            Label::Positive => &self.positive_token,
            Label::Negative => &self.negative_token,
        }
    }
}

/// Binary label. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn as_f64(self) -> f64 {
        u8::from(self) as f64
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        match label {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> core::result::Result<Self, String> {
        match value {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(alloc::format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

/// Which side of the transfer an exemplar comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub post: Post,
    pub dimension: String,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn new(post: Post, dimension: impl Into<String>, label: Label, provenance: Provenance) -> Self {
        LabeledExample { post, dimension: dimension.into(), label, provenance }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_text_is_normalized() {
        let post = Post::new("a", "  hello \t\n  world ", "d").unwrap();
        assert_eq!(post.text, "hello world");
    }

    #[test]
    fn post_rejects_blank_text_and_empty_id() {
        assert!(matches!(Post::new("a", "   ", "d"), Err(Error::InvalidPost { .. })));
        assert!(matches!(Post::new("", "x", "d"), Err(Error::InvalidPost { .. })));
    }

    #[test]
    fn dimension_invariants() {
        assert!(Dimension::new("x", "Is it?").is_ok());
        assert!(Dimension::new("x", "Is it").is_err());
        assert!(Dimension::with_tokens("x", "Is it?", "Yes", "Yes").is_err());
    }

    #[test]
    fn label_serializes_as_digit() {
        assert_eq!(serde_json::to_string(&Label::Positive).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Negative);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
