//! Bundled labeling definitions for the SBIC, HASOC and Perspective-labeled
//! dimensions.

use alloc::vec::Vec;

use crate::Dimension;

pub const SBIC_OFFENSIVE: &str = "Does this post contain offensive language?";
pub const SBIC_INTENT: &str = "Does this post contain intentional insults?";
pub const SBIC_LEWD: &str = "Does this post contain sexual content?";
pub const SBIC_GROUP: &str = "Does this post contain offense to a group?";
pub const HASOC_HOF: &str = "Does this post contain any form of non-acceptable language such as hate speech, offensiveness, aggression, profanity?";
pub const HASOC_TARGET: &str = "Does this post contain an insult/threat to an individual, group, or others?";
pub const TOXICITY: &str = "Does this post contain rude, disrespectful, or unreasonable language?";
pub const SEXUALLY_EXPLICIT: &str = "Does this post contain sexually explicit language?";

/// `(dimension name, definition)` rows of the default registry.
pub const DEFAULT_ROWS: [(&str, &str); 8] = [
    ("offensive", SBIC_OFFENSIVE),
    ("intent", SBIC_INTENT),
    ("lewd", SBIC_LEWD),
    ("group", SBIC_GROUP),
    ("hof", HASOC_HOF),
    ("target", HASOC_TARGET),
    ("toxicity", TOXICITY),
    ("sexually_explicit", SEXUALLY_EXPLICIT),
];

pub fn default_dimensions() -> Vec<Dimension> {
    DEFAULT_ROWS
        .iter()
        .map(|(name, def)| Dimension::new(*name, *def).expect("bundled definitions are valid"))
        .collect()
}

pub fn default_dimension(name: &str) -> Option<Dimension> {
    default_dimensions().into_iter().find(|d| d.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_rows_valid_and_distinct() {
        let dims = default_dimensions();
        assert_eq!(dims.len(), 8);
        for d in &dims {
            assert_eq!(d.positive_token, "Yes");
            assert_eq!(d.negative_token, "No");
        }
        let mut names: Vec<_> = dims.iter().map(|d| d.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 8);
    }
}
