//! Instruction prompt rendering.
//!
//! Every block has the shape
//!
//! ```text
//! Post: {text}
//! Question: {definition}
//! Answer: {token}
//! ```
//!
//! Shot blocks are separated by one blank line and the query block ends flush
//! at `Answer:`, so the scored continuation is ` Yes` / ` No`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::selector::Shot;
use crate::{Dimension, Error, Label, Post, Provenance, Result};

pub const DEFAULT_TOKEN_BUDGET: usize = 2048;

const POST_TAG: &str = "Post:";
const QUESTION_TAG: &str = "Question:";
const ANSWER_TAG: &str = "Answer:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptShot {
    pub post_id: String,
    pub text: String,
    pub dimension: String,
    pub definition: String,
    pub answer: String,
    pub label: Label,
    pub provenance: Provenance,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub query_id: String,
    pub query_text: String,
    pub query_dimension: Dimension,
    pub shots: Vec<PromptShot>,
    pub rendered: String,
    pub token_budget: usize,
}

impl PromptSpec {
    pub fn shot_ids(&self) -> Vec<&str> {
        self.shots.iter().map(|s| s.post_id.as_str()).collect()
    }

    fn rerender(&mut self) {
        self.rendered = render_text(&self.shots, &self.query_text, &self.query_dimension.definition);
    }

    fn query_block(&self) -> String {
        render_text(&[], &self.query_text, &self.query_dimension.definition)
    }
}

fn push_block(out: &mut String, text: &str, definition: &str, answer: Option<&str>) {
    out.push_str(POST_TAG);
    out.push(' ');
    out.push_str(text);
    out.push('\n');
    out.push_str(QUESTION_TAG);
    out.push(' ');
    out.push_str(definition);
    out.push('\n');
    out.push_str(ANSWER_TAG);
    if let Some(answer) = answer {
        out.push(' ');
        out.push_str(answer);
        out.push_str("\n\n");
    }
}

fn render_text(shots: &[PromptShot], query_text: &str, definition: &str) -> String {
    let mut out = String::new();
    for shot in shots {
        push_block(&mut out, &shot.text, &shot.definition, Some(&shot.answer));
    }
    push_block(&mut out, query_text, definition, None);
    out
}

/// Renders shots and query. Source-domain shots carry `source_dim`'s
/// definition and answer tokens; target-domain shots and the query carry
/// `target_dim`'s. An empty shot list renders the zero-shot query block.
pub fn render(
    shots: &[Shot],
    query: &Post,
    source_dim: Option<&Dimension>,
    target_dim: &Dimension,
) -> Result<PromptSpec> {
    let shots = shots
        .iter()
        .map(|shot| {
            let ex = &shot.example;
            let dim = match ex.provenance {
                Provenance::Target => target_dim,
                Provenance::Source => source_dim.ok_or_else(|| Error::MissingSourceDimension(ex.post.id.clone()))?,
            };
            if ex.dimension != dim.name {
                return Err(Error::UnknownDimension(ex.dimension.clone()));
            }
            Ok(PromptShot {
                post_id: ex.post.id.clone(),
                text: ex.post.text.clone(),
                dimension: dim.name.clone(),
                definition: dim.definition.clone(),
                answer: dim.answer_token(ex.label).to_string(),
                label: ex.label,
                provenance: ex.provenance,
                similarity: shot.similarity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = PromptSpec {
        query_id: query.id.clone(),
        query_text: query.text.clone(),
        query_dimension: target_dim.clone(),
        shots,
        rendered: String::new(),
        token_budget: DEFAULT_TOKEN_BUDGET,
    };
    spec.rerender();
    Ok(spec)
}

/// Drops the least similar positive and least similar negative shot
/// (one pair per round) until the prompt fits `max_tokens` under `count`.
pub fn truncate_to_budget<F>(spec: &PromptSpec, max_tokens: usize, count: F) -> Result<PromptSpec>
where
    F: Fn(&str) -> usize,
{
    let needed = count(&spec.query_block());
    if needed > max_tokens {
        return Err(Error::QueryExceedsBudget { needed, budget: max_tokens });
    }
    let mut out = spec.clone();
    out.token_budget = max_tokens;
    while count(&out.rendered) > max_tokens {
        for label in [Label::Positive, Label::Negative] {
            if let Some(i) = least_similar(&out.shots, label) {
                out.shots.remove(i);
            }
        }
        out.rerender();
    }
    Ok(out)
}

fn least_similar(shots: &[PromptShot], label: Label) -> Option<usize> {
    shots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == label)
        .min_by(|(_, a), (_, b)| a.similarity.total_cmp(&b.similarity).then_with(|| b.post_id.cmp(&a.post_id)))
        .map(|(i, _)| i)
}

/// A rendered prompt read back into its blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    /// `(text, definition, answer)` per shot.
    pub shots: Vec<(&'a str, &'a str, &'a str)>,
    pub query_text: &'a str,
    pub query_definition: &'a str,
}

/// Parses text produced by [`render`]. Returns `None` for anything else.
pub fn parse_rendered(prompt: &str) -> Option<ParsedPrompt<'_>> {
    let blocks: Vec<&str> = prompt.split("\n\n").collect();
    let (query, shot_blocks) = blocks.split_last()?;
    let mut shots = Vec::with_capacity(shot_blocks.len());
    for block in shot_blocks {
        let (text, definition, answer) = parse_block(block)?;
        shots.push((text, definition, answer.strip_prefix(' ')?));
    }
    let (query_text, query_definition, rest) = parse_block(query)?;
    if !rest.is_empty() {
        return None;
    }
    Some(ParsedPrompt { shots, query_text, query_definition })
}

fn parse_block(block: &str) -> Option<(&str, &str, &str)> {
    let mut lines = block.split('\n');
    let text = lines.next()?.strip_prefix(POST_TAG)?.strip_prefix(' ')?;
    let definition = lines.next()?.strip_prefix(QUESTION_TAG)?.strip_prefix(' ')?;
    let answer = lines.next()?.strip_prefix(ANSWER_TAG)?;
    if lines.next().is_some() {
        return None;
    }
    Some((text, definition, answer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::definitions::{default_dimension, SBIC_LEWD, TOXICITY};
    use crate::text::unit_token_count;
    use crate::LabeledExample;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn shot(id: &str, text: &str, dim: &str, label: Label, prov: Provenance, sim: f64) -> Shot {
        Shot {
            example: LabeledExample::new(Post::new(id, text, "d").unwrap(), dim, label, prov),
            similarity: sim,
            rank: 0,
        }
    }

    #[test]
    fn zero_shot_block() {
        let target = default_dimension("toxicity").unwrap();
        let q = Post::new("q", "hello", "metoo").unwrap();
        let spec = render(&[], &q, None, &target).unwrap();
        assert_eq!(spec.rendered, format!("Post: hello\nQuestion: {TOXICITY}\nAnswer:"));
        assert!(spec.rendered.ends_with("Answer:"));
    }

    #[test]
    fn mixed_definitions() {
        let source = default_dimension("lewd").unwrap();
        let target = default_dimension("toxicity").unwrap();
        let shots = vec![
            shot("s1", "source text", "lewd", Label::Positive, Provenance::Source, 0.1),
            shot("t1", "target text", "toxicity", Label::Negative, Provenance::Target, 0.2),
        ];
        let q = Post::new("q", "query text", "metoo").unwrap();
        let spec = render(&shots, &q, Some(&source), &target).unwrap();
        let expected = format!(
            "Post: source text\nQuestion: {SBIC_LEWD}\nAnswer: Yes\n\n\
             Post: target text\nQuestion: {TOXICITY}\nAnswer: No\n\n\
             Post: query text\nQuestion: {TOXICITY}\nAnswer:"
        );
        assert_eq!(spec.rendered, expected);
        assert_eq!(spec.shots[0].definition, SBIC_LEWD);
        assert_eq!(spec.shot_ids(), ["s1", "t1"]);
    }

    #[test]
    fn source_shot_without_source_dimension() {
        let target = default_dimension("toxicity").unwrap();
        let shots = vec![shot("s1", "x", "lewd", Label::Positive, Provenance::Source, 0.1)];
        let q = Post::new("q", "y", "d").unwrap();
        assert_eq!(render(&shots, &q, None, &target).unwrap_err(), Error::MissingSourceDimension("s1".into()));
    }

    fn balanced_spec(n_per_class: usize) -> PromptSpec {
        let source = default_dimension("lewd").unwrap();
        let target = default_dimension("toxicity").unwrap();
        let mut shots = Vec::new();
        for i in 0..n_per_class {
            // similarity rises with i; positives and negatives interleave
            shots.push(shot(&format!("p{i:02}"), "one two", "toxicity", Label::Positive, Provenance::Target, i as f64));
            shots.push(shot(&format!("n{i:02}"), "one two", "lewd", Label::Negative, Provenance::Source, i as f64 + 0.5));
        }
        let q = Post::new("q", "query words here", "d").unwrap();
        render(&shots, &q, Some(&source), &target).unwrap()
    }

    #[test]
    fn truncation_noop_when_under_budget() {
        let spec = balanced_spec(2);
        let out = truncate_to_budget(&spec, 10_000, unit_token_count).unwrap();
        assert_eq!(out.rendered, spec.rendered);
        assert_eq!(out.token_budget, 10_000);
    }

    #[test]
    fn truncation_drops_least_similar_pairs() {
        let spec = balanced_spec(16);
        // Unit-cost tokens: query block = 2 tags + 3 words + 1 tag + 10-word
        // definition = 16; each shot block = 3 tags + 2 words + definition
        // words + 1 answer token.
        let query_tokens = 3 + 3 + unit_token_count(TOXICITY);
        let target_shot = 4 + 2 + unit_token_count(TOXICITY);
        let source_shot = 4 + 2 + unit_token_count(SBIC_LEWD);
        assert_eq!(unit_token_count(&spec.rendered), query_tokens + 16 * (target_shot + source_shot));

        // Room for exactly 11 pairs.
        let budget = query_tokens + 11 * (target_shot + source_shot) + 3;
        let out = truncate_to_budget(&spec, budget, unit_token_count).unwrap();
        assert_eq!(out.shots.len(), 22);
        let kept: Vec<&str> = out.shot_ids();
        for i in 0..5 {
            assert!(!kept.contains(&format!("p{i:02}").as_str()));
            assert!(!kept.contains(&format!("n{i:02}").as_str()));
        }
        for i in 5..16 {
            assert!(kept.contains(&format!("p{i:02}").as_str()));
        }
        assert!(unit_token_count(&out.rendered) <= budget);
    }

    #[test]
    fn truncation_budget_below_query() {
        let spec = balanced_spec(1);
        let err = truncate_to_budget(&spec, 5, unit_token_count).unwrap_err();
        assert!(matches!(err, Error::QueryExceedsBudget { budget: 5, .. }));
    }

    #[test]
    fn parse_round_trip() {
        let spec = balanced_spec(2);
        let parsed = parse_rendered(&spec.rendered).unwrap();
        assert_eq!(parsed.shots.len(), 4);
        assert_eq!(parsed.shots[0], ("one two", TOXICITY, "Yes"));
        assert_eq!(parsed.shots[1].1, SBIC_LEWD);
        assert_eq!(parsed.query_text, "query words here");
        assert_eq!(parsed.query_definition, TOXICITY);
        assert!(parse_rendered("garbage").is_none());
        assert!(parse_rendered("Post: a\nQuestion: b?\nAnswer: Yes").is_none());
    }

    proptest! {
        #[test]
        fn tag_counts_and_trailing_cue(
            texts in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,5}", 0..10),
            budget in 20usize..400,
        ) {
            let target = default_dimension("toxicity").unwrap();
            let source = default_dimension("lewd").unwrap();
            let shots: Vec<Shot> = texts.iter().enumerate().map(|(i, t)| {
                let (dim, prov) = if i % 3 == 0 { ("lewd", Provenance::Source) } else { ("toxicity", Provenance::Target) };
                shot(&format!("s{i}"), t, dim, Label::from_bool(i % 2 == 0), prov, (i * 7 % 5) as f64)
            }).collect();
            let q = Post::new("q", "the query", "d").unwrap();
            let spec = render(&shots, &q, Some(&source), &target).unwrap();
            for tag in ["Post:", "Question:", "Answer:"] {
                prop_assert_eq!(spec.rendered.matches(tag).count(), shots.len() + 1);
            }
            let tail = spec.rendered.rsplit("Answer:").next().unwrap();
            prop_assert_eq!(tail, "");
            prop_assert_eq!(&render(&shots, &q, Some(&source), &target).unwrap(), &spec);

            if let Ok(cut) = truncate_to_budget(&spec, budget, unit_token_count) {
                prop_assert!(unit_token_count(&cut.rendered) <= budget);
                let cue = format!("Post: the query\nQuestion: {}\nAnswer:", TOXICITY);
                prop_assert!(cut.rendered.ends_with(&cue));
                let pos = |s: &PromptSpec| s.shots.iter().filter(|x| x.label.is_positive()).count() as i64;
                let neg = |s: &PromptSpec| s.shots.len() as i64 - pos(s);
                let removed_pos = pos(&spec) - pos(&cut);
                let removed_neg = neg(&spec) - neg(&cut);
                // Pairs come off together unless one class runs dry first.
                prop_assert!(removed_pos == removed_neg || pos(&cut) == 0 || neg(&cut) == 0);
            }
        }
    }
}
