use std::fs;
use std::path::PathBuf;

use atf::core::Label;
use atf::dataset::{load_canonical, load_dataset, merged_registry, write_jsonl, Format, Schema};
use atf::Error;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

const THREE_ROWS: &str = r#"{"id": "a1", "text": "you people are the worst", "offensive": 1}
{"id": "a2", "text": "lovely weather today", "offensive": 0}
{"id": "a3", "text": "no opinion", "offensive": null}
"#;

#[test]
fn three_row_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.jsonl", THREE_ROWS);
    let b = load_dataset(&path, Format::Jsonl, &Schema::with_dimensions(["offensive"]), &merged_registry(&[]), "d").unwrap();
    assert_eq!(b.len(), 3);
    let dims: Vec<&str> = b.dimensions().iter().map(|d| d.name.as_str()).collect();
    assert_eq!(dims, ["offensive"]);
    assert_eq!(b.label("a1", "offensive"), Some(Label::Positive));
    assert_eq!(b.label("a2", "offensive"), Some(Label::Negative));
    assert_eq!(b.label("a3", "offensive"), None);
    assert!(b.posts().iter().all(|p| p.dataset == "d"));
}

#[test]
fn duplicate_id_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{THREE_ROWS}{{\"id\": \"a1\", \"text\": \"again\", \"offensive\": 0}}\n");
    let path = write(&dir, "d.jsonl", &body);
    let err = load_dataset(&path, Format::Jsonl, &Schema::with_dimensions(["offensive"]), &merged_registry(&[]), "d")
        .unwrap_err();
    match &err {
        Error::DuplicateId(id) => assert_eq!(id, "a1"),
        other => panic!("expected duplicate id, got {other:?}"),
    }
    assert!(err.to_string().contains("a1"));
}

#[test]
fn sbic_shaped_csv() {
    let dir = tempfile::tempdir().unwrap();
    let body = "post_id,post,offensiveYN,intentYN,sexYN,whoTarget\n\
                p1,\"what a, joke\",1,1,0,1\n\
                p2,nice post,0,0,0,\n\
                p3,\"ugh\",1.0,0.0,1,0\n";
    let path = write(&dir, "sbic.csv", body);
    let schema: Schema = toml::from_str(
        r#"
id = "post_id"
text = "post"
[labels]
offensiveYN = "offensive"
intentYN = "intent"
sexYN = "lewd"
whoTarget = "group"
"#,
    )
    .unwrap();
    let b = load_dataset(&path, Format::Csv, &schema, &merged_registry(&[]), "sbic").unwrap();
    let dims: Vec<&str> = b.dimensions().iter().map(|d| d.name.as_str()).collect();
    assert_eq!(dims, ["offensive", "intent", "lewd", "group"]);
    assert_eq!(b.post("p1").unwrap().text, "what a, joke");
    assert_eq!(b.label("p3", "lewd"), Some(Label::Positive));
    assert_eq!(b.label("p2", "group"), None);
    assert_eq!(b.dimension("lewd").unwrap().definition, "Does this post contain sexual content?");
}

#[test]
fn missing_text_reports_row() {
    let dir = tempfile::tempdir().unwrap();
    let body = "{\"id\": \"a1\", \"text\": \"fine\", \"offensive\": 1}\n{\"id\": \"a2\", \"offensive\": 0}\n";
    let path = write(&dir, "d.jsonl", body);
    let err = load_dataset(&path, Format::Jsonl, &Schema::with_dimensions(["offensive"]), &merged_registry(&[]), "d")
        .unwrap_err();
    assert!(matches!(err, Error::MissingText { row: 2 }), "{err:?}");
}

#[test]
fn unknown_dimension_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.jsonl", THREE_ROWS);
    let schema = Schema { labels: [("offensive".to_string(), "sarcasm".to_string())].into(), ..Schema::default() };
    let err = load_dataset(&path, Format::Jsonl, &schema, &merged_registry(&[]), "d").unwrap_err();
    assert!(matches!(err, Error::UnknownDimension(ref d) if d == "sarcasm"), "{err:?}");
}

#[test]
fn malformed_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.jsonl", "{\"id\": \"a1\", \"text\": \"x\"}\n{not json\n");
    let err = load_dataset(&path, Format::Jsonl, &Schema::default(), &merged_registry(&[]), "d").unwrap_err();
    assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err:?}");
}

#[test]
fn canonical_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.jsonl", THREE_ROWS);
    let registry = merged_registry(&[]);
    let b = load_dataset(&path, Format::Jsonl, &Schema::with_dimensions(["offensive"]), &registry, "d").unwrap();
    let out = dir.path().join("canonical.jsonl");
    write_jsonl(&b, &out).unwrap();
    let back = load_canonical(&out, &registry, "d").unwrap();
    assert_eq!(back.posts(), b.posts());
    assert_eq!(back.labels(), b.labels());
    let first = fs::read_to_string(&out).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first, r#"{"id":"a1","text":"you people are the worst","labels":{"offensive":1}}"#);
}
