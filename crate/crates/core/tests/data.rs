use infill::data::{load_jsonl, parse_jsonl, save_jsonl, synth_corpus, to_jsonl, WorldConfig};

#[test]
fn synth_round_trips_through_jsonl() {
    let corpus = synth_corpus(5, 40, WorldConfig::proportional(40)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    save_jsonl(&path, &corpus.train).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), corpus.train);
}

#[test]
fn synth_is_deterministic_and_split() {
    let a = synth_corpus(9, 300, WorldConfig::proportional(300)).unwrap();
    let b = synth_corpus(9, 300, WorldConfig::proportional(300)).unwrap();
    assert_eq!(to_jsonl(&a.train).unwrap(), to_jsonl(&b.train).unwrap());
    assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (300, 50, 50));
    let mut ids: Vec<&str> = a.all().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 400);
}

#[test]
fn accepts_common_field_spellings() {
    let src = r#"{"story_id": "s1", "obs1": "A", "obs2": "B", "hyp1": "x", "hyp2": "y", "label": 2}
{"id": 7, "obs1": "C", "obs2": "D", "hyps": ["p", "q"]}

{"obs1": "E", "obs2": "F", "hyp": "  h  "}
"#;
    let got = parse_jsonl(src, "mem").unwrap();
    assert_eq!(got[0].id, "s1");
    assert_eq!(got[0].gold_hyps, ["y"]);
    assert_eq!(got[1].id, "7");
    assert_eq!(got[1].gold_hyps, ["p", "q"]);
    assert_eq!(got[2].id, "line-4");
    assert_eq!(got[2].gold_hyps, ["h"]);
}

#[test]
fn errors_name_the_line() {
    let src = "{\"obs1\": \"a\", \"obs2\": \"b\"}\n{\"obs1\": \"a\"}\n";
    let msg = parse_jsonl(src, "bad.jsonl").unwrap_err().to_string();
    assert!(msg.contains("bad.jsonl") && msg.contains('2'), "{msg}");
    assert!(parse_jsonl("not json\n", "x").is_err());
    assert!(parse_jsonl("{\"obs1\": \"\", \"obs2\": \"b\"}\n", "x").is_err());
}
