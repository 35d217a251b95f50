use std::fs;
use std::path::Path;

use kgcap::dataset::{Dataset, Split, Vocabulary};
use kgcap::kg::KnowledgeGraph;
use kgcap::vectors::VectorStore;

fn fixture(name: &str) -> Vec<u8> {
    fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

#[test]
fn fixture_dataset_round_trips() {
    let ds = Dataset::load(fixture("train.jsonl").as_slice(), Split::Train).unwrap();
    assert_eq!(ds.len(), 16);
    assert_eq!(ds.feature_dim, 6);
    let mut buf = Vec::new();
    ds.export(&mut buf).unwrap();
    assert_eq!(Dataset::load(buf.as_slice(), Split::Train).unwrap(), ds);
}

#[test]
fn vocabulary_round_trips_through_json() {
    let ds = Dataset::load(fixture("train.jsonl").as_slice(), Split::Train).unwrap();
    let v = Vocabulary::build(&ds, 1).unwrap();
    let entries: Vec<_> = serde_json::from_str(&v.to_json().unwrap()).unwrap();
    assert_eq!(Vocabulary::from_entries(&entries).unwrap(), v);
    assert_eq!(v.unk_rate(&ds), 0.0);
}

#[test]
fn fixture_graph_and_vectors_load() {
    let g = KnowledgeGraph::ingest(fixture("graph.csv").as_slice()).unwrap();
    assert_eq!(g.edge_count(), 27);
    let store = VectorStore::load(fixture("vectors.txt").as_slice()).unwrap();
    assert_eq!(store.dim(), 4);
    let mut buf = Vec::new();
    store.export(&mut buf).unwrap();
    assert_eq!(VectorStore::load(buf.as_slice()).unwrap(), store);
}

#[test]
fn malformed_records_report_their_line() {
    let bad = "{\"image_id\":\"a\",\"feature\":[1.0],\"detections\":[],\"references\":[\"x\"]}\n\
               {\"image_id\":\"b\",\"feature\":[1.0, 2.0],\"detections\":[],\"references\":[\"x\"]}\n";
    let err = Dataset::load(bad.as_bytes(), Split::Train).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
    let dup = "{\"image_id\":\"a\",\"feature\":[1.0],\"detections\":[],\"references\":[\"x\"]}\n".repeat(2);
    assert!(Dataset::load(dup.as_bytes(), Split::Train).is_err());
}
