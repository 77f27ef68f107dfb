use std::io::BufReader;

use feasible_cf::oracle::{read_labels, write_labels, LabelRecord, LabeledQuery, Provenance, QuerySet};
use feasible_cf::pipeline::SimpleBnData;

fn query(id: u64, x: f64, label: Option<u8>) -> LabeledQuery {
    LabeledQuery {
        query_id: id,
        x: vec![x, 0.5, 0.5],
        cf: vec![x, 0.6, 0.7],
        target: 1,
        label,
        provenance: None,
        timestamp: 0,
    }
}

fn set(queries: Vec<LabeledQuery>) -> QuerySet {
    QuerySet {
        queries,
        fraction: 0.1,
        per_input: 3,
        seed: 0,
    }
}

#[test]
fn budget_takes_labeled_queries_round_robin_over_inputs() {
    let qs = set(vec![
        query(0, 0.1, Some(1)),
        query(1, 0.1, Some(0)),
        query(2, 0.1, Some(1)),
        query(3, 0.2, None),
        query(4, 0.2, Some(0)),
        query(5, 0.3, Some(1)),
    ]);
    let ids = |n| qs.budget(n).queries.iter().map(|q| q.query_id).collect::<Vec<_>>();
    assert_eq!(ids(3), vec![0, 4, 5]);
    assert_eq!(ids(5), vec![0, 4, 5, 1, 2]);
    assert_eq!(ids(50).len(), 5);
}

#[test]
fn query_sets_round_trip_through_json() {
    let qs = set(vec![query(0, 0.1, Some(1)), query(1, 0.4, None)]);
    assert_eq!(QuerySet::from_json(&qs.to_json()).unwrap(), qs);
}

#[test]
fn label_records_round_trip_through_jsonl_and_apply() {
    let d = SimpleBnData::generate(200, 1).unwrap();
    let schema = &d.data.schema;
    let mut qs = set(vec![query(0, 0.1, None), query(1, 0.4, None)]);
    let records: Vec<LabelRecord> = qs
        .queries
        .iter()
        .map(|q| LabelRecord::from_query(schema, q, (q.query_id % 2) as u8, Provenance::Human, 17).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_labels(&mut buf, &records).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
    let back = read_labels(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, records);
    qs.apply_labels(&back).unwrap();
    assert_eq!(qs.queries[0].label, Some(0));
    assert_eq!(qs.queries[1].label, Some(1));
    assert_eq!(qs.queries[1].provenance, Some(Provenance::Human));
}

#[test]
fn out_of_range_labels_are_rejected_when_read() {
    let line = r#"{"query_id":0,"x":{"x1":1.0},"cf":{"x1":2.0},"label":2,"provenance":{"source":"human"},"timestamp":0}"#;
    assert!(read_labels(BufReader::new(line.as_bytes())).is_err());
}
