use pico::model::Role;
use pico::nas::{
    filter_space, rank_candidates, read_records, sample_and_cost, write_records, write_records_file, ConstantCost,
    KmacsLinearCost, SearchSpace, TableCost,
};

fn small_space() -> SearchSpace {
    let mut text = SearchSpace::decoder().to_text();
    text = text.replace("C1 96,128,160", "C1 96");
    SearchSpace::parse(&text).unwrap()
}

#[test]
fn space_file_roundtrip_and_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("space.txt");
    std::fs::write(&path, SearchSpace::encoder().to_text()).unwrap();
    let s = SearchSpace::resolve(path.to_str().unwrap()).unwrap();
    assert_eq!(s, SearchSpace::encoder());
    assert_eq!(small_space().cardinality() * 3, SearchSpace::decoder().cardinality());
}

#[test]
fn filter_is_independent_of_thread_count() {
    let space = small_space();
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| filter_space(&space, 32.7, 48.0).unwrap())
    };
    let one = run(1);
    assert!(!one.is_empty());
    assert_eq!(run(4), one);
    assert!(one.windows(2).all(|w| w[0].index < w[1].index));
}

#[test]
fn sample_rank_and_csv_pipeline() {
    let space = small_space();
    let recs = filter_space(&space, 32.7, 48.0).unwrap();
    let cm = KmacsLinearCost { a: 1.0, b: 0.0 };
    let s = sample_and_cost(&recs, 500, 9, &cm, 40.0, 0.1).unwrap();
    assert_eq!(s.sampled, 500);
    assert_eq!(s.dropped, 0);
    assert!(s.retained.iter().all(|r| (r.kmacs - 40.0).abs() <= 4.0));
    assert_eq!(sample_and_cost(&recs, 500, 9, &cm, 40.0, 0.1).unwrap(), s);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let mut scored = s.retained.clone();
    for (i, r) in scored.iter_mut().enumerate() {
        r.metric = Some((i % 7) as f64);
    }
    write_records_file(&path, &scored).unwrap();
    let back = read_records(std::fs::File::open(&path).unwrap(), Role::OuterDecoder).unwrap();
    assert_eq!(back.len(), scored.len());
    for (a, b) in back.iter().zip(&scored) {
        assert_eq!((a.index, &a.config, a.runtime_ms, a.metric), (b.index, &b.config, b.runtime_ms, b.metric));
        assert!((a.kmacs - b.kmacs).abs() < 1e-6);
    }
    let top = rank_candidates(&back, 3, true).unwrap();
    assert!(top.iter().all(|r| r.metric == Some(6.0)));
}

#[test]
fn table_cost_drops_unknown_configs() {
    let space = small_space();
    let recs = filter_space(&space, 32.7, 48.0).unwrap();
    let csv = format!("config-id,runtime_ms\n{},12.5\n", recs[0].index);
    let cm = TableCost::from_csv(csv.as_bytes()).unwrap();
    let s = sample_and_cost(&recs[..10], 10, 0, &cm, 12.5, 0.01).unwrap();
    assert_eq!((s.dropped, s.retained.len()), (9, 1));
    let all = sample_and_cost(&recs[..10], 10, 0, &ConstantCost(5.0), 5.0, 0.01).unwrap();
    assert_eq!(all.retained.len(), 10);
    let mut out = Vec::new();
    write_records(&mut out, &all.retained).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("config-id,C1,R11,E11,F11"));
}
