use std::fs;
use std::path::Path;

use proptest::prelude::*;

use msda::data::{amazon::adapt_amazon, load_canonical, pheme::adapt_pheme, write_canonical};
use msda::{DatasetBundle, DomainId, Error, Example};

fn example(id: String, text: String, label: Option<u8>, domain: &str) -> Example {
    Example {
        id,
        text,
        label,
        domain: DomainId::new(domain).unwrap(),
    }
}

fn arb_bundle() -> impl Strategy<Value = Vec<Example>> {
    let line = ("[a-z]{1,8}( [a-z\"'\\\\é]{1,8}){0,6}", prop::option::of(0u8..2), 0usize..3);
    prop::collection::vec(line, 4..40).prop_map(|lines| {
        let domains = ["books", "dvd", "kitchen"];
        let mut out: Vec<Example> = lines
            .into_iter()
            .enumerate()
            .map(|(i, (text, label, d))| example(format!("x{i}"), text, label, domains[d]))
            .collect();
        // at least two labelled domains
        out.push(example("fix-a".into(), "alpha".into(), Some(1), "books"));
        out.push(example("fix-b".into(), "beta".into(), Some(0), "dvd"));
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn canonical_files_round_trip(examples in arb_bundle()) {
        let bundle = DatasetBundle::from_examples(examples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(&bundle, dir.path()).unwrap();
        let back = load_canonical(dir.path()).unwrap();
        prop_assert_eq!(&back, &bundle);
        // writing again gives the same bytes
        let again = tempfile::tempdir().unwrap();
        write_canonical(&back, again.path()).unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let p = entry.unwrap().path();
            let q = again.path().join(p.file_name().unwrap());
            prop_assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
        }
    }
}

#[test]
fn malformed_lines_report_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("books.jsonl"),
        "{\"id\":\"a\",\"text\":\"fine\",\"label\":1,\"domain\":\"books\"}\n{\"id\":\"b\",\"text\":\"x\",\"label\":3,\"domain\":\"books\"}\n",
    )
    .unwrap();
    match load_canonical(dir.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(dir.path().join("books.jsonl"), "{\"id\":\"a\",\"txt\":\"x\",\"domain\":\"books\"}\n").unwrap();
    assert!(matches!(load_canonical(dir.path()), Err(Error::Parse { line: 1, .. })));
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn reviews(texts: &[&str]) -> String {
    texts
        .iter()
        .map(|t| format!("<review>\n<rating>\n4.0\n</rating>\n<review_text>\n{t}\n</review_text>\n</review>\n"))
        .collect()
}

#[test]
fn amazon_layout_is_ingested() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    for cat in ["books", "dvd"] {
        let d = raw.path().join(cat);
        write(&d.join("positive.review"), &reviews(&["a  fine\nread", "loved it"]));
        write(&d.join("negative.review"), &reviews(&["dull", "   "]));
    }
    write(&raw.path().join("dvd/unlabeled.review"), &reviews(&["no idea"]));
    let summary = adapt_amazon(raw.path(), out.path()).unwrap();
    let dvd = summary.domains.iter().find(|c| c.domain.as_str() == "dvd").unwrap();
    assert_eq!((dvd.positive, dvd.negative, dvd.unlabelled), (2, 1, 1));
    let bundle = load_canonical(out.path()).unwrap();
    let books = &bundle.sources()[&DomainId::new("books").unwrap()];
    assert_eq!(books[0].text, "a fine read");
    assert_eq!(books[0].label, Some(1));
    assert_eq!(books.iter().filter(|e| e.label == Some(0)).count(), 1);
    assert_eq!(bundle.unlabelled_pools()[&DomainId::new("dvd").unwrap()].len(), 1);
}

#[test]
fn amazon_unknown_layout_is_rejected() {
    let raw = tempfile::tempdir().unwrap();
    write(&raw.path().join("books/reviews.txt"), "x");
    let out = tempfile::tempdir().unwrap();
    let err = adapt_amazon(raw.path(), out.path()).unwrap_err();
    assert!(err.to_string().contains("positive.review"), "{err}");
}

#[test]
fn pheme_layout_is_ingested() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let ev = raw.path().join("ottawashooting-all-rnr-threads");
    write(&ev.join("rumours/1/source-tweets/1.json"), r#"{"text": "shots fired downtown"}"#);
    write(&ev.join("rumours/2/source-tweets/2.json"), "not json");
    write(&ev.join("non-rumours/3/source-tweets/3.json"), r#"{"text": "stay safe everyone", "id": 3}"#);
    let ev2 = raw.path().join("sydneysiege");
    write(&ev2.join("non-rumours/4/source-tweets/4.json"), r#"{"full_text": "hostages"}"#);
    write(&raw.path().join("ebola/annotations.txt"), "");
    let summary = adapt_pheme(raw.path(), out.path()).unwrap();
    assert_eq!(summary.skipped, 2);
    assert!(!summary.warnings.is_empty());
    let bundle = load_canonical(out.path()).unwrap();
    let ottawa = &bundle.sources()[&DomainId::new("ottawashooting").unwrap()];
    assert_eq!(ottawa.len(), 2);
    assert_eq!(ottawa.iter().find(|e| e.label == Some(1)).unwrap().text, "shots fired downtown");
    assert!(bundle.sources().contains_key(&DomainId::new("sydneysiege").unwrap()));
}
