mod common;

use std::fs;

use proptest::prelude::*;
use tempfile::tempdir;
use tokensteer::corpus::{
    load_labeled_corpus, pooled_counts, read_count_table, tokenize, write_count_table, TokenizerSpec, Vocab,
};
use tokensteer::tsv::Metadata;
use tokensteer::Error;

#[test]
fn two_class_fixture_counts() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("first", &["a a b"]), ("second", &["b b a"])]);
    let (vocab, counts) = load_labeled_corpus(dir.path(), TokenizerSpec::default()).unwrap();
    let a = vocab.id("a").unwrap() as usize;
    let b = vocab.id("b").unwrap() as usize;
    assert_eq!(counts.class_names(), ["first", "second"]);
    assert_eq!((counts.counts(0)[a], counts.counts(0)[b]), (2, 1));
    assert_eq!((counts.counts(1)[a], counts.counts(1)[b]), (1, 2));
    assert_eq!(counts.totals(), [3, 3]);
    let pooled = pooled_counts(&counts);
    assert_eq!((pooled[a], pooled[b]), (3, 3));
}

#[test]
fn three_line_file_matches_hand_tokenization() {
    let dir = tempdir().unwrap();
    common::write_corpus(
        dir.path(),
        &[
            ("x", &["The cat sat.", "  Dogs, cats & mice!", "it's 3pm"]),
            ("y", &["other"]),
        ],
    );
    let (vocab, counts) = load_labeled_corpus(dir.path(), TokenizerSpec::default()).unwrap();
    let hand = [
        "the", "cat", "sat", ".", "dogs", ",", "cats", "&", "mice", "!", "it", "'", "s", "3pm", "other",
    ];
    // first-seen order equals hand order since every token above is new when met
    assert_eq!(vocab.tokens(), hand);
    assert_eq!(counts.total(0), 14);
}

#[test]
fn class_order_is_lexicographic_and_reload_is_identical() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("zeta", &["q r"]), ("alpha", &["r s"]), ("mid", &["s q"])]);
    let first = load_labeled_corpus(dir.path(), TokenizerSpec::default()).unwrap();
    let second = load_labeled_corpus(dir.path(), TokenizerSpec::default()).unwrap();
    assert_eq!(first.1.class_names(), ["alpha", "mid", "zeta"]);
    assert_eq!(first, second);
}

#[test]
fn one_class_is_a_configuration_error() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("only", &["a b"])]);
    assert!(matches!(
        load_labeled_corpus(dir.path(), TokenizerSpec::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn empty_class_is_named() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("full", &["a b"]), ("hollow", &["", "   "])]);
    match load_labeled_corpus(dir.path(), TokenizerSpec::default()) {
        Err(Error::Config(msg)) => assert!(msg.contains("hollow"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_utf8_names_file_and_line() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("p", &["fine"]), ("q", &["fine"])]);
    fs::write(dir.path().join("q").join("broken.txt"), b"ok line\nbad \xff byte\n").unwrap();
    match load_labeled_corpus(dir.path(), TokenizerSpec::default()) {
        Err(Error::Utf8 { path, line }) => {
            assert!(path.ends_with("broken.txt"));
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_root_is_io_error() {
    let dir = tempdir().unwrap();
    let err = load_labeled_corpus(&dir.path().join("nope"), TokenizerSpec::default()).unwrap_err();
    assert!(err.to_string().contains("nope"));
}

#[test]
fn count_table_export_format() {
    let dir = tempdir().unwrap();
    common::write_corpus(dir.path(), &[("first", &["a a b"]), ("second", &["b b a"])]);
    let (vocab, counts) = load_labeled_corpus(dir.path(), TokenizerSpec::default()).unwrap();
    let text = write_count_table(&vocab, &counts, &Metadata::new()).unwrap();
    assert_eq!(text, "token\tid\tc_first\tc_second\na\t0\t2\t1\nb\t1\t1\t2\n# totals:\t3 3\n");
    let (v2, c2, _) = read_count_table(&text).unwrap();
    assert_eq!((v2, c2), (vocab, counts));
}

proptest! {
    #[test]
    fn tokenization_is_deterministic(text in "\\PC{0,60}") {
        let mut v1 = Vocab::new();
        let mut v2 = Vocab::new();
        let a = tokenize(&text, TokenizerSpec::default(), &mut v1).unwrap();
        let b = tokenize(&text, TokenizerSpec::default(), &mut v2).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(v1, v2);
    }

    #[test]
    fn pooled_conserves_mass(rows in prop::collection::vec(prop::collection::vec(0u64..20, 5), 2..5)) {
        prop_assume!(rows.iter().all(|r| r.iter().sum::<u64>() > 0));
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        let counts = tokensteer::corpus::ClassCounts::new(names, rows).unwrap();
        let pooled = pooled_counts(&counts);
        prop_assert_eq!(pooled.iter().sum::<u64>(), counts.totals().iter().sum::<u64>());
    }

    #[test]
    fn token_multiset_ignores_file_order(lines in prop::collection::vec("[a-c ,.]{0,12}", 1..6)) {
        // Same documents split across files in two different orders.
        let dir1 = tempdir().unwrap();
        let dir2 = tempdir().unwrap();
        for (dir, rev) in [(&dir1, false), (&dir2, true)] {
            let class = dir.path().join("k");
            fs::create_dir_all(&class).unwrap();
            fs::create_dir_all(dir.path().join("other")).unwrap();
            fs::write(dir.path().join("other").join("o.txt"), "zz").unwrap();
            for (i, l) in lines.iter().enumerate() {
                let name = if rev { lines.len() - i } else { i };
                fs::write(class.join(format!("{name:03}.txt")), format!("{l} q")).unwrap();
            }
        }
        let (v1, c1) = load_labeled_corpus(dir1.path(), TokenizerSpec::default()).unwrap();
        let (v2, c2) = load_labeled_corpus(dir2.path(), TokenizerSpec::default()).unwrap();
        let bag = |v: &Vocab, c: &tokensteer::corpus::ClassCounts| {
            let mut m: Vec<(String, u64)> =
                v.tokens().iter().cloned().zip(c.counts(0).iter().copied()).collect();
            m.sort();
            m
        };
        prop_assert_eq!(bag(&v1, &c1), bag(&v2, &c2));
    }
}
