mod common;

use common::{formula_oracle, rel_close};
use proptest::prelude::*;
use tempfile::tempdir;
use tokensteer::corpus::{pooled_counts, ClassCounts, Vocab};
use tokensteer::scores::{build_prior, build_score_tables, log_odds, ScoreTable};
use tokensteer::tsv::Metadata;

fn counts_strategy(max_v: usize, max_c: u64) -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..=3, 2usize..=max_v).prop_flat_map(move |(k, v)| {
        prop::collection::vec(prop::collection::vec(0..=max_c, v), k)
    })
}

fn vocab_of(width: usize) -> Vocab {
    Vocab::from_tokens((0..width).map(|i| format!("t{i}"))).unwrap()
}

fn valid(rows: &[Vec<u64>]) -> bool {
    rows.iter().all(|r| r.iter().sum::<u64>() > 0) && {
        let width = rows[0].len();
        (0..width).filter(|&v| rows.iter().any(|r| r[v] > 0)).count() >= 2
    }
}

proptest! {
    #[test]
    fn matches_direct_oracle(rows in counts_strategy(6, 5), alpha in prop::sample::select(vec![0.01, 0.1])) {
        prop_assume!(valid(&rows));
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        let counts = ClassCounts::new(names, rows.clone()).unwrap();
        let tables = build_score_tables(&vocab_of(rows[0].len()), &counts, alpha, &Metadata::new()).unwrap();
        for (k, t) in tables.iter().enumerate() {
            for v in 0..t.len() {
                match formula_oracle(&rows, k, v, alpha) {
                    Some((d, var, z)) => {
                        prop_assert!(rel_close(t.delta[v], d, 1e-9));
                        prop_assert!(rel_close(t.variance[v], var, 1e-9));
                        prop_assert!(rel_close(t.zscore[v], z, 1e-9));
                        prop_assert!(rel_close(t.zscore[v], t.delta[v] / t.variance[v].sqrt(), 1e-9));
                    }
                    None => prop_assert_eq!((t.delta[v], t.variance[v], t.zscore[v]), (0.0, 0.0, 0.0)),
                }
            }
        }
    }

    #[test]
    fn binary_antisymmetry(rows in prop::collection::vec(prop::collection::vec(0u64..50, 8), 2)) {
        prop_assume!(valid(&rows));
        let counts = ClassCounts::new(vec!["p".into(), "n".into()], rows).unwrap();
        let t = build_score_tables(&vocab_of(8), &counts, 0.01, &Metadata::new()).unwrap();
        for v in 0..8 {
            prop_assert!(rel_close(t[0].delta[v], -t[1].delta[v], 1e-9));
            prop_assert!(rel_close(t[0].zscore[v], -t[1].zscore[v], 1e-9));
        }
    }

    #[test]
    fn adding_an_occurrence_raises_delta(rows in counts_strategy(6, 5), k in 0usize..3, v in 0usize..6) {
        prop_assume!(valid(&rows));
        let k = k % rows.len();
        let v = v % rows[0].len();
        let names: Vec<String> = (0..rows.len()).map(|i| format!("c{i}")).collect();
        let before = ClassCounts::new(names.clone(), rows.clone()).unwrap();
        let mut bumped_rows = rows.clone();
        bumped_rows[k][v] += 1;
        let after = ClassCounts::new(names, bumped_rows).unwrap();
        // hold the prior fixed so only c_k(v) and N_k move
        let prior = build_prior(&pooled_counts(&before), 0.01).unwrap();
        let d0 = log_odds(&before, k, &prior).unwrap();
        let d1 = log_odds(&after, k, &prior).unwrap();
        if rows.iter().any(|r| r[v] > 0) {
            prop_assert!(d1[v] > d0[v], "{} !> {}", d1[v], d0[v]);
        }
    }

    #[test]
    fn prior_total_is_consistent(pooled in prop::collection::vec(0u64..1000, 2..50), alpha in 1e-4f64..10.0) {
        prop_assume!(pooled.iter().filter(|&&c| c > 0).count() >= 2);
        let p = build_prior(&pooled, alpha).unwrap();
        let sum: f64 = p.mass().iter().sum();
        prop_assert!((sum - p.total()).abs() <= 1e-12 * p.total());
        for (m, &c) in p.mass().iter().zip(&pooled) {
            prop_assert_eq!(*m, alpha * c as f64);
        }
    }

    #[test]
    fn zero_signal_rule(rows in counts_strategy(6, 5)) {
        prop_assume!(valid(&rows));
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        let counts = ClassCounts::new(names, rows.clone()).unwrap();
        let pooled = pooled_counts(&counts);
        for t in build_score_tables(&vocab_of(rows[0].len()), &counts, 0.01, &Metadata::new()).unwrap() {
            for (v, &p) in pooled.iter().enumerate() {
                if p == 0 {
                    prop_assert_eq!(t.zscore[v], 0.0);
                }
                prop_assert!(t.zscore[v].is_finite() && t.delta[v].is_finite());
            }
        }
    }
}

#[test]
fn ten_thousand_token_table_round_trips() {
    let width = 10_000;
    let mut state = 7u64;
    let mut rows = vec![vec![0u64; width]; 3];
    for row in &mut rows {
        for c in row.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *c = (state >> 40) % 40;
        }
    }
    let counts = ClassCounts::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
    let mut params = Metadata::new();
    params.set("tokenizer", "whitespace-punct/lowercase");
    let tables = build_score_tables(&vocab_of(width), &counts, 0.01, &params).unwrap();
    let dir = tempdir().unwrap();
    for t in &tables {
        let path = dir.path().join(format!("{}.tsv", t.class_name));
        t.save(&path).unwrap();
        let back = ScoreTable::load(&path).unwrap();
        assert_eq!(back.meta, t.meta);
        assert_eq!(back.tokens, t.tokens);
        for v in 0..width {
            assert!(rel_close(back.zscore[v], t.zscore[v], 1e-12));
            assert!(rel_close(back.delta[v], t.delta[v], 1e-12));
            assert!(rel_close(back.variance[v], t.variance[v], 1e-12));
        }
    }
}
