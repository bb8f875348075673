mod common;

use tokensteer::contract::{check_equivalent, check_provider};
use tokensteer::corpus::{LabeledCorpus, TokenizerSpec};
use tokensteer::decoder::{decode, DecodeConfig, LogitProvider};
use tokensteer::mockmodel::MockModel;
use tokensteer::provider::{EchoProvider, SubprocessProvider};
use tokensteer::steering::bias_from_scores;
use tokensteer::Error;

const ECHO: &str = env!("CARGO_BIN_EXE_echo-provider");

fn spawn(args: &[&str]) -> tokensteer::Result<SubprocessProvider> {
    SubprocessProvider::spawn(ECHO, &args.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

#[test]
fn mock_model_passes_contract() {
    let dir = tempfile::tempdir().unwrap();
    common::synthetic_corpus(dir.path(), 20);
    let corpus = LabeledCorpus::read(dir.path(), TokenizerSpec::default()).unwrap();
    let model = MockModel::train_on_corpus(&corpus, 0.7, 0.1).unwrap();
    check_provider(&model).unwrap();
}

#[test]
fn echo_in_process_passes_contract() {
    check_provider(&EchoProvider::new(6)).unwrap();
}

#[test]
fn subprocess_adapter_passes_contract_and_matches_reference() {
    let remote = spawn(&["6"]).unwrap();
    check_provider(&remote).unwrap();
    check_equivalent(&remote, &EchoProvider::new(6)).unwrap();
}

#[test]
fn decoding_through_subprocess_is_identical() {
    let remote = spawn(&["5"]).unwrap();
    let local = EchoProvider::new(5);
    let scores: Vec<f64> = (0..local.vocab().len()).map(|i| (i as f64 - 3.0) * 2.5).collect();
    let bias = bias_from_scores(&scores, 0.7, 8.0, local.vocab()).unwrap();
    for seed in 0..3 {
        let cfg = DecodeConfig {
            block_len: 4,
            num_steps: 4,
            max_new_tokens: 8,
            seed,
            ..DecodeConfig::default()
        };
        let a = decode(&[3, 4], &remote, Some(&bias), &cfg).unwrap();
        let b = decode(&[3, 4], &local, Some(&bias), &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn faulty_responses_abort_with_protocol_errors() {
    for fault in ["wrong-id", "short", "null", "garbage", "eof"] {
        let remote = spawn(&["4", "--fault", fault]).unwrap();
        let cfg = DecodeConfig {
            block_len: 2,
            num_steps: 2,
            max_new_tokens: 2,
            ..DecodeConfig::default()
        };
        let err = decode(&[3], &remote, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{fault}: {err}");
    }
}

#[test]
fn missing_program_is_reported() {
    assert!(SubprocessProvider::spawn("/definitely/not/here", &[]).is_err());
}
