use proptest::prelude::*;
use tokensteer::corpus::{SpecialKind, Vocab};
use tokensteer::steering::{apply_bias, bias_from_scores, steered_distribution, softmax};

fn vocab(n: usize) -> Vocab {
    let mut v = Vocab::from_tokens((0..n).map(|i| format!("t{i}"))).unwrap();
    v.set_special(SpecialKind::Eos, 0).unwrap();
    v
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, n)
}

proptest! {
    #[test]
    fn bias_is_bounded(scores in logits(12).prop_map(|v| v.into_iter().map(|x| x * 3.0).collect::<Vec<_>>()),
                       lambda in 0.0f64..3.0, tau in 0.1f64..15.0) {
        let b = bias_from_scores(&scores, lambda, tau, &vocab(12)).unwrap();
        prop_assert!(b.values().iter().all(|x| x.abs() <= lambda * tau));
        prop_assert_eq!(b.values()[0], 0.0);
    }

    #[test]
    fn zero_lambda_is_neutral(scores in logits(10), z in logits(10), t in 0.1f64..5.0) {
        let b = bias_from_scores(&scores, 0.0, 8.0, &vocab(10)).unwrap();
        let steered = steered_distribution(&apply_bias(&z, &b).unwrap(), t).unwrap();
        let plain = steered_distribution(&z, t).unwrap();
        for (a, p) in steered.probs.iter().zip(&plain.probs) {
            prop_assert!((a - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_ignores_constant_shift(z in logits(9), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        let a = steered_distribution(&z, 1.0).unwrap().argmax();
        let b = steered_distribution(&shifted, 1.0).unwrap().argmax();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn probabilities_normalize(z in logits(15), t in 0.05f64..10.0) {
        let d = steered_distribution(&z, t).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(d.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn confidence_does_not_depend_on_temperature(z in logits(7), t in 0.05f64..10.0) {
        let a = steered_distribution(&z, t).unwrap();
        let b = steered_distribution(&z, 1.0).unwrap();
        prop_assert_eq!(a.confidence, b.confidence);
        let direct = softmax(&z, 1.0).into_iter().fold(0.0, f64::max);
        prop_assert_eq!(a.confidence, direct);
    }

    #[test]
    fn positive_bias_raises_that_token(z in logits(6), v in 1usize..6, s in 0.01f64..10.0, t in 0.2f64..5.0) {
        let mut scores = vec![0.0; 6];
        scores[v] = s;
        let b = bias_from_scores(&scores, 0.7, 8.0, &vocab(6)).unwrap();
        let steered = steered_distribution(&apply_bias(&z, &b).unwrap(), t).unwrap();
        let plain = steered_distribution(&z, t).unwrap();
        prop_assume!(plain.probs[v] < 1.0 - 1e-12);
        prop_assert!(steered.probs[v] > plain.probs[v]);
    }
}
