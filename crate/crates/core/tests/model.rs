mod common;

use blockdiff::backbone::{Model, ModelConfig, ModelInput};
use blockdiff::corruption::{MaskSchedule, ScheduleKind};
use blockdiff::maskgen::{causal_mask, training_mask};
use blockdiff::objectives::prepare_hybrid;
use blockdiff::rng::stream;
use blockdiff::tasks::{gen_icl, IclConfig};
use blockdiff::Paradigm;
use proptest::prelude::*;

#[test]
fn regression_gradients_match_finite_differences() {
    let icl = IclConfig { d: 3, p: 2, r: 2, unit_norm: false };
    let sched = MaskSchedule::new(ScheduleKind::Uniform, Some((0.5, 0.5))).unwrap();
    let model = common::rough::<f64>(ModelConfig::regression(16, 2, 2, 3, 8), 3);
    let h = 1e-5;
    for paradigm in Paradigm::ALL {
        let seq = gen_icl(&icl, &mut stream(1, "reg", 0)).unwrap().seq;
        let prep = (0..50)
            .map(|i| prepare_hybrid(paradigm, &seq, 2, &sched, &mut stream(2, "reg", i)).unwrap())
            .find(|p| p.loss(&model.forward(&p.input, &p.mask).unwrap()).unwrap().is_some())
            .unwrap();
        let loss_at = |m: &Model<f64>| prep.loss(&m.forward(&prep.input, &prep.mask).unwrap()).unwrap().unwrap().report.total;
        let (out, tape) = model.forward_train(&prep.input, &prep.mask).unwrap();
        let loss = prep.loss(&out).unwrap().unwrap();
        let grads = model.backward(&tape, &loss.grad).unwrap().params;
        for (ti, (name, g)) in grads.tensors().into_iter().enumerate() {
            for idx in [0, g.len() / 2, g.len() - 1] {
                let shifted = |d: f64| {
                    let mut m = model.clone();
                    *m.params.tensors_mut()[ti].1.iter_mut().nth(idx).unwrap() += d;
                    loss_at(&m)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = *g.iter().nth(idx).unwrap();
                let scale = a.abs().max(fd.abs()).max(1e-6);
                assert!((a - fd).abs() / scale < 1e-4, "{paradigm} {name}[{idx}]: {a} vs {fd}");
            }
        }
    }
}

#[test]
fn training_masks_match_the_paradigm_builders() {
    for p in Paradigm::ALL {
        let m = training_mask(p, 10, 2, 4);
        if p.uses_blocks() {
            assert!(training_mask(p, 10, 2, 3).is_err(), "{p}: ragged blocks accepted");
        }
        let m = m.unwrap();
        assert_eq!(m.size(), 10);
        assert!((0..10).all(|u| m.get(u, u)), "{p}: missing self-attention");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    /// Under a causal mask, changing a later token leaves earlier outputs untouched.
    #[test]
    fn causal_outputs_ignore_the_future(seed in 0u64..1000, at in 1usize..10, tok in 0u32..6) {
        let model = common::tiny_model::<f64>(8, 10, seed);
        let seq = common::random_seq(0, 10, seed);
        let mut edited = seq.tokens.clone();
        edited[at] = tok;
        let mask = causal_mask(10).unwrap();
        let a = model.forward(&ModelInput::tokens(&seq.tokens), &mask).unwrap().logits.unwrap();
        let b = model.forward(&ModelInput::tokens(&edited), &mask).unwrap().logits.unwrap();
        for u in 0..at {
            for v in 0..8 {
                prop_assert_eq!(a[[u, v]], b[[u, v]]);
            }
        }
    }
}
