mod common;

use std::collections::BTreeSet;

use blockdiff::exec::Execution;
use blockdiff::samplers::{decode, decode_batch, DecodeConfig, Problem, UnmaskRule};
use blockdiff::Paradigm;
use proptest::prelude::*;

fn configs(l: usize) -> Vec<DecodeConfig> {
    let mut out = Vec::new();
    for p in Paradigm::ALL {
        for s in [1usize, 2, 4] {
            if l % s != 0 || (!p.uses_blocks() && s > 1) {
                continue;
            }
            for t in [1usize, 3] {
                for rule in [UnmaskRule::LowConfidenceRemask, UnmaskRule::TopKPerStep] {
                    let mut c = DecodeConfig::new(p, t, s).unwrap();
                    c.unmask_rule = rule;
                    out.push(c);
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    /// Every response position is written exactly once, no mask survives and
    /// the prompt is untouched.
    #[test]
    fn decoding_completes_each_position_once(seed in 0u64..500, blocks in 1usize..4) {
        let vocab = common::vocab();
        let l = 4 * blocks;
        let prompt = common::random_seq(3, 0, seed).tokens;
        let model = common::tiny_model::<f32>(8, 3 + l, seed);
        let problem = Problem::tokens(&prompt, l, &vocab);
        for cfg in configs(l) {
            let trace = decode(&model, &problem, &cfg).unwrap();
            let out = trace.final_.tokens().unwrap();
            prop_assert_eq!(out.prompt(), &prompt[..]);
            prop_assert!(out.response().iter().all(|&t| t != vocab.mask_id()), "{:?}", cfg);
            let order = trace.commit_order();
            prop_assert_eq!(order.len(), l);
            let unique: BTreeSet<usize> = order.iter().copied().collect();
            prop_assert_eq!(unique, (3..3 + l).collect::<BTreeSet<_>>());
            if matches!(cfg.paradigm, Paradigm::Block | Paradigm::Jigsaw) {
                let blocks: BTreeSet<usize> = trace.block_order.iter().copied().collect();
                prop_assert_eq!(blocks, (0..l / cfg.block_size).collect::<BTreeSet<_>>());
            }
        }
    }
}

#[test]
fn block_and_ar_commit_left_to_right() {
    let vocab = common::vocab();
    let model = common::tiny_model::<f32>(8, 10, 1);
    let problem = Problem::tokens(&[1, 2], 8, &vocab);
    let ar = decode(&model, &problem, &DecodeConfig::new(Paradigm::Ar, 1, 1).unwrap()).unwrap();
    assert_eq!(ar.commit_order(), (2..10).collect::<Vec<_>>());
    let block = decode(&model, &problem, &DecodeConfig::new(Paradigm::Block, 2, 4).unwrap()).unwrap();
    assert_eq!(block.block_order, vec![0, 1]);
    let order = block.commit_order();
    assert!(order[..4].iter().all(|&p| p < 6) && order[4..].iter().all(|&p| p >= 6));
}

#[test]
fn batch_decoding_is_identical_across_execution_modes() {
    let vocab = common::vocab();
    let model = common::tiny_model::<f32>(8, 10, 2);
    let problems: Vec<Problem> =
        (0..6).map(|i| Problem::tokens(&common::random_seq(2, 0, i).tokens, 8, &vocab)).collect();
    for p in Paradigm::ALL {
        let mut cfg = DecodeConfig::new(p, 2, 2).unwrap();
        cfg.temperature = 0.8;
        cfg.seed = 5;
        let a = decode_batch(&model, &problems, &cfg, Execution::Sequential).unwrap();
        let b = decode_batch(&model, &problems, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b, "{p}");
        assert_eq!(a, decode_batch(&model, &problems, &cfg, Execution::Sequential).unwrap());
    }
}
