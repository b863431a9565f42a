use std::collections::BTreeMap;

use blockdiff::corruption::{corrupt_iid, corrupt_weighted, sample_weighted_flags, MaskSchedule, ScheduleKind};
use blockdiff::rng::stream;
use blockdiff::seqcore::{TokenSequence, Vocab};
use proptest::prelude::*;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

fn vocab() -> Vocab {
    Vocab::new(8, 6, Some(7), BTreeMap::new()).unwrap()
}

fn seq(prompt: usize, response: usize) -> TokenSequence {
    TokenSequence::new((0..prompt + response).map(|i| (i % 5) as u32).collect(), prompt).unwrap()
}

#[test]
fn iid_masked_count_is_binomial() {
    let (n, tau, draws) = (10usize, 0.3, 10_000usize);
    let s = seq(3, n);
    let mut r = stream(11, "chi", 0);
    let mut counts = vec![0usize; n + 1];
    for _ in 0..draws {
        counts[corrupt_iid(&s, &vocab(), tau, &mut r).unwrap().masked_count()] += 1;
    }
    let pmf = Binomial::new(tau, n as u64).unwrap();
    // pool sparse tail bins so every expected count is at least 5
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (k, &c) in counts.iter().enumerate() {
        obs += c as f64;
        exp += pmf.pmf(k as u64) * draws as f64;
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += obs;
        last.1 += exp;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let crit = ChiSquared::new((bins.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
    assert!(stat < crit, "chi-square {stat} over critical {crit}");
}

/// Exact marginal inclusion probabilities of successive weighted draws
/// without replacement, by enumerating every draw order.
fn exact_inclusion(weights: &[f64], k: usize) -> Vec<f64> {
    fn go(weights: &[f64], taken: &mut Vec<bool>, left: usize, p: f64, acc: &mut [f64]) {
        if left == 0 {
            for (i, &t) in taken.iter().enumerate() {
                if t {
                    acc[i] += p;
                }
            }
            return;
        }
        let total: f64 = weights.iter().zip(taken.iter()).filter(|(_, &t)| !t).map(|(w, _)| w).sum();
        for i in 0..weights.len() {
            if !taken[i] {
                taken[i] = true;
                go(weights, taken, left - 1, p * weights[i] / total, acc);
                taken[i] = false;
            }
        }
    }
    let mut acc = vec![0.0; weights.len()];
    go(weights, &mut vec![false; weights.len()], k, 1.0, &mut acc);
    acc
}

#[test]
fn weighted_inclusion_matches_enumeration() {
    let draws = 200_000;
    for kind in [ScheduleKind::ReverseBias, ScheduleKind::ForwardBias, ScheduleKind::Uniform] {
        let sched = MaskSchedule::new(kind, None).unwrap();
        for n in 1..=4usize {
            for k in 0..=n {
                let weights: Vec<f64> = (1..=n).map(|i| sched.weight(i, n)).collect();
                let exact = exact_inclusion(&weights, k);
                let eligible: Vec<usize> = (0..n).collect();
                let mut r = stream(5, "incl", (n * 10 + k) as u64);
                let mut hits = vec![0usize; n];
                for _ in 0..draws {
                    let f = sample_weighted_flags(n, &eligible, k, &sched, &mut r).unwrap();
                    for i in 0..n {
                        hits[i] += usize::from(f[i]);
                    }
                }
                for i in 0..n {
                    let emp = hits[i] as f64 / draws as f64;
                    // five binomial standard errors
                    let tol = 5.0 * (exact[i] * (1.0 - exact[i]) / draws as f64).sqrt() + 1e-12;
                    assert!((emp - exact[i]).abs() <= tol, "{kind:?} n={n} k={k} i={i}: {emp} vs {}", exact[i]);
                }
            }
        }
    }
}

#[test]
fn reverse_bias_masks_early_positions_more() {
    let w: Vec<f64> = (1..=4).map(|i| MaskSchedule::new(ScheduleKind::ReverseBias, None).unwrap().weight(i, 4)).collect();
    let p = exact_inclusion(&w, 2);
    assert!(p.windows(2).all(|x| x[0] > x[1]));
    assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn weighted_masks_exactly_k_response_positions(
        prompt in 0usize..5, response in 1usize..12, frac in 0.0f64..=1.0, seed in any::<u64>(),
        kind in prop_oneof![Just(ScheduleKind::Uniform), Just(ScheduleKind::ReverseBias), Just(ScheduleKind::ForwardBias)],
    ) {
        let s = seq(prompt, response);
        let k = ((response as f64) * frac).round() as usize;
        let sched = MaskSchedule::new(kind, None).unwrap();
        let st = corrupt_weighted(&s, &vocab(), k, 0.5, &sched, &mut stream(seed, "w", 0)).unwrap();
        prop_assert_eq!(st.masked_count(), k);
        prop_assert!(st.masked[..prompt].iter().all(|m| !m));
        for (i, (&t, &m)) in st.corrupted.tokens.iter().zip(&st.masked).enumerate() {
            prop_assert_eq!(t == vocab().mask_id(), m);
            if !m {
                prop_assert_eq!(t, s.tokens[i]);
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_states(seed in any::<u64>(), tau in 0.01f64..0.99) {
        let s = seq(2, 9);
        let a = corrupt_iid(&s, &vocab(), tau, &mut stream(seed, "d", 0)).unwrap();
        let b = corrupt_iid(&s, &vocab(), tau, &mut stream(seed, "d", 0)).unwrap();
        prop_assert_eq!(a, b);
    }
}
