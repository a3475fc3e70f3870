mod common;

use common::random_dataset;
use memaudit_core::correlate::{max_correlations_with, CorrelateOptions};
use memaudit_core::{ChannelMask, Dataset, Role};
use proptest::prelude::*;

#[test]
fn identical_across_workers_and_tiles() {
    let q = random_dataset("q", Role::Synthetic, 37, (2, 9, 9), 11);
    let r = random_dataset("r", Role::Train, 83, (2, 9, 9), 12);
    let mask = ChannelMask::all(2);
    let run = |workers, block_budget| {
        let opts = CorrelateOptions {
            k: 6,
            workers,
            block_budget,
            ..Default::default()
        };
        max_correlations_with(&q, &r, &mask, &opts, None).unwrap().1
    };
    let base = run(1, 32 << 20);
    for workers in [1, 2, 3, 8] {
        for budget in [1 << 10, 1 << 14, 32 << 20] {
            assert_eq!(
                run(workers, budget),
                base,
                "workers {workers}, budget {budget}"
            );
        }
    }
}

#[test]
fn progress_reaches_total() {
    let q = random_dataset("q", Role::Synthetic, 9, (1, 5, 5), 13);
    let r = random_dataset("r", Role::Train, 21, (1, 5, 5), 14);
    let last = std::sync::atomic::AtomicU64::new(0);
    let cb = |d: u64| {
        last.fetch_max(d, std::sync::atomic::Ordering::Relaxed);
    };
    let opts = CorrelateOptions {
        block_budget: 1 << 9,
        ..Default::default()
    };
    max_correlations_with(&q, &r, &ChannelMask::all(1), &opts, Some(&cb)).unwrap();
    assert_eq!(last.into_inner(), 9 * 21);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn top1_is_prefix_of_larger_k(nq in 1usize..6, nr in 1usize..20, k in 2usize..10, seed in any::<u64>()) {
        let q = random_dataset("q", Role::Synthetic, nq, (1, 4, 4), seed);
        let r = random_dataset("r", Role::Train, nr, (1, 4, 4), !seed);
        let mask = ChannelMask::all(1);
        let top = |k| max_correlations_with(&q, &r, &mask, &CorrelateOptions { k, ..Default::default() }, None).unwrap().1;
        let (one, many) = (top(1), top(k));
        for (a, b) in one.iter().zip(&many) {
            prop_assert_eq!(&a.matches[..], &b.matches[..1]);
        }
    }

    #[test]
    fn adding_a_reference_never_lowers_top1(nq in 1usize..6, nr in 1usize..15, seed in any::<u64>()) {
        let q = random_dataset("q", Role::Synthetic, nq, (1, 4, 4), seed);
        let r = random_dataset("r", Role::Train, nr + 1, (1, 4, 4), !seed);
        let smaller = Dataset::new("r", Role::Train, r.images()[..nr].to_vec()).unwrap();
        let mask = ChannelMask::all(1);
        let opts = CorrelateOptions { k: 1, ..Default::default() };
        let before = max_correlations_with(&q, &smaller, &mask, &opts, None).unwrap().1;
        let after = max_correlations_with(&q, &r, &mask, &opts, None).unwrap().1;
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a.matches[0].correlation >= b.matches[0].correlation);
        }
    }
}
