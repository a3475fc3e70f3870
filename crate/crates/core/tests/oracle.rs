mod common;

use common::{naive_pearson, random_dataset};
use memaudit_core::correlate::{
    brute_force_correlations, brute_force_correlations_with_mode, brute_force_embeddings,
    max_correlations, max_correlations_embeddings, max_correlations_with, CorrelateOptions,
    EmbeddingMetric, TopKMatches,
};
use memaudit_core::ingest::EmbeddingSet;
use memaudit_core::rng::Rng;
use memaudit_core::{ChannelMask, ChannelMode, Dataset, ImageRecord, Role};
use proptest::prelude::*;

/// Every reported match equals the oracle entry, and the reported values are
/// exactly the k largest oracle values.
fn assert_matches_oracle(
    blocked: &[TopKMatches],
    oracle: &[TopKMatches],
    reference_ids: &[String],
    full: &dyn Fn(usize, usize) -> Option<f64>,
    k: usize,
) {
    assert_eq!(blocked.len(), oracle.len());
    for (qi, (b, o)) in blocked.iter().zip(oracle).enumerate() {
        assert_eq!(b.query_id, o.query_id);
        assert_eq!(b.query_valid, o.query_valid);
        assert_eq!(b.matches.len(), o.matches.len());
        assert_eq!(b.skipped_invalid, o.skipped_invalid);
        for (bm, om) in b.matches.iter().zip(&o.matches) {
            assert!(
                (bm.correlation - om.correlation).abs() <= 1e-6,
                "{} vs {}",
                bm.correlation,
                om.correlation
            );
            let j = reference_ids
                .iter()
                .position(|r| *r == bm.reference_id)
                .unwrap();
            assert!((full(qi, j).unwrap() - bm.correlation).abs() <= 1e-6);
        }
        assert!(b.matches.len() <= k);
    }
}

fn ref_ids(ds: &Dataset) -> Vec<String> {
    ds.images().iter().map(|i| i.id().to_string()).collect()
}

#[test]
fn twenty_by_fifty_matches_brute_force() {
    let q = random_dataset("q", Role::Synthetic, 20, (1, 16, 16), 1);
    let r = random_dataset("r", Role::Train, 50, (1, 16, 16), 2);
    let mask = ChannelMask::all(1);
    let blocked = max_correlations(&q, &r, &mask, 5).unwrap();
    let brute = brute_force_correlations(&q, &r, &mask).unwrap();
    let oracle = brute.top_k(5);
    for (b, o) in blocked.iter().zip(&oracle) {
        let bi: Vec<_> = b.matches.iter().map(|m| &m.reference_id).collect();
        let oi: Vec<_> = o.matches.iter().map(|m| &m.reference_id).collect();
        assert_eq!(bi, oi);
    }
    assert_matches_oracle(&blocked, &oracle, &ref_ids(&r), &|i, j| brute.get(i, j), 5);
    // the brute-force matrix itself against an independent Pearson
    for (i, qi) in q.images().iter().enumerate() {
        for (j, rj) in r.images().iter().enumerate() {
            let want = naive_pearson(qi.pixels(), rj.pixels()).unwrap();
            assert!((brute.get(i, j).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn copy_of_reference_is_top1() {
    let r = random_dataset("r", Role::Train, 30, (1, 8, 8), 3);
    let q = Dataset::new(
        "q",
        Role::Synthetic,
        vec![r.images()[17].clone().with_id("copy").unwrap()],
    )
    .unwrap();
    let m = max_correlations(&q, &r, &ChannelMask::all(1), 1).unwrap();
    let top = m[0].top1().unwrap();
    assert_eq!(top.reference_id, "r017");
    assert!((top.correlation - 1.0).abs() < 1e-6);
}

#[test]
fn negated_reference() {
    let r = random_dataset("r", Role::Train, 10, (1, 8, 8), 4);
    let neg: Vec<f32> = r.images()[3].pixels().iter().map(|p| -p).collect();
    let q = Dataset::new(
        "q",
        Role::Synthetic,
        vec![ImageRecord::new("neg", 1, 8, 8, neg).unwrap()],
    )
    .unwrap();
    let mask = ChannelMask::all(1);
    let brute = brute_force_correlations(&q, &r, &mask).unwrap();
    assert!((brute.get(0, 3).unwrap() + 1.0).abs() < 1e-12);
    let best = (0..10)
        .max_by(|&a, &b| {
            brute
                .get(0, a)
                .unwrap()
                .total_cmp(&brute.get(0, b).unwrap())
        })
        .unwrap();
    let all = max_correlations(&q, &r, &mask, 10).unwrap();
    assert_eq!(all[0].matches[0].reference_id, format!("r{best:03}"));
    let last = all[0].matches.last().unwrap();
    assert_eq!(last.reference_id, "r003");
    assert!((last.correlation + 1.0).abs() < 1e-6);
}

#[test]
fn constant_images_are_excluded() {
    let mut imgs = random_dataset("r", Role::Train, 6, (1, 4, 4), 5).into_images();
    imgs.push(ImageRecord::new("flat", 1, 4, 4, vec![9.0; 16]).unwrap());
    let r = Dataset::new("r", Role::Train, imgs).unwrap();
    let mut qs = random_dataset("q", Role::Synthetic, 2, (1, 4, 4), 6).into_images();
    qs.push(ImageRecord::new("qflat", 1, 4, 4, vec![1.0; 16]).unwrap());
    let q = Dataset::new("q", Role::Synthetic, qs).unwrap();
    let m = max_correlations(&q, &r, &ChannelMask::all(1), 10).unwrap();
    for t in &m[..2] {
        assert_eq!(t.matches.len(), 6);
        assert_eq!(t.skipped_invalid, 1);
        assert!(t.matches.iter().all(|x| x.reference_id != "flat"));
    }
    assert!(!m[2].query_valid);
    assert!(m[2].matches.is_empty());
    let brute = brute_force_correlations(&q, &r, &ChannelMask::all(1)).unwrap();
    assert_eq!(brute.get(0, 6), None);
    assert_matches_oracle(
        &m,
        &brute.top_k(10),
        &ref_ids(&r),
        &|i, j| brute.get(i, j),
        10,
    );
}

#[test]
fn masked_and_per_channel_modes_match_brute_force() {
    let q = random_dataset("q", Role::Synthetic, 7, (5, 6, 6), 7);
    let r = random_dataset("r", Role::Train, 13, (5, 6, 6), 8);
    let mask = ChannelMask::default_for(5);
    assert_eq!(mask.indices(), [0, 1, 2, 3]);
    for mode in [ChannelMode::Concatenate, ChannelMode::PerChannelMean] {
        let opts = CorrelateOptions {
            k: 4,
            mode,
            ..Default::default()
        };
        let (_, blocked) = max_correlations_with(&q, &r, &mask, &opts, None).unwrap();
        let brute = brute_force_correlations_with_mode(&q, &r, &mask, mode).unwrap();
        assert_matches_oracle(
            &blocked,
            &brute.top_k(4),
            &ref_ids(&r),
            &|i, j| brute.get(i, j),
            4,
        );
    }
}

fn random_rows(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
    let mut rng = Rng::new(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();
    EmbeddingSet::from_rows(&rows).unwrap()
}

#[test]
fn embeddings_match_brute_force() {
    let q = random_rows(100, 64, 9);
    let r = random_rows(100, 64, 10);
    for metric in [EmbeddingMetric::Pearson, EmbeddingMetric::Cosine] {
        let blocked = max_correlations_embeddings(&q, &r, 5, metric).unwrap();
        let brute = brute_force_embeddings(&q, &r, metric).unwrap();
        assert_matches_oracle(
            &blocked,
            &brute.top_k(5),
            r.ids(),
            &|i, j| brute.get(i, j),
            5,
        );
    }
    let same = max_correlations_embeddings(&q, &q, 1, EmbeddingMetric::Pearson).unwrap();
    for (i, t) in same.iter().enumerate() {
        assert_eq!(t.matches[0].reference_id, q.ids()[i]);
        assert!((t.matches[0].correlation - 1.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blocked_agrees_with_brute_force(
        nq in 1usize..7, nr in 1usize..15, c in 1usize..4, h in 1usize..6, w in 2usize..6,
        k in 1usize..8, seed in any::<u64>(), budget in prop::sample::select(vec![64usize, 512, 1 << 20]),
    ) {
        let q = random_dataset("q", Role::Synthetic, nq, (c, h, w), seed);
        let r = random_dataset("r", Role::Train, nr, (c, h, w), seed ^ 1);
        let mask = ChannelMask::all(c);
        let opts = CorrelateOptions { k, block_budget: budget, ..Default::default() };
        let (plan, blocked) = max_correlations_with(&q, &r, &mask, &opts, None).unwrap();
        prop_assert_eq!(plan.total_comparisons, (nq * nr) as u64);
        let brute = brute_force_correlations(&q, &r, &mask).unwrap();
        assert_matches_oracle(&blocked, &brute.top_k(k), &ref_ids(&r), &|i, j| brute.get(i, j), k);
    }
}
