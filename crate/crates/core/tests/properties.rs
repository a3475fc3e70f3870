mod common;

use memaudit_core::correlate::{plan_audit, Match, TopKMatches};
use memaudit_core::ingest::EmbeddingSet;
use memaudit_core::metrics::{
    binned_entropy, fid, gaussian_stats, inception_score, mutual_information, ssim, SsimParams,
};
use memaudit_core::preprocess::{remap_labels, zero_pad, LabelMap, RescaleIntensity};
use memaudit_core::report::{
    read_report, AuditReport, MatchSet, ReportFormat, ReportOptions, ThresholdRule,
};
use memaudit_core::{pearson, standardize, ChannelMask, ImageRecord};
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = ImageRecord> {
    prop::collection::vec(0u8..=255, c * h * w).prop_map(move |v| {
        ImageRecord::new("img", c, h, w, v.into_iter().map(f32::from).collect()).unwrap()
    })
}

fn varied(img: &ImageRecord) -> bool {
    let p = img.pixels();
    let n = p.len() as f64;
    let m = p.iter().map(|&x| x as f64).sum::<f64>() / n;
    p.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n > 1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_is_symmetric((a, b) in (1usize..4, 2usize..9).prop_flat_map(|(h, w)| (image(1, h, w), image(1, h, w)))) {
        prop_assume!(varied(&a) && varied(&b));
        let mask = ChannelMask::all(1);
        let ab = pearson(&a, &b, &mask).unwrap();
        let ba = pearson(&b, &a, &mask).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn pearson_is_affine_invariant(a in image(1, 4, 6), alpha in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0], beta in -100.0f64..100.0) {
        prop_assume!(varied(&a));
        let px = a.pixels().iter().map(|&p| (alpha * p as f64 + beta) as f32).collect();
        let b = ImageRecord::new("b", 1, 4, 6, px).unwrap();
        let r = pearson(&a, &b, &ChannelMask::all(1)).unwrap();
        prop_assert!((r - alpha.signum()).abs() <= 1e-9, "r = {r}");
    }

    #[test]
    fn pearson_is_standardized_dot((a, b) in (1usize..4, 1usize..5).prop_flat_map(|(c, n)| (image(c, n, 5), image(c, n, 5)))) {
        let mask = ChannelMask::all(a.channels());
        let (sa, sb) = (standardize(&a, &mask).unwrap(), standardize(&b, &mask).unwrap());
        prop_assume!(sa.valid && sb.valid);
        let r = pearson(&a, &b, &mask).unwrap();
        prop_assert!((r - sa.dot(&sb)).abs() <= 1e-9);
    }

    #[test]
    fn standardized_vectors_are_centered_unit(a in (1usize..4, 1usize..8).prop_flat_map(|(c, h)| image(c, h, 7))) {
        let v = standardize(&a, &ChannelMask::all(a.channels())).unwrap();
        prop_assume!(v.valid);
        let n = v.values.len() as f64;
        let mean = v.values.iter().sum::<f64>() / n;
        let norm = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(mean.abs() <= 1e-5 * n);
        prop_assert!((norm - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn zero_pad_keeps_nonzero_multiset(a in (1usize..3, 1usize..9, 1usize..9).prop_flat_map(|(c, h, w)| image(c, h, w)), dh in 0usize..5, dw in 0usize..5) {
        let out = zero_pad(&a, a.height() + dh, a.width() + dw).unwrap();
        let nz = |img: &ImageRecord| {
            let mut v: Vec<u32> = img.pixels().iter().filter(|&&p| p != 0.0).map(|p| p.to_bits()).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(nz(&a), nz(&out));
    }

    #[test]
    fn rescale_spans_full_range(px in prop::collection::vec(-1000.0f32..1000.0, 2..60)) {
        let n = px.len();
        let img = ImageRecord::new("r", 1, 1, n, px.clone()).unwrap();
        let out = img.rescale_intensity();
        prop_assert!(out.pixels().iter().all(|&p| (0.0..=255.0).contains(&p)));
        let (lo, hi) = px.iter().fold((f32::MAX, f32::MIN), |(l, h), &p| (l.min(p), h.max(p)));
        if lo < hi {
            let argmin = px.iter().position(|&p| p == lo).unwrap();
            let argmax = px.iter().position(|&p| p == hi).unwrap();
            prop_assert_eq!(out.pixels()[argmin], 0.0);
            prop_assert_eq!(out.pixels()[argmax], 255.0);
        }
    }

    #[test]
    fn brats_remap_is_idempotent(labels in prop::collection::vec(prop::sample::select(vec![0.0f32, 1.0, 2.0, 4.0]), 1..50)) {
        let map: LabelMap = "1=51,2=102,4=204".parse().unwrap();
        let img = ImageRecord::new("l", 1, 1, labels.len(), labels).unwrap();
        let once = remap_labels(&img, &map);
        prop_assert_eq!(remap_labels(&once, &map), once);
    }

    #[test]
    fn ssim_self_and_symmetry((a, b) in (11usize..16, 11usize..16).prop_flat_map(|(h, w)| (image(1, h, w), image(1, h, w)))) {
        let p = SsimParams::default();
        prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn mi_self_is_entropy(a in image(1, 6, 9), bins in 2usize..70) {
        let mi = mutual_information(&a, &a, bins).unwrap();
        prop_assert!((mi - binned_entropy(&a, bins)).abs() <= 1e-9);
    }

    #[test]
    fn fid_symmetric_nonnegative(seed in any::<u64>(), dim in 1usize..5) {
        let mut rng = memaudit_core::rng::Rng::new(seed);
        let mut rows = |n: usize, shift: f64| -> EmbeddingSet {
            let r: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.normal() + shift).collect()).collect();
            EmbeddingSet::from_rows(&r).unwrap()
        };
        let (g1, g2) = (gaussian_stats(&rows(30, 0.0)).unwrap(), gaussian_stats(&rows(40, 0.5)).unwrap());
        let (a, b) = (fid(&g1, &g2).unwrap(), fid(&g2, &g1).unwrap());
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
    }

    #[test]
    fn inception_score_is_bounded(seed in any::<u64>(), classes in 2usize..8, n in 1usize..40, splits in 1usize..5) {
        let mut rng = memaudit_core::rng::Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.uniform() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let (mean, _) = inception_score(&EmbeddingSet::from_rows(&rows).unwrap(), splits).unwrap();
        prop_assert!(mean >= 1.0 - 1e-9 && mean <= classes as f64 + 1e-9);
    }

    #[test]
    fn report_json_round_trips(values in prop::collection::vec(-1.0f64..1.0, 1..40), base in prop::collection::vec(-1.0f64..1.0, 1..40), p in 1.0f64..99.9) {
        let set = |label: &str, vals: &[f64]| MatchSet {
            label: label.into(),
            query: "q".into(),
            reference: "r".into(),
            plan: plan_audit(vals.len() as u64, 3, 16),
            matches: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| TopKMatches {
                    query_id: format!("q{i}"),
                    query_valid: true,
                    matches: vec![Match { reference_id: format!("r{}", i % 3), correlation: v }],
                    skipped_invalid: 0,
                })
                .collect(),
        };
        let opts = ReportOptions { rule: ThresholdRule::Percentile(p), ..Default::default() };
        let report = AuditReport::build(&set("a", &values), Some(&set("b", &base)), &[], &opts, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        memaudit_core::report::export_report(&report, &path, ReportFormat::Json).unwrap();
        prop_assert_eq!(read_report(&path).unwrap(), report);
    }
}
