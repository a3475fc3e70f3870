use memaudit_core::ingest::{
    read_embeddings, read_ivc, write_embeddings, write_ivc, Dtype, EmbeddingSet, IvcEntry,
    IvcRecord, VolumeRecord,
};
use memaudit_core::ImageRecord;
use proptest::prelude::*;

fn pixels(n: usize, dtype: Dtype) -> BoxedStrategy<Vec<f32>> {
    match dtype {
        Dtype::U8 => prop::collection::vec((0u8..=255).prop_map(f32::from), n).boxed(),
        Dtype::F32 => prop::collection::vec(-1e6f32..1e6, n).boxed(),
    }
}

fn entry() -> impl Strategy<Value = IvcEntry> {
    let dtype = prop_oneof![Just(Dtype::U8), Just(Dtype::F32)];
    (
        any::<bool>(),
        1usize..4,
        1usize..4,
        1usize..6,
        1usize..6,
        dtype,
        "[a-z0-9_]{1,12}",
    )
        .prop_flat_map(|(volume, c, d, h, w, dtype, id)| {
            let n = if volume { c * d * h * w } else { c * h * w };
            pixels(n, dtype).prop_map(move |px| {
                let record = if volume {
                    IvcRecord::Volume(VolumeRecord::new(id.clone(), c, d, h, w, px).unwrap())
                } else {
                    IvcRecord::Image(ImageRecord::new(id.clone(), c, h, w, px).unwrap())
                };
                IvcEntry::new(record, dtype)
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ivc_round_trip(entries in prop::collection::vec(entry(), 1..5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ivc");
        write_ivc(&entries, &path).unwrap();
        prop_assert_eq!(read_ivc(&path).unwrap(), entries);
    }

    #[test]
    fn emb_round_trip(n in 1usize..20, dim in 1usize..12, seed in any::<u64>(), named in any::<bool>()) {
        let mut rng = memaudit_core::rng::Rng::new(seed);
        let rows: Vec<f32> = (0..n * dim).map(|_| rng.normal() as f32).collect();
        let ids = (0..n).map(|i| if named { format!("img_{i}") } else { i.to_string() }).collect();
        let set = EmbeddingSet::new(ids, dim, rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        write_embeddings(&set, &path).unwrap();
        prop_assert_eq!(read_embeddings(&path).unwrap(), set);
    }
}
