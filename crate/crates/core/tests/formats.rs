use emb2img::io::{self, EmbeddingMatrix, FeatureLayout, ImageDataset, Provenance, TensorStore};
use emb2img::raster::z_normalize;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    -1e6f32..1e6
}

fn embeddings() -> impl Strategy<Value = EmbeddingMatrix> {
    (2usize..8, 2usize..8).prop_flat_map(|(n, d)| {
        (prop::collection::vec(finite(), n * d), prop::collection::vec(0u8..2, n))
            .prop_map(move |(v, l)| EmbeddingMatrix::new(n, d, v, l).unwrap())
    })
}

fn layout() -> impl Strategy<Value = FeatureLayout> {
    (1usize..6, 1usize..6, 1usize..20, any::<u64>(), any::<u64>()).prop_flat_map(|(w, h, d, seed, hash)| {
        prop::collection::vec(0..w * h, d).prop_map(move |a| {
            FeatureLayout::new(w, h, a, Provenance { seed, config_hash: hash }).unwrap()
        })
    })
}

fn images() -> impl Strategy<Value = ImageDataset> {
    (1usize..4, 1usize..4, 1usize..5).prop_flat_map(|(w, h, n)| {
        (prop::collection::vec(finite(), n * w * h), prop::collection::vec(0u8..2, n))
            .prop_map(move |(p, l)| ImageDataset::new(w, h, p, l).unwrap())
    })
}

fn tensors() -> impl Strategy<Value = TensorStore> {
    prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 0..5).prop_flat_map(|shapes| {
        let k = shapes.len();
        let data: Vec<_> = shapes
            .iter()
            .map(|s| prop::collection::vec(finite(), s.iter().product::<usize>()))
            .collect();
        data.prop_map(move |data| {
            let mut store = TensorStore::new();
            for (i, (s, d)) in shapes.iter().zip(data).enumerate() {
                store.insert(format!("ext.t{i}.w"), s.clone(), d).unwrap();
            }
            assert_eq!(store.len(), k);
            store
        })
    })
}

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut b = Vec::new();
    f(&mut b).unwrap();
    b
}

proptest! {
    #[test]
    fn embeddings_roundtrip(m in embeddings()) {
        let b = bytes(|w| io::encode_embeddings(&m, w));
        prop_assert_eq!(io::decode_embeddings(&b).unwrap(), m);
        for cut in [0, 3, 4, 11, b.len() - 1] {
            prop_assert!(io::decode_embeddings(&b[..cut]).is_err());
        }
    }

    #[test]
    fn layout_roundtrip(l in layout()) {
        let b = bytes(|w| io::encode_layout(&l, w));
        let back = io::decode_layout(&b).unwrap();
        prop_assert_eq!(back.density().iter().map(|&c| c as usize).sum::<usize>(), l.d());
        prop_assert_eq!(back, l);
        prop_assert!(io::decode_layout(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn images_roundtrip(ds in images(), normalize in any::<bool>()) {
        let ds = if normalize { z_normalize(&ds, 1e-8).unwrap() } else { ds };
        let b = bytes(|w| io::encode_images(&ds, w));
        prop_assert_eq!(io::decode_images(&b).unwrap(), ds);
        prop_assert!(io::decode_images(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn tensors_roundtrip(store in tensors()) {
        let b = bytes(|w| io::encode_tensors(&store, w));
        prop_assert_eq!(io::decode_tensors(&b).unwrap(), store);
    }
}

#[test]
fn files_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = EmbeddingMatrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.], vec![1, 0]).unwrap();
    let p = dir.path().join("m.emb1");
    io::save_embeddings(&m, &p).unwrap();
    assert_eq!(io::load_embeddings(&p).unwrap(), m);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"EMB1");
    assert_eq!(bytes.len(), 4 + 8 + 8 + 6 * 4 + 2);
}
