use blockkey::transforms::{apply_np, apply_shf, transform_stepwise};
use blockkey::{integrate, segment, FeistelCipher, ImageTensor, KeySet, TransformPipeline, TransformSet};
use proptest::prelude::*;

// (channels, block size, block rows, block cols, 8-bit pixels)
fn image_strategy() -> impl Strategy<Value = (ImageTensor, usize)> {
    (prop_oneof![Just(1usize), Just(3usize)], 1usize..5, 1usize..4, 1usize..4).prop_flat_map(
        |(c, m, rows, cols)| {
            let (h, w) = (m * rows, m * cols);
            proptest::collection::vec(any::<u8>(), c * h * w).prop_map(move |bytes| {
                (ImageTensor::from_u8(c, h, w, &bytes).unwrap(), m)
            })
        },
    )
}

fn set_strategy() -> impl Strategy<Value = TransformSet> {
    (1u8..8).prop_map(|mask| TransformSet::from_mask(mask).unwrap())
}

proptest! {
    #[test]
    fn segment_integrate_round_trip((image, m) in image_strategy()) {
        let blocks = segment(&image, m).unwrap();
        prop_assert_eq!(integrate(&blocks, m).unwrap(), image);
    }

    #[test]
    fn np_is_an_involution((image, m) in image_strategy(), seed in any::<u64>()) {
        let key = KeySet::generate(m, image.channels(), "NP".parse().unwrap(), seed).unwrap();
        let beta = key.beta().unwrap();
        let blocks = segment(&image, m).unwrap();
        let twice = apply_np(&apply_np(&blocks, beta).unwrap(), beta).unwrap();
        prop_assert_eq!(twice, blocks);
    }

    #[test]
    fn shf_preserves_each_block_multiset((image, m) in image_strategy(), seed in any::<u64>()) {
        let key = KeySet::generate(m, image.channels(), "SHF".parse().unwrap(), seed).unwrap();
        let blocks = segment(&image, m).unwrap();
        let out = apply_shf(&blocks, key.alpha().unwrap()).unwrap();
        for (a, b) in blocks.blocks().zip(out.blocks()) {
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn pipeline_matches_stepwise(
        (image, m) in image_strategy(),
        set in set_strategy(),
        seed in any::<u64>(),
    ) {
        let key = KeySet::generate(m, image.channels(), set, seed).unwrap();
        let fast = TransformPipeline::new(key.clone()).transform(&image).unwrap();
        prop_assert_eq!(fast, transform_stepwise(&image, &key).unwrap());
    }

    #[test]
    fn invertible_sets_round_trip((image, m) in image_strategy(), seed in any::<u64>(), mask in 1u8..4) {
        let key = KeySet::generate(m, image.channels(), TransformSet::from_mask(mask).unwrap(), seed).unwrap();
        let p = TransformPipeline::new(key);
        prop_assert_eq!(p.invert(&p.transform(&image).unwrap()).unwrap(), image);
    }

    #[test]
    fn key_json_round_trip(m in 1usize..6, c in 1usize..4, set in set_strategy(), seed in any::<u64>()) {
        let key = KeySet::generate(m, c, set, seed).unwrap();
        prop_assert_eq!(KeySet::from_json(&key.to_json().unwrap()).unwrap(), key);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feistel_is_a_bijection_on_the_domain(password in "[a-z0-9]{0,12}") {
        let cipher = FeistelCipher::new(password.as_bytes());
        let mut seen = vec![false; 1000];
        for n in 0..1000u16 {
            let e = cipher.encrypt(n).unwrap();
            prop_assert!(e < 1000);
            prop_assert!(!seen[usize::from(e)]);
            seen[usize::from(e)] = true;
            prop_assert_eq!(cipher.decrypt(e).unwrap(), n);
        }
    }
}
