use proptest::prelude::*;
use rednet::data::{boundary_pixels, thin, EdgeGroundTruth, EdgeMap, SegmentationMap};
use rednet::evaluation::matching::correspond;
use rednet::evaluation::metrics::{default_thresholds, pr_sweep};
use rednet::evaluation::nms::nms;
use rednet::model::{build_model, crop, pad_to_grid, parameter_count, predict, Mode, RedNetConfig, Session};
use rednet::tensor::Tensor;

fn binary_map(max_side: usize) -> impl Strategy<Value = EdgeGroundTruth> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), w * h)
            .prop_map(move |bits| EdgeGroundTruth::new(w, h, bits.into_iter().map(u8::from).collect()).unwrap())
    })
}

fn map_pair(max_side: usize) -> impl Strategy<Value = (EdgeGroundTruth, EdgeGroundTruth)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        let bits = move || proptest::collection::vec(prop::bool::weighted(0.2), w * h);
        (bits(), bits()).prop_map(move |(a, b)| {
            (
                EdgeGroundTruth::new(w, h, a.into_iter().map(u8::from).collect()).unwrap(),
                EdgeGroundTruth::new(w, h, b.into_iter().map(u8::from).collect()).unwrap(),
            )
        })
    })
}

fn edge_map(max_side: usize) -> impl Strategy<Value = EdgeMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0.0f64..=1.0, w * h).prop_map(move |v| EdgeMap::new(w, h, v).unwrap())
    })
}

proptest! {
    #[test]
    fn thinning_is_idempotent_and_only_removes(map in binary_map(20)) {
        let once = thin(&map);
        prop_assert!(once.data.iter().zip(&map.data).all(|(&o, &i)| o <= i));
        prop_assert_eq!(thin(&once), once);
    }

    #[test]
    fn boundaries_ignore_label_names(labels in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), proptest::collection::vec(0u32..4, w * h))
    }), offset in 1u32..100) {
        let (w, h, raw) = labels;
        let a = boundary_pixels(&SegmentationMap::new(w, h, raw.clone()).unwrap());
        let renamed = raw.iter().map(|&l| (3 - l) * offset + 7).collect();
        let b = boundary_pixels(&SegmentationMap::new(w, h, renamed).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn matching_is_symmetric_and_bounded((pred, gt) in map_pair(14), max_dist in 0.01f64..0.3) {
        let forward = correspond(&pred, &gt, max_dist).unwrap();
        let backward = correspond(&gt, &pred, max_dist).unwrap();
        prop_assert_eq!(forward.matched_pred(), backward.matched_pred());
        prop_assert_eq!(forward.matched_pred(), forward.matched_gt());
        prop_assert!(forward.matched_pred() <= pred.count().min(gt.count()));
        for &((py, px), (gy, gx)) in &forward.pairs {
            prop_assert!(pred.get(py, px) && gt.get(gy, gx));
            let d = ((py as f64 - gy as f64).powi(2) + (px as f64 - gx as f64).powi(2)).sqrt();
            prop_assert!(d <= forward.radius);
        }
        let self_match = correspond(&gt, &gt, max_dist).unwrap();
        prop_assert_eq!(self_match.matched_gt(), gt.count());
    }

    #[test]
    fn recall_never_rises_with_threshold((map, gt) in (1usize..=12, 1usize..=12).prop_flat_map(|(w, h)| (
        proptest::collection::vec(0.0f64..=1.0, w * h).prop_map(move |v| EdgeMap::new(w, h, v).unwrap()),
        proptest::collection::vec(prop::bool::weighted(0.3), w * h)
            .prop_map(move |b| EdgeGroundTruth::new(w, h, b.into_iter().map(u8::from).collect()).unwrap()),
    ))) {
        let sweep = pr_sweep(&map, &gt, &default_thresholds(), 0.1).unwrap();
        for pair in sweep.windows(2) {
            prop_assert!(pair[1].counts.matched_gt <= pair[0].counts.matched_gt);
            prop_assert!(pair[1].counts.total_pred <= pair[0].counts.total_pred);
        }
        for p in &sweep {
            prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
    }

    #[test]
    fn suppression_keeps_values_or_zeroes_them(map in edge_map(16)) {
        let out = nms(&map);
        prop_assert!(out.data.iter().zip(&map.data).all(|(&o, &i)| o == 0.0 || o == i));
    }

    #[test]
    fn pad_then_crop_restores_any_extent(n in 1usize..3, c in 1usize..4, h in 1usize..40, w in 1usize..40, grid in 1usize..20) {
        let t = Tensor::<f32>::from_fn(&[n, c, h, w], |i| i as f32 * 0.5);
        let (padded, record) = pad_to_grid(&t, grid).unwrap();
        prop_assert_eq!(padded.shape()[2] % grid, 0);
        prop_assert_eq!(padded.shape()[3] % grid, 0);
        prop_assert_eq!(crop(&padded, record).unwrap(), t);
    }

    #[test]
    fn parameter_count_ignores_recursion_depth(a in 0usize..8, b in 0usize..8) {
        let desk = RedNetConfig::desk();
        prop_assert_eq!(parameter_count(&desk.clone().with_depth(a)).unwrap(), parameter_count(&desk.with_depth(b)).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn edge_maps_are_probabilities(seed in any::<u64>(), h in 5usize..24, w in 5usize..24, depth in 0usize..3) {
        let config = RedNetConfig::desk().with_depth(depth);
        let mut params = build_model::<f32>(&config, seed).unwrap();
        let image = Tensor::<f32>::from_fn(&[1, 3, h, w], |i| ((i as u64).wrapping_mul(seed | 1) % 97) as f32 / 96.0);
        let warm = Tensor::<f32>::from_fn(&[2, 3, 16, 16], |i| (i % 13) as f32 / 12.0);
        let updates = {
            let mut s = Session::new(&params, Mode::Train);
            let x = s.tape.leaf(warm);
            s.forward(x, depth).unwrap();
            s.norm_updates().to_vec()
        };
        params.apply_norm_updates(&updates).unwrap();
        let maps = predict(&params, &image, depth).unwrap();
        prop_assert_eq!(maps.len(), depth + 1);
        for m in &maps {
            prop_assert_eq!(m.shape(), &[1, 1, h, w][..]);
            prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
