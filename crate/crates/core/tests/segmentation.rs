use proptest::prelude::*;
use thermomark::ingest::{ThermalGrid, VisualImage, DEFAULT_VALID_RANGE};
use thermomark::segmentation::{iou, mask_thermal, train_segmenter, BinaryMask, SegmenterConfig};
use thermomark::synthdata::{generate_foot_pair, FootParams};

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(0u8..=1, h * w).prop_map(move |v| BinaryMask::new(h, w, v).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in mask_strategy(6, 5), b in mask_strategy(6, 5)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn masking_keeps_retained_pixels_bit_exact(
        values in prop::collection::vec(15.0f32..45.0, 30),
        mask in mask_strategy(5, 6),
    ) {
        let grid = ThermalGrid::new(5, 6, values.clone(), DEFAULT_VALID_RANGE).unwrap();
        let seg = mask_thermal(&grid, &mask).unwrap();
        for (i, &m) in mask.values().iter().enumerate() {
            let v = seg.values()[i];
            if m == 1 {
                prop_assert_eq!(v.to_bits(), values[i].to_bits());
            } else {
                prop_assert!(v.is_nan());
            }
        }
        prop_assert_eq!(seg.foreground_count(), mask.count());
    }
}

#[test]
fn iou_pixel_count_examples() {
    let block = |c0: usize| BinaryMask::from_fn(4, 4, move |r, c| r < 2 && (c0..c0 + 2).contains(&c));
    assert!((iou(&block(0), &block(1)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(iou(&block(0), &block(2)).unwrap(), 0.0);
    let empty = BinaryMask::zeros(4, 4);
    assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    assert!(iou(&empty, &BinaryMask::zeros(4, 5)).is_err());
}

#[test]
fn checkerboard_keeps_half() {
    let grid = ThermalGrid::new(6, 8, vec![31.0; 48], DEFAULT_VALID_RANGE).unwrap();
    let board = BinaryMask::from_fn(6, 8, |r, c| (r + c) % 2 == 0);
    assert_eq!(mask_thermal(&grid, &board).unwrap().foreground_count(), 24);
    let full = BinaryMask::from_fn(6, 8, |_, _| true);
    assert_eq!(mask_thermal(&grid, &full).unwrap(), grid);
}

#[test]
fn probabilities_just_below_half_give_empty_mask() {
    let p = vec![0.5 - 1e-6; 12];
    assert_eq!(BinaryMask::from_probability(3, 4, &p).count(), 0);
}

fn tiny_config(seed: u64) -> SegmenterConfig {
    SegmenterConfig {
        depth: 2,
        base_channels: 8,
        input_size: 64,
        learning_rate: 5e-3,
        batch_size: 1,
        max_epochs: 80,
        patience: 80,
        seed,
        ..SegmenterConfig::default()
    }
}

fn foot(seed: u64) -> (VisualImage, BinaryMask) {
    let p = generate_foot_pair("P0001", &FootParams::nominal(64, 48), seed);
    (p.pair.visual, p.mask)
}

#[test]
fn segmenter_memorizes_a_single_pair() {
    let pair = foot(4);
    let trained = train_segmenter(&[pair.clone()], &[pair.clone()], &tiny_config(1)).unwrap();
    let pred = trained.model.predict_mask(&pair.0);
    let score = iou(&pred, &pair.1).unwrap();
    assert!(score >= 0.99, "training-pair IoU {score}");
    assert!(trained.log.all_losses_finite());
}

#[test]
fn segmenter_training_is_reproducible() {
    let train = vec![foot(1), foot(2)];
    let val = vec![foot(3)];
    let mut cfg = tiny_config(9);
    cfg.max_epochs = 4;
    let a = train_segmenter(&train, &val, &cfg).unwrap();
    let b = train_segmenter(&train, &val, &cfg).unwrap();
    assert_eq!(a.val_iou.to_bits(), b.val_iou.to_bits());
    assert_eq!(a.log, b.log);
}

#[test]
fn trained_segmenter_leaves_bare_background_empty() {
    let train = vec![foot(1), foot(2), foot(5)];
    let val = vec![foot(3)];
    let trained = train_segmenter(&train, &val, &tiny_config(2)).unwrap();
    // Cloth-coloured frame with no foot in it.
    let bare = VisualImage::new(64, 48, [70u8, 80, 110].repeat(64 * 48));
    let pred = trained.model.predict_mask(&bare);
    assert!(pred.foreground_fraction() < 0.01, "foreground {}", pred.foreground_fraction());
}
