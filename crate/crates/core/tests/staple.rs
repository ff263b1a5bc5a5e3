use proptest::prelude::*;
use thermomark::segmentation::{staple_consensus, BinaryMask, StapleConfig};
use thermomark_oracles::staple_em;

fn raters() -> impl Strategy<Value = (usize, usize, Vec<Vec<u8>>)> {
    (1usize..=10, 1usize..=10, 2usize..=5).prop_flat_map(|(h, w, r)| {
        let truth = prop::collection::vec(any::<bool>(), h * w);
        let noise = prop::collection::vec(prop::collection::vec(0u8..100, h * w), r);
        (Just(h), Just(w), truth, noise).prop_map(|(h, w, truth, noise)| {
            // Each rater flips roughly 15% of the pixels of a shared truth.
            let masks = noise
                .into_iter()
                .map(|n| truth.iter().zip(n).map(|(&t, v)| (t ^ (v < 15)) as u8).collect())
                .collect();
            (h, w, masks)
        })
    })
}

fn to_masks(h: usize, w: usize, masks: &[Vec<u8>]) -> Vec<BinaryMask> {
    masks.iter().map(|m| BinaryMask::new(h, w, m.clone()).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn consensus_matches_em_oracle((h, w, masks) in raters()) {
        let cfg = StapleConfig::default();
        let got = staple_consensus(&to_masks(h, w, &masks), &cfg).unwrap();
        let (post, perf) = staple_em(&masks, cfg.init, cfg.tol, cfg.max_iter);
        for (a, b) in got.probability.iter().zip(&post) {
            prop_assert!((a - b).abs() <= 1e-9, "posterior {a} vs oracle {b}");
        }
        for (a, &(p, q)) in got.performance.iter().zip(&perf) {
            prop_assert!((a.p - p).abs() <= 1e-9 && (a.q - q).abs() <= 1e-9);
        }
        for (i, &v) in got.consensus.values().iter().enumerate() {
            prop_assert_eq!(v == 1, got.probability[i] >= 0.5);
            // exact ties sit on the threshold; either side is a rounding artefact
            if (post[i] - 0.5).abs() > 1e-9 {
                prop_assert_eq!(v == 1, post[i] >= 0.5);
            }
        }
    }

    #[test]
    fn log_likelihood_never_decreases((h, w, masks) in raters()) {
        let got = staple_consensus(&to_masks(h, w, &masks), &StapleConfig::default()).unwrap();
        for pair in got.log_likelihood.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0), "{:?}", got.log_likelihood);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rater_order_does_not_matter((h, w, masks) in raters(), rot in 0usize..5) {
        let cfg = StapleConfig::default();
        let a = staple_consensus(&to_masks(h, w, &masks), &cfg).unwrap();
        let mut shuffled = masks.clone();
        shuffled.rotate_left(rot % masks.len());
        shuffled.reverse();
        let b = staple_consensus(&to_masks(h, w, &shuffled), &cfg).unwrap();
        prop_assert_eq!(&a.probability, &b.probability);
        prop_assert_eq!(a.consensus, b.consensus);
    }
}

#[test]
fn unanimous_raters_give_their_mask() {
    let m = BinaryMask::from_fn(6, 6, |r, c| r + c < 6);
    let got = staple_consensus(&[m.clone(), m.clone(), m.clone()], &StapleConfig::default()).unwrap();
    assert_eq!(got.consensus, m);
}
