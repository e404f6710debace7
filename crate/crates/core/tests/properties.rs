use proptest::prelude::*;

use xssab::bench::{apply_patches, sample_rects_seeded, PairLabel};
use xssab::dpr::{
    budget_fractions, oracle_ranking, pixel_budget, random_ranking, rank_pixels,
    replaced_reference, DprPair, Orientation,
};
use xssab::metrics::{fmr_fnmr, ScoreSet};
use xssab::tensor::{PixelMap, RawImage};

fn orientation() -> impl Strategy<Value = Orientation> {
    prop_oneof![
        Just(Orientation::MostSimilarFirst),
        Just(Orientation::LeastSimilarFirst)
    ]
}

fn small_pair(seed: u64, h: usize, w: usize) -> DprPair {
    let px = |k: usize, salt: usize| ((k * 31 + salt * 17 + seed as usize) % 251) as u8;
    let original = RawImage::new(h, w, (0..h * w * 3).map(|k| px(k, 1)).collect()).unwrap();
    let source = RawImage::new(h, w, (0..h * w * 3).map(|k| px(k, 2)).collect()).unwrap();
    let rects = sample_rects_seeded(seed, 3, 4, (h, w)).unwrap();
    let (patched, mask) = apply_patches(&original, &source, &rects).unwrap();
    DprPair {
        index: 0,
        label: PairLabel::Genuine,
        reference_id: "r".into(),
        probe_id: "p".into(),
        original,
        patched,
        probe: source,
        mask,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_is_a_sorted_permutation(
        values in prop::collection::vec(-3i32..3, 1..80),
        o in orientation(),
    ) {
        let n = values.len();
        let map = PixelMap::new(1, n, values.iter().map(|&v| v as f64 * 0.5).collect()).unwrap();
        let r = rank_pixels(&map, o, "x").unwrap();
        prop_assert!(r.is_permutation(n));
        for pair in r.order.windows(2) {
            let (a, b) = (map.data()[pair[0]], map.data()[pair[1]]);
            match o {
                Orientation::MostSimilarFirst => prop_assert!(a > b || (a == b && pair[0] < pair[1])),
                Orientation::LeastSimilarFirst => prop_assert!(a < b || (a == b && pair[0] < pair[1])),
            }
        }
    }

    #[test]
    fn budgets_are_monotone_and_cover_the_image(pixels in 1usize..20_000, step_k in 1usize..40) {
        let step = 1.0 / step_k as f64;
        let fr = budget_fractions(step).unwrap();
        prop_assert_eq!(fr.len(), step_k + 1);
        let budgets: Vec<usize> = fr.iter().map(|&f| pixel_budget(f, pixels)).collect();
        prop_assert_eq!(budgets[0], 0);
        prop_assert_eq!(*budgets.last().unwrap(), pixels);
        prop_assert!(budgets.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn replacement_restores_exactly_the_ranked_mask_pixels(
        seed in 0u64..500,
        n_frac in 0.0f64..=1.0,
        use_oracle in any::<bool>(),
        o in orientation(),
    ) {
        let pair = small_pair(seed, 12, 10);
        let pixels = pair.original.pixels();
        let ranking = if use_oracle {
            oracle_ranking(&pair.mask, o)
        } else {
            random_ranking(seed, 0, pixels, o)
        };
        let n = pixel_budget(n_frac, pixels);
        let out = replaced_reference(&pair, &ranking, n).unwrap();
        let restored: std::collections::HashSet<usize> = ranking.order[..n].iter().copied().collect();
        for p in 0..pixels {
            let got = &out.data()[p * 3..p * 3 + 3];
            let want = if pair.mask.contains(p) && !restored.contains(&p) {
                &pair.patched.data()[p * 3..p * 3 + 3]
            } else {
                &pair.original.data()[p * 3..p * 3 + 3]
            };
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn error_rates_move_monotonically_with_threshold(
        genuine in prop::collection::vec(-1.0f64..1.0, 1..30),
        imposter in prop::collection::vec(-1.0f64..1.0, 1..30),
        t0 in -1.2f64..1.2,
        dt in 0.0f64..0.5,
    ) {
        let s = ScoreSet::new(genuine, imposter).unwrap();
        let (fm0, fn0) = fmr_fnmr(&s, t0).unwrap();
        let (fm1, fn1) = fmr_fnmr(&s, t0 + dt).unwrap();
        prop_assert!(fm1 <= fm0);
        prop_assert!(fn1 >= fn0);
    }
}
