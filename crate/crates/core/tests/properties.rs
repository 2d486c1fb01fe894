use mdew::data::{stratified_kfold_targets, two_stage_split};
use mdew::ensemble::softmax;
use proptest::prelude::*;

fn targets() -> impl Strategy<Value = Vec<u8>> {
    (5usize..40, 5usize..40).prop_flat_map(|(neg, pos)| {
        Just((0..neg + pos).map(|i| u8::from(i >= neg)).collect::<Vec<u8>>()).prop_shuffle()
    })
}

proptest! {
    #[test]
    fn folds_partition_and_stratify(t in targets(), k in 2usize..6, seed in any::<u64>()) {
        let plan = stratified_kfold_targets(&t, k, seed).unwrap();
        let mut seen = vec![0; t.len()];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = (0..k).map(|f| plan.test_indices(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..2u8 {
            let per: Vec<usize> = (0..k)
                .map(|f| plan.test_indices(f).iter().filter(|&&i| t[i] == class).count())
                .collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(&plan, &stratified_kfold_targets(&t, k, seed).unwrap());
    }

    #[test]
    fn stage_split_sizes(t in targets(), frac in 0.05f64..0.6, seed in any::<u64>()) {
        let all: Vec<usize> = (0..t.len()).collect();
        let (s1, s2) = two_stage_split(&all, frac, seed, &t).unwrap();
        prop_assert_eq!(s1.len() + s2.len(), t.len());
        prop_assert!((s2.len() as f64 - frac * t.len() as f64).abs() <= 0.5 + 1e-9);
        let mut both: Vec<usize> = s1.iter().chain(&s2).copied().collect();
        both.sort_unstable();
        prop_assert_eq!(both, all);
    }

    #[test]
    fn softmax_is_a_simplex(scores in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let w = softmax(&scores);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..w.len() {
            for j in 0..w.len() {
                if scores[i] > scores[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }
}
