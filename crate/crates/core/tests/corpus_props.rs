mod support;

use bitrain_core::corpus::{
    build_bidirectional, sentence_level_switch, shuffle_corpus, split_corpus, swap_pair, OriginTag, ParallelCorpus,
    SentencePair,
};
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = SentencePair> {
    let side = prop::collection::vec("[a-e]{1,3}", 1..5);
    let tag = prop::sample::select(vec![
        OriginTag::Original,
        OriginTag::Swapped,
        OriginTag::SyntheticBt,
        OriginTag::Distilled,
    ]);
    (side.clone(), side, tag).prop_map(|(s, t, o)| SentencePair::new(s, t, o).unwrap())
}

fn corpus(max: usize) -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec(pair(), 1..max).prop_map(|p| ParallelCorpus::new(p, "en", "de").unwrap())
}

#[test]
fn randomized_corpus_laws() {
    support::corpus_algebra::run(250, &[1, 2]).assert();
}

proptest! {
    #[test]
    fn doubling_twice_quadruples(c in corpus(12)) {
        let twice = build_bidirectional(&build_bidirectional(&c).unwrap()).unwrap();
        prop_assert_eq!(twice.len(), 4 * c.len());
    }

    #[test]
    fn reversing_swaps_every_pair(c in corpus(12)) {
        let r = c.reversed();
        prop_assert_eq!(r.reversed(), c.clone());
        for (a, b) in c.pairs.iter().zip(&r.pairs) {
            prop_assert_eq!(&swap_pair(a), b);
        }
    }

    #[test]
    fn switching_with_probability_one_swaps_everything(c in corpus(12), seed in any::<u64>()) {
        let all = sentence_level_switch(&c, 1.0, seed).unwrap();
        let none = sentence_level_switch(&c, 0.0, seed).unwrap();
        prop_assert_eq!(none, c.clone());
        for (a, b) in c.pairs.iter().zip(&all.pairs) {
            prop_assert_eq!(&swap_pair(a), b);
        }
    }

    #[test]
    fn shuffle_is_a_seeded_permutation(c in corpus(20), seed in any::<u64>()) {
        let a = shuffle_corpus(&c, seed);
        prop_assert_eq!(&a, &shuffle_corpus(&c, seed));
        let key = |p: &SentencePair| format!("{:?}", p);
        let mut x: Vec<String> = a.pairs.iter().map(key).collect();
        let mut y: Vec<String> = c.pairs.iter().map(key).collect();
        x.sort();
        y.sort();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn split_rejects_holding_out_everything(c in corpus(8), seed in any::<u64>()) {
        let n = c.len();
        prop_assert!(split_corpus(&c, n, 1, seed).is_err());
    }
}
