use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use asr_probe::experiment::{compensated_sum, Cell};
use asr_probe::pmi::{compute_pmi, rank_top, scan_corpus, scan_sharded, CorpusStats};
use asr_probe::rng::{derive_seed, StimulusRng};
use asr_probe::scorer::{surprisal, PatternOracle, ScoreRequest, Scorer, UniformScorer};
use asr_probe::stimulus::{
    build_priming_sequence, generate_prime_trigrams, generate_probe_trigrams, render_ids,
    select_prime_material, select_probe_material, Pattern, TriGram, Vocabulary, RENDERED_LEN,
    SEQUENCE_LEN,
};

fn sameness() -> impl Strategy<Value = Pattern> {
    prop::sample::select(Pattern::SAMENESS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn priming_sequences_hold_their_invariants(seed in any::<u64>(), size in 20usize..400, p in sameness()) {
        let (vocab, sep) = Vocabulary::synthetic(size).unwrap();
        let mut rng = StimulusRng::from_seed(seed);
        let prime = select_prime_material(&vocab, &mut rng).unwrap();
        let unique = generate_prime_trigrams(&prime, p).unwrap();
        prop_assert_eq!(unique.len(), 4);
        let seq = build_priming_sequence(&unique, 4, derive_seed("shuffle", seed, &[])).unwrap();
        prop_assert_eq!(seq.trigrams.len(), SEQUENCE_LEN);
        prop_assert_eq!(seq.distinct_trigrams(), 4);
        let mut counts: HashMap<[u32; 3], usize> = HashMap::new();
        for t in &seq.trigrams {
            prop_assert_eq!(t.pattern, p);
            prop_assert!(t.is_valid());
            *counts.entry(t.ids()).or_default() += 1;
        }
        prop_assert!(counts.values().all(|&c| c == 4));
        prop_assert!(!seq.token_ids().contains(&sep.id));

        let rendered = render_ids(&seq, &sep);
        prop_assert_eq!(rendered.len(), RENDERED_LEN);
        for (i, id) in rendered.iter().enumerate() {
            prop_assert_eq!(*id == sep.id, i % 4 == 3);
        }

        let probe = select_probe_material(&vocab, &mut rng, &prime).unwrap();
        let probe_ids: HashSet<u32> = probe.ids().collect();
        prop_assert_eq!(probe_ids.len(), 8);
        prop_assert!(prime.ids().all(|id| !probe_ids.contains(&id)));
        for q in Pattern::ALL {
            let tris = generate_probe_trigrams(&probe, q, &mut rng);
            prop_assert_eq!(tris.len(), 16);
            for t in &tris {
                prop_assert_eq!(Pattern::of(&t.tokens[0], &t.tokens[1], &t.tokens[2]), Some(q));
            }
        }
    }

    #[test]
    fn rendering_is_injective(s1 in any::<u64>(), s2 in any::<u64>(), p in sameness()) {
        let (vocab, sep) = Vocabulary::synthetic(100).unwrap();
        let build = |seed: u64| {
            let mut rng = StimulusRng::from_seed(seed);
            let m = select_prime_material(&vocab, &mut rng).unwrap();
            build_priming_sequence(&generate_prime_trigrams(&m, p).unwrap(), 4, seed).unwrap()
        };
        let (a, b) = (build(s1), build(s2));
        prop_assert_eq!(a.trigrams == b.trigrams, render_ids(&a, &sep) == render_ids(&b, &sep));
    }

    #[test]
    fn sharded_scan_equals_single_scan(
        docs in prop::collection::vec(prop::collection::vec(0u32..6, 0..40), 0..30),
        shards in 1usize..8,
    ) {
        let excluded: HashSet<u32> = [5].into_iter().collect();
        let single = scan_corpus(&docs, &excluded);
        prop_assert_eq!(&scan_sharded(&docs, shards, &excluded), &single);
        let mut merged = CorpusStats::new();
        for d in docs.iter().rev() {
            merged.merge(scan_corpus([d], &excluded));
        }
        prop_assert_eq!(merged, single);
    }

    #[test]
    fn pmi_is_invariant_under_replication(
        docs in prop::collection::vec(prop::collection::vec(0u32..4, 3..50), 1..10),
        k in 2usize..5,
    ) {
        let none = HashSet::new();
        let once = scan_corpus(&docs, &none);
        let many = scan_corpus(docs.iter().cycle().take(docs.len() * k), &none);
        for p in Pattern::SAMENESS {
            let a = rank_top(&once, p, 1, 32, "x").unwrap();
            let b = rank_top(&many, p, 1, 32, "x").unwrap();
            prop_assert_eq!(a.entries.len(), b.entries.len());
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert_eq!(x.ids, y.ids);
                prop_assert_eq!(x.count * k as u64, y.count);
                prop_assert_eq!(x.pmi.to_bits(), y.pmi.to_bits());
                prop_assert_eq!(compute_pmi(&x.ids, &once).unwrap().to_bits(), x.pmi.to_bits());
            }
        }
    }

    #[test]
    fn cell_mean_ignores_order(values in prop::collection::vec(0.0f64..100.0, 1..300), seed in any::<u64>()) {
        let mut shuffled = values.clone();
        StimulusRng::from_seed(seed).shuffle(&mut shuffled);
        let a = Cell::from_values(Pattern::AAB, Pattern::ABB, &values);
        let b = Cell::from_values(Pattern::AAB, Pattern::ABB, &shuffled);
        prop_assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(1.0));
        prop_assert_eq!(a.n, values.len() as u64);
        let naive = values.iter().sum::<f64>();
        prop_assert!((compensated_sum(values.iter().copied()) - naive).abs() <= 1e-9 * naive.max(1.0));
    }

    #[test]
    fn oracle_distribution_sums_to_one(alpha in 0.05f64..0.99, seed in any::<u64>(), p in sameness()) {
        let size = 60;
        let (vocab, sep) = Vocabulary::synthetic(size).unwrap();
        let oracle = PatternOracle::new(alpha, size, sep.id);
        let mut rng = StimulusRng::from_seed(seed);
        let m = select_prime_material(&vocab, &mut rng).unwrap();
        let seq = build_priming_sequence(&generate_prime_trigrams(&m, p).unwrap(), 4, seed).unwrap();
        let mut context = render_ids(&seq, &sep);
        for _ in 0..3 {
            let total: f64 = (0..size as u32)
                .map(|t| oracle.score(ScoreRequest { context: &context, target: t }).unwrap().exp2())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{total}");
            context.push(1 + rng.below(size - 1) as u32);
        }
    }

    #[test]
    fn uniform_surprisal_is_two_positions(size in 8usize..5000) {
        let (vocab, sep) = Vocabulary::synthetic(size).unwrap();
        let scorer = UniformScorer::new(size);
        let tok = |id: u32| vocab.get(id).unwrap().clone();
        let probe = TriGram::new(tok(1), tok(2), tok(3), Pattern::ABC).unwrap();
        let m = surprisal(&scorer, &[sep.id], sep.id, Pattern::AAB, &probe).unwrap();
        prop_assert!((m.surprisal - 2.0 * (size as f64).log2()).abs() < 1e-9);
    }
}
