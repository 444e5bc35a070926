//! Randomized invariants over the text, vectorization, and federation
//! plumbing. Each property holds for arbitrary inputs in its stated domain,
//! not just the fixtures the unit tests pin down.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use proptest::prelude::*;

use fedbert::baselines::{fit_tfidf, logistic_eval, tfidf_transform, LogisticCurve};
use fedbert::data::{build_text, AttackerType, LabeledText, MessageRecord};
use fedbert::fed::{aggregate, partition, Aggregation, ClientUpdate, FederationConfig, PartitionStrategy};
use fedbert::model::{ParameterSet, Tensor};
use fedbert::tokenizer::{build_vocab, encode, surface_tokenize, CLS, PAD, SEP, UNK};

fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z0-9 .\\-]{0,24}", 1..12)
}

proptest! {
    #[test]
    fn encode_is_total_and_shape_stable(
        corpus in corpus_strategy(),
        text in "\\PC{0,80}",
        max_len in 2usize..64,
        max_size in 5usize..64,
    ) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let vocab = build_vocab(&refs, max_size);
        let seq = encode(&vocab, &text, max_len);

        prop_assert_eq!(seq.ids.len(), max_len);
        prop_assert_eq!(seq.mask.len(), max_len);
        prop_assert_eq!(seq.ids[0], CLS);
        prop_assert!(seq.true_length >= 2 && seq.true_length <= max_len);
        prop_assert_eq!(seq.ids[seq.true_length - 1], SEP);
        for (i, (&id, &m)) in seq.ids.iter().zip(&seq.mask).enumerate() {
            prop_assert!((id as usize) < vocab.size(), "id {id} outside vocabulary");
            prop_assert_eq!(m, u8::from(i < seq.true_length));
            if m == 0 {
                prop_assert_eq!(id, PAD);
            }
        }
    }

    #[test]
    fn unknown_surface_tokens_map_to_unk_never_panic(
        text in "\\PC{0,40}",
    ) {
        // A vocabulary built from an unrelated corpus: every non-special
        // token in `text` must fall back to UNK rather than a stray id.
        let vocab = build_vocab(&["zz qq"], 8);
        let seq = encode(&vocab, &text, 16);
        let body = &seq.ids[1..seq.true_length - 1];
        let surface = surface_tokenize(&text);
        for (id, token) in body.iter().zip(&surface) {
            if !["zz", "qq"].contains(&token.as_str()) {
                prop_assert_eq!(*id, UNK);
            }
        }
    }

    #[test]
    fn vocabulary_ignores_corpus_order(
        corpus in corpus_strategy(),
        rotation in 0usize..12,
    ) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let mut rotated = refs.clone();
        rotated.rotate_left(rotation % refs.len().max(1));
        let a = build_vocab(&refs, 32);
        let b = build_vocab(&rotated, 32);
        prop_assert_eq!(a.size(), b.size());
        for id in 0..a.size() {
            prop_assert_eq!(a.token_of(id as u32), b.token_of(id as u32));
        }
    }

    #[test]
    fn tfidf_vectors_are_unit_length_or_zero(
        corpus in corpus_strategy(),
        probe in "[a-z0-9 .\\-]{0,24}",
        max_features in 1usize..32,
    ) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        if let Ok(vocab) = fit_tfidf(&refs, max_features) {
            let v = tfidf_transform(&vocab, &probe);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(
                (norm - 1.0).abs() < 1e-9 || norm == 0.0,
                "norm {norm} is neither 1 nor 0"
            );
        }
    }

    #[test]
    fn logistic_is_monotone_for_positive_steepness(
        l in 0.1f64..10.0,
        k in 0.01f64..10.0,
        x0 in -50.0f64..50.0,
        a in -1e4f64..1e4,
        b in -1e4f64..1e4,
    ) {
        let curve = LogisticCurve { l, k, x0 };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let fa = logistic_eval(&curve, lo);
        let fb = logistic_eval(&curve, hi);
        prop_assert!(fa <= fb, "f({lo}) = {fa} > f({hi}) = {fb}");
        prop_assert!((0.0..=l).contains(&fa) && (0.0..=l).contains(&fb));
    }

    #[test]
    fn mean_aggregation_stays_in_the_elementwise_hull(
        values in prop::collection::vec(
            prop::collection::vec(-1e12f64..1e12, 4),
            1..7,
        ),
    ) {
        let updates: Vec<ClientUpdate> = values
            .iter()
            .enumerate()
            .map(|(c, vals)| ClientUpdate {
                client_id: c as u32,
                round: 0,
                params: ParameterSet::from_tensors(vec![Tensor::new(
                    "w",
                    vec![vals.len()],
                    vals.clone(),
                )]),
                n_examples: 1 + c as u64,
                loss: 0.0,
            })
            .collect();
        for mode in [Aggregation::Mean, Aggregation::Weighted] {
            let agg = aggregate(&updates, mode).unwrap();
            for vi in 0..4 {
                let col: Vec<f64> = values.iter().map(|v| v[vi]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let got = agg.tensor(0).values[vi];
                let slack = 1e-9 * hi.abs().max(lo.abs()).max(1.0);
                prop_assert!(
                    got >= lo - slack && got <= hi + slack,
                    "{mode:?} output {got} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn partition_preserves_the_example_multiset(
        n in 1usize..60,
        k in 1usize..8,
        seed in any::<u64>(),
        skew in prop::bool::ANY,
    ) {
        prop_assume!(k <= n);
        let train: Vec<LabeledText> = (0..n)
            .map(|i| LabeledText {
                text: format!("example {i}"),
                class_index: i % 3,
                raw_label: (i % 3) as u16,
            })
            .collect();
        let config = FederationConfig {
            n_clients: k,
            seed,
            partition: if skew {
                PartitionStrategy::LabelSkew { alpha: 0.5 }
            } else {
                PartitionStrategy::Iid
            },
            ..Default::default()
        };
        let shards = partition(&train, &config).unwrap();
        prop_assert_eq!(shards.len(), k);

        let count = |examples: &[LabeledText]| {
            let mut m: BTreeMap<String, usize> = BTreeMap::new();
            for e in examples {
                *m.entry(format!("{}#{}", e.text, e.class_index)).or_default() += 1;
            }
            m
        };
        let mut combined: BTreeMap<String, usize> = BTreeMap::new();
        for shard in &shards {
            for (key, c) in count(shard) {
                *combined.entry(key).or_default() += c;
            }
        }
        prop_assert_eq!(combined, count(&train));

        if !skew {
            let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "iid shard sizes {sizes:?} differ by more than 1");
        }
        if k == 1 {
            prop_assert_eq!(&shards[0], &train);
        }
    }

    #[test]
    fn two_decimal_fields_round_half_to_even(
        send_time in -1e7f64..1e7,
        sender in any::<i64>(),
        message in any::<i64>(),
        pos in prop::array::uniform3(-1e6f64..1e6),
        spd in prop::array::uniform3(-1e3f64..1e3),
    ) {
        let record = MessageRecord {
            send_time,
            sender_id: sender,
            message_id: message,
            position: pos,
            speed: spd,
            attacker_type: AttackerType::Benign,
        };
        let text = build_text(&record);
        let fields: Vec<&str> = text.split(' ').collect();
        prop_assert_eq!(fields.len(), 9);
        prop_assert_eq!(fields[1].parse::<i64>(), Ok(sender));
        prop_assert_eq!(fields[2].parse::<i64>(), Ok(message));
        let floats = [send_time, pos[0], pos[1], pos[2], spd[0], spd[1], spd[2]];
        for (field, value) in [0usize, 3, 4, 5, 6, 7, 8].iter().zip(floats) {
            let expect = oracle_two_decimals(value);
            prop_assert_eq!(
                fields[*field],
                expect.as_str(),
                "value {} ({:?} bits)",
                value,
                value.to_bits()
            );
        }
    }
}

/// Renders `v` with exactly two decimals by exact integer arithmetic on the
/// binary value: v = m * 2^e exactly, so v*100 rounds half-to-even as the
/// quotient of (m * 100 * 2^e_pos) by 2^e_neg with no intermediate rounding.
fn oracle_two_decimals(v: f64) -> String {
    let bits = v.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exponent) = if biased == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };

    let scaled = BigInt::from(mantissa) * 100;
    let hundredths = if exponent >= 0 {
        scaled << exponent as u64
    } else {
        let denom = BigInt::from(1) << (-exponent) as u64;
        let quotient = &scaled / &denom;
        let remainder = &scaled % &denom;
        let twice = &remainder * 2;
        if twice > denom || (twice == denom && &quotient % 2 != BigInt::from(0)) {
            quotient + 1
        } else {
            quotient
        }
    };

    let sign = if negative { "-" } else { "" };
    let whole = &hundredths / 100;
    let cents: BigInt = &hundredths % 100;
    format!("{sign}{whole}.{:0>2}", cents.to_string())
}
