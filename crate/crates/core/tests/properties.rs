use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

use toc_core::codegen::{parse_completion, render_completion, sample_profiles};
use toc_core::decimal::{self, Decimal};
use toc_core::task::{parse_task_suite, serialize_task_suite, Matcher, TaskSpec};
use toc_core::tree::ToCConfig;
use toc_core::voting::{majority_vote, normalize_answer, VoteMethod};

/// Value of a plain decimal string computed digit by digit.
fn rational_of(s: &str) -> BigRational {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let mut numer = BigInt::from(0);
    for c in int.chars().chain(frac.chars()) {
        numer = numer * 10 + c.to_digit(10).unwrap();
    }
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let value = BigRational::new(numer, denom);
    if neg {
        -value
    } else {
        value
    }
}

fn decimal_string() -> impl Strategy<Value = String> {
    ("[+-]?", "[0-9]{1,12}", proptest::option::of("[0-9]{1,12}")).prop_map(|(sign, int, frac)| match frac {
        Some(f) => format!("{sign}{int}.{f}"),
        None => format!("{sign}{int}"),
    })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,30}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn normalize_is_idempotent_on_answer_like_text(s in "[ \\t\\nA-Za-z0-9.,+-]{0,24}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn decimal_canonical_preserves_value(s in decimal_string()) {
        let d = Decimal::parse(&s).unwrap();
        let canonical = d.canonical();
        prop_assert_eq!(rational_of(&canonical), rational_of(&s));
        prop_assert_eq!(Decimal::parse(&canonical).unwrap().canonical(), canonical.clone());
        prop_assert!(!canonical.starts_with('+') && canonical != "-0");
        prop_assert!(!canonical.contains('.') || !canonical.ends_with('0'));
    }

    #[test]
    fn equal_values_share_a_canonical_form(s in decimal_string(), pad in 0usize..5, lead in 0usize..3) {
        let (sign, body) = if let Some(rest) = s.strip_prefix('-') { ("-", rest) } else { ("", s.trim_start_matches('+')) };
        let padded = if body.contains('.') {
            format!("{sign}{}{body}{}", "0".repeat(lead), "0".repeat(pad))
        } else {
            format!("{sign}{}{body}.{}", "0".repeat(lead), "0".repeat(pad + 1))
        };
        prop_assert_eq!(
            Decimal::parse(&padded).unwrap().canonical(),
            Decimal::parse(&s).unwrap().canonical()
        );
    }

    #[test]
    fn tolerance_matches_rational_arithmetic(a in decimal_string(), b in decimal_string(), t in "[0-9]{1,3}(\\.[0-9]{1,4})?") {
        let diff = rational_of(&a) - rational_of(&b);
        let abs = if diff < BigRational::from_integer(0.into()) { -diff } else { diff };
        let expected = abs <= rational_of(&t);
        let got = decimal::within_tolerance(
            &Decimal::parse(&a).unwrap(),
            &Decimal::parse(&b).unwrap(),
            &Decimal::parse(&t).unwrap(),
        );
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn vote_matches_brute_force(labels in proptest::collection::vec(0u8..5, 1..20)) {
        let alphabet = ["Paris", "paris.", "3.0", "3", "London", "rome"];
        let pool: Vec<(usize, String)> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, alphabet[*l as usize].to_string()))
            .collect();
        let vote = majority_vote(&pool);

        // Oracle: quadratic counting, ties broken by earliest node.
        let keys: Vec<String> = pool.iter().map(|(_, a)| normalize_answer(a)).collect();
        let count = |k: &str| keys.iter().filter(|x| *x == k).count();
        let best = keys.iter().map(|k| count(k)).max().unwrap();
        let leaders: Vec<usize> = (0..keys.len()).filter(|&i| count(&keys[i]) == best).collect();
        let distinct_leaders: std::collections::BTreeSet<&String> = leaders.iter().map(|&i| &keys[i]).collect();
        let winner_index = leaders[0];

        prop_assert_eq!(vote.tie, distinct_leaders.len() > 1);
        prop_assert_eq!(normalize_answer(vote.winner.as_deref().unwrap()), keys[winner_index].clone());
        prop_assert_eq!(vote.winner.as_deref(), Some(pool[winner_index].1.as_str()));
        prop_assert_eq!(vote.counts.values().map(|c| c.count).sum::<usize>(), pool.len());
        let expected_method = if vote.counts.len() == 1 {
            VoteMethod::Unanimous
        } else if distinct_leaders.len() == 1 {
            VoteMethod::Majority
        } else {
            VoteMethod::FallbackEarliest
        };
        prop_assert_eq!(vote.method, expected_method);
    }

    #[test]
    fn render_then_parse_is_identity(
        thought in "[^`\\r]{0,80}",
        code in proptest::collection::vec("[^`\\r\\n]{0,40}", 0..8),
    ) {
        let code = code.join("\n");
        let text = render_completion(&thought, &code);
        prop_assert_eq!(parse_completion(&text).unwrap(), (thought.trim().to_string(), code));
    }

    #[test]
    fn profiles_are_distinct_and_rotate(
        models in 1usize..4, temps in 1usize..4, variants in 1usize..4,
        layer in 0usize..10, ordinal in 0usize..30, k_seed in 0usize..100,
    ) {
        let config = ToCConfig {
            models: (0..models).map(|i| format!("p:m{i}")).collect(),
            temperatures: (0..temps).map(|i| i as f64 / 10.0).collect(),
            prompt_variants: ["engineer", "planner", "critic"][..variants].iter().map(|s| s.to_string()).collect(),
            ..ToCConfig::default()
        };
        let size = models * temps * variants;
        let k = k_seed % size + 1;
        let profiles = sample_profiles(&config, k, layer, ordinal).unwrap();
        prop_assert_eq!(profiles.len(), k);
        for (i, a) in profiles.iter().enumerate() {
            for b in &profiles[i + 1..] {
                prop_assert!(a != b);
            }
        }
        // Shifting layer or ordinal by one advances the window by one.
        let next = sample_profiles(&config, size, layer + 1, ordinal).unwrap();
        let same = sample_profiles(&config, size, layer, ordinal + 1).unwrap();
        prop_assert_eq!(&next, &same);
        let all = sample_profiles(&config, size, layer, ordinal).unwrap();
        prop_assert_eq!(&all[1..], &next[..size - 1]);
        prop_assert!(sample_profiles(&config, size + 1, layer, ordinal).is_err());
    }

    #[test]
    fn task_suites_round_trip(
        ids in proptest::collection::btree_set("[a-z][a-z0-9-]{0,10}", 1..6),
        tol in proptest::option::of(0u32..1000),
        arg in proptest::option::of("[a-z]{1,8}"),
    ) {
        let tasks: Vec<TaskSpec> = ids
            .into_iter()
            .map(|id| TaskSpec {
                query: format!("question {id}"),
                tool_pack: "arithmetic".into(),
                expected_answer: "1".into(),
                matcher: match tol {
                    Some(t) => Matcher::Numeric { tolerance: t as f64 / 8.0 },
                    None => Matcher::Normalized,
                },
                task_args: arg.iter().map(|a| ("site".to_string(), serde_json::json!(a))).collect::<BTreeMap<_, _>>(),
                task_id: id,
            })
            .collect();
        let text = serialize_task_suite(&tasks);
        prop_assert_eq!(parse_task_suite(&text).unwrap(), tasks);
    }
}
