mod common;

use layoutkit::icbp::{LayoutPrompt, Span};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parse_inverts_serialize(seed in any::<u64>()) {
        let p = common::random_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let text = p.serialize();
        let back = LayoutPrompt::parse(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.serialize(), text);
    }

    #[test]
    fn stripping_removes_every_tag_and_is_idempotent(seed in any::<u64>()) {
        let p = common::random_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let once = p.strip_coordinates();
        prop_assert!(!once.contains("<bbox>"));
        let reparsed = LayoutPrompt::parse(&once).unwrap();
        prop_assert!(reparsed.spans.iter().all(|s| matches!(s, Span::Plain(_))));
        prop_assert_eq!(reparsed.strip_coordinates(), once);
    }

    #[test]
    fn layout_json_round_trip(seed in any::<u64>()) {
        let p = common::random_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let layout = p.to_layout();
        let json = serde_json::to_string(&layout).unwrap();
        let rebuilt = LayoutPrompt::from_layout(&serde_json::from_str(&json).unwrap()).unwrap();
        prop_assert_eq!(rebuilt.to_layout(), layout);
    }
}
