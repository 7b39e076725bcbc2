#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::eval::{parse_lexicon, GroupingOracle};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lex) = parse_lexicon(text) {
        let labels: Vec<String> = text
            .split([',', '\n'])
            .filter_map(merov::labels::normalize_label)
            .take(32)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let grouped = lex.propose(&labels).expect("lexicon grouping is total");
        assert!(grouped.assignment.covers(&labels));
    }
});
