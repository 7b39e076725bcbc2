#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::eval::{parse_grouping_response, GroupAssignment};
use merov::labels::EmotionLabelSet;

// First line: comma-separated input labels. Rest: the oracle's reply.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (head, reply) = text.split_once('\n').unwrap_or((text, ""));
    let inputs = EmotionLabelSet::from_terms(head.split(','));
    let inputs = inputs.as_slice().to_vec();
    if let Ok(groups) = parse_grouping_response(reply, &inputs) {
        let asg = GroupAssignment::from_groups(groups).expect("parsed groups form a partition");
        assert!(asg.covers(&inputs));
    }
});
