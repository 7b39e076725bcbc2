#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::labels::normalize_label;
use merov::prompt::parse_emotion_list;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(labels) = parse_emotion_list(text) {
        assert!(!labels.is_empty());
        for l in labels.iter() {
            assert_eq!(normalize_label(l).as_deref(), Some(l));
        }
    }
});
