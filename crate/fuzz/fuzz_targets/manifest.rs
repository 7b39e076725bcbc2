#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::dataset::parse_manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(samples) = parse_manifest(text, None) {
        let ids: std::collections::HashSet<_> = samples.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), samples.len());
    }
});
