#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::prompt::{parse_subquestions, MAX_SUBQUESTIONS};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let qs = parse_subquestions(text);
    assert!(qs.len() <= MAX_SUBQUESTIONS);
    assert!(qs.iter().all(|q| !q.trim().is_empty()));
});
