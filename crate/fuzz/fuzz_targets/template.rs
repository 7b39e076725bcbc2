#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::prompt::render_template;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = render_template(text, &[("scene", "S"), ("context", "C"), ("question", "Q")]);
});
