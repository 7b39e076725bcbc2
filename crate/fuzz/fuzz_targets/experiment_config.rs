#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::Path;

use merov::runner::{expand_matrix, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::parse(text, Path::new("/fuzz")) else { return };
    let size = [
        cfg.variants.len(),
        cfg.modality_sets.len(),
        cfg.llm.len().max(1),
        cfg.video.len().max(1),
        cfg.audio.len().max(1),
        cfg.designs.len(),
        cfg.strategies.len(),
        cfg.context_levels.len(),
        cfg.sampling.len(),
        cfg.repeats as usize,
    ]
    .iter()
    .try_fold(1usize, |acc, n| acc.checked_mul(*n));
    if size.is_some_and(|n| n <= 20_000) {
        if let Ok(m) = expand_matrix(&cfg) {
            assert!(!m.specs.is_empty());
        }
    }
});
