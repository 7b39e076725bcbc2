#![no_main]

use libfuzzer_sys::fuzz_target;
use merov::report::{parse_report_jsonl, render, ReportFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_report_jsonl(text) {
        let _ = render(&report, ReportFormat::Markdown);
        let _ = render(&report, ReportFormat::Csv);
        let again = parse_report_jsonl(&render(&report, ReportFormat::JsonLines)).expect("rendered rows re-parse");
        assert_eq!(again.rows.len(), report.rows.len());
    }
});
