#![no_main]

use forgetgen::classifier::parse_labeled_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_labeled_jsonl(text, "fuzz");
    }
});
