#![no_main]

use forgetgen::data::{parse_prompt_jsonl, write_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(prompts) = parse_prompt_jsonl(text, "fuzz") {
        let written = write_jsonl(&prompts).unwrap();
        assert_eq!(parse_prompt_jsonl(&written, "fuzz").unwrap(), prompts);
    }
});
