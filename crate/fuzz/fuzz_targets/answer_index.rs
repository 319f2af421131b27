#![no_main]

use forgetgen::retrieval::AnswerIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(index) = AnswerIndex::from_json(text) {
        let again = AnswerIndex::from_json(&index.to_json().unwrap()).unwrap();
        assert_eq!(again.len(), index.len());
    }
});
