#![no_main]

use forgetgen::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(vocab) = Vocabulary::parse(text, "fuzz") {
        // A parsed vocabulary survives its own file format.
        let again = Vocabulary::parse(&vocab.to_file_string(), "fuzz").unwrap();
        assert_eq!(again.words(), vocab.words());
    }
});
