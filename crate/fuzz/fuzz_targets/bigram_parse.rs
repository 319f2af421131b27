#![no_main]

use forgetgen::model::BigramModel;
use forgetgen::{LanguageModel, TokenId, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = Vocabulary::from_words(["a", "b", "c", "end"]).unwrap();
    if let Ok(model) = BigramModel::parse(text, &vocab, "fuzz") {
        for prev in 0..vocab.len() as u32 {
            let row = model.next_token_logprobs(&[TokenId(prev)]).unwrap();
            let mass: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-6, "row {prev} sums to {mass}");
        }
    }
});
