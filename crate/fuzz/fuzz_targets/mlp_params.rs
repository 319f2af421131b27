#![no_main]

use forgetgen::classifier::MlpParameters;
use forgetgen::embedding::Embedding;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(params) = MlpParameters::from_json(text) else { return };
    if params.input_dim > 4096 {
        return;
    }
    let z = Embedding(vec![0.5; params.input_dim]);
    let _ = params.forward(&z, None);
    let _ = params.forward(&Embedding(vec![0.5; params.input_dim + 1]), None);
});
