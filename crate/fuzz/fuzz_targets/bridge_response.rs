#![no_main]

use forgetgen::bridge::BridgeResponse;
use libfuzzer_sys::fuzz_target;

// Every validator runs on every parsed frame; none may panic.
fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let Ok(response) = BridgeResponse::parse_line(line) else { return };
    let id = response.id.unwrap_or(1);
    let _ = response.clone().into_logprobs(id, 4);
    let _ = response.clone().into_hidden(id, 3);
    let _ = response.clone().into_vector(id, 3);
    let _ = response.into_phrases(id);
});
