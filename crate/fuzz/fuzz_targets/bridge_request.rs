#![no_main]

use forgetgen::bridge::BridgeRequest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(request) = serde_json::from_slice::<BridgeRequest>(data) else { return };
    let line = request.to_line().unwrap();
    assert!(!line.contains('\n'));
    assert_eq!(serde_json::from_str::<BridgeRequest>(&line).unwrap(), request);
});
