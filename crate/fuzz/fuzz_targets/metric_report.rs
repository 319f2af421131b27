#![no_main]

use forgetgen::metrics::MetricReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = MetricReport::from_json(text);
    }
});
