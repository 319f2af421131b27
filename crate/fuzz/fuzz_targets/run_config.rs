#![no_main]

use std::path::Path;

use forgetgen_cli::config::{Overrides, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RunConfig::from_toml(text, Path::new("/nonexistent"), &Overrides::default());
    }
});
