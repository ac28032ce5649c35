//! The scenario-file parser must reject or accept arbitrary bytes without
//! panicking, and accepted scenarios must pass their own validation.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = epiloop::parse_config(text) {
        // anything the parser accepts must be a runnable scenario
        cfg.validate().expect("parsed config failed validation");
    }
});
