//! The trajectory CSV parser must never panic, and anything it accepts must
//! survive an emit/parse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = epiloop::parse_csv(text) {
        let emitted = epiloop::emit_csv(&records);
        let reparsed = epiloop::parse_csv(&emitted).expect("re-parse of emitted CSV failed");
        assert_eq!(reparsed, records, "round trip changed records");
    }
});
