//! The description-file parser must never panic, whatever bytes arrive.
//! Accepted documents must also build without panicking (small sizes only,
//! so the fuzzer spends its time in the parser, not in permanents).

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = combsum::specfile::parse_str(text) else { return };
    let Ok(e) = spec.build() else { return };
    if e.n() <= 6 {
        let _ = combsum::stats::moment_summary(&e);
    }
});
