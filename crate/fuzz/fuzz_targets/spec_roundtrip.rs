//! Any document the parser accepts must re-serialize and re-parse to the
//! identical description.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = combsum::specfile::parse_str(text) else { return };
    let rendered = spec.to_toml().expect("accepted documents must serialize");
    let again = combsum::specfile::parse_str(&rendered)
        .expect("serialized documents must parse");
    assert_eq!(spec, again, "round trip changed the description");
});
