//! Arbitrary text into the configuration parser. Errors are fine; panics
//! are not. Anything that parses must survive a render/parse round trip.
//!
//! Run with: `cargo +nightly fuzz run parse_spec`

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = dpasim::parse_spec(text) {
        let again = dpasim::parse_spec(&spec.render()).expect("rendered spec parses");
        assert_eq!(again, spec);
    }
});
