//! Runs the checked-in fuzz seeds through the parser so they stay
//! meaningful without a nightly toolchain.

use std::fs;
use std::path::Path;

use dpasim::parse_spec;

#[test]
fn parse_spec_seeds_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/parse_spec");
    let mut parsed = 0;
    let mut rejected = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        match parse_spec(&text) {
            Ok(spec) => {
                assert_eq!(parse_spec(&spec.render()).unwrap(), spec);
                parsed += 1;
            }
            Err(_) => rejected += 1,
        }
    }
    assert!(parsed >= 4 && rejected >= 2, "{parsed} parsed, {rejected} rejected");
}
