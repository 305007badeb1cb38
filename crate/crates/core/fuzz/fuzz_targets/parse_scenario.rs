#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = uilab::scenario::parse_scenario(text) {
        let bytes = uilab::scenario::serialize_scenario(&spec);
        let again = uilab::scenario::parse_scenario(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(uilab::scenario::serialize_scenario(&again), bytes);
    }
});
