#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(state) = uilab::model::parse_checkpoint(text) {
        let again = uilab::model::parse_checkpoint(&state.to_text()).unwrap();
        assert_eq!(again, state);
    }
});
