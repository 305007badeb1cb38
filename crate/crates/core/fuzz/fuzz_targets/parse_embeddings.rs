#![no_main]

use libfuzzer_sys::fuzz_target;
use uilab::scenario::{generate_scenario, GridSpec, Regime};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let spec = generate_scenario(GridSpec::new(3, 2).unwrap(), Regime::uil(), 3, 0).unwrap();
    if let Ok(tasks) = uilab::dataset::parse_embeddings(text, &spec) {
        let again = uilab::dataset::parse_embeddings(&uilab::dataset::write_embeddings(&tasks), &spec).unwrap();
        assert_eq!(again, tasks);
    }
});
