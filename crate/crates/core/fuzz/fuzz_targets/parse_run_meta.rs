#![no_main]

use libfuzzer_sys::fuzz_target;

// run.meta and diag.csv are read together when a run directory is loaded
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = uilab::trainer::parse_meta(text) {
        if let Ok(cfg) = uilab::trainer::config_from_meta(&meta) {
            let echoed = uilab::trainer::parse_meta(&cfg.to_meta()).unwrap();
            assert_eq!(
                uilab::trainer::config_from_meta(&echoed).unwrap().to_meta(),
                cfg.to_meta()
            );
        }
    }
    if let Ok(rows) = uilab::trainer::parse_diag_csv(text) {
        let again = uilab::trainer::parse_diag_csv(&uilab::trainer::write_diag_csv(&rows)).unwrap();
        assert_eq!(again, rows);
    }
});
