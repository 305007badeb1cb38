//! Replays the checked-in fuzz corpus, plus truncated and byte-mutated
//! variants of every seed, through the parser entry points on stable.

use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uilab::scenario::{generate_scenario, GridSpec, Regime};
use uilab::{dataset, model, plan, scenario, trainer};

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.into_iter().map(|p| fs::read_to_string(p).unwrap()).collect()
}

/// The seed itself, every line-prefix, and byte-level mutations.
fn variants(seed: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = vec![seed.to_string()];
    let lines: Vec<&str> = seed.lines().collect();
    for n in 0..lines.len() {
        out.push(lines[..n].join("\n"));
    }
    const PICKS: &[u8] = b"0123456789-.,=:()[] \nexabc";
    for _ in 0..200 {
        let mut bytes = seed.as_bytes().to_vec();
        for _ in 0..rng.random_range(1..4) {
            if bytes.is_empty() {
                break;
            }
            let i = rng.random_range(0..bytes.len());
            match rng.random_range(0..3) {
                0 => bytes[i] = PICKS[rng.random_range(0..PICKS.len())],
                1 => {
                    bytes.remove(i);
                }
                _ => bytes.insert(i, PICKS[rng.random_range(0..PICKS.len())]),
            }
        }
        if let Ok(s) = String::from_utf8(bytes) {
            out.push(s);
        }
    }
    out
}

fn each_variant(target: &str, mut f: impl FnMut(&str)) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in seeds(target) {
        for v in variants(&seed, &mut rng) {
            f(&v);
        }
    }
}

#[test]
fn scenario_corpus() {
    for seed in seeds("parse_scenario") {
        assert!(scenario::parse_scenario(&seed).is_ok());
    }
    each_variant("parse_scenario", |text| {
        if let Ok(spec) = scenario::parse_scenario(text) {
            let bytes = scenario::serialize_scenario(&spec);
            let again = scenario::parse_scenario(std::str::from_utf8(&bytes).unwrap()).unwrap();
            assert_eq!(again, spec);
        }
    });
}

#[test]
fn embeddings_corpus() {
    let spec = generate_scenario(GridSpec::new(3, 2).unwrap(), Regime::uil(), 3, 0).unwrap();
    for seed in seeds("parse_embeddings") {
        assert!(dataset::parse_embeddings(&seed, &spec).is_ok());
    }
    each_variant("parse_embeddings", |text| {
        if let Ok(tasks) = dataset::parse_embeddings(text, &spec) {
            let again = dataset::parse_embeddings(&dataset::write_embeddings(&tasks), &spec).unwrap();
            assert_eq!(again, tasks);
        }
    });
}

#[test]
fn checkpoint_corpus() {
    for seed in seeds("parse_checkpoint") {
        assert!(model::parse_checkpoint(&seed).is_ok());
    }
    each_variant("parse_checkpoint", |text| {
        if let Ok(state) = model::parse_checkpoint(text) {
            assert_eq!(model::parse_checkpoint(&state.to_text()).unwrap(), state);
        }
    });
}

#[test]
fn plan_corpus() {
    for seed in seeds("parse_plan") {
        plan::parse_plan(&seed).unwrap().validate().unwrap();
    }
    each_variant("parse_plan", |text| {
        if let Ok(p) = plan::parse_plan(text) {
            let _ = p.validate();
        }
    });
}

#[test]
fn run_meta_corpus() {
    let mut parsed_meta = 0;
    each_variant("parse_run_meta", |text| {
        if let Ok(meta) = trainer::parse_meta(text) {
            if let Ok(cfg) = trainer::config_from_meta(&meta) {
                parsed_meta += 1;
                let echoed = trainer::parse_meta(&cfg.to_meta()).unwrap();
                assert_eq!(trainer::config_from_meta(&echoed).unwrap().to_meta(), cfg.to_meta());
            }
        }
        if let Ok(rows) = trainer::parse_diag_csv(text) {
            assert_eq!(trainer::parse_diag_csv(&trainer::write_diag_csv(&rows)).unwrap(), rows);
        }
    });
    assert!(parsed_meta > 0);
}
