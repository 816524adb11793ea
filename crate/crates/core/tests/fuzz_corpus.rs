//! Replays the checked-in fuzz seeds through the parsers.

use std::fs;
use std::path::PathBuf;

use dtn_lqr::scenario::parse_scenario_str;
use dtn_lqr::table::{parse_sweep_range, parse_trajectory_csv, MAX_SWEEP_POINTS};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn scenario_seeds() {
    let mut accepted = 0;
    for (path, text) in seeds("scenario_parse") {
        if let Ok(s) = parse_scenario_str(&text) {
            assert!(s.horizon > 0.0, "{}", path.display());
            assert_eq!(s.weights.u_bar.len(), s.model.classes());
            accepted += 1;
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn sweep_seeds() {
    for (path, text) in seeds("sweep_range") {
        if let Ok(points) = parse_sweep_range(&text) {
            assert!(!points.is_empty() && points.len() <= MAX_SWEEP_POINTS, "{}", path.display());
            assert!(points.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn trajectory_seeds() {
    let mut accepted = 0;
    for (_, text) in seeds("trajectory_csv") {
        if let Ok(cols) = parse_trajectory_csv(&text) {
            assert_eq!(cols.t.len(), cols.x.len());
            assert_eq!(cols.t.len(), cols.delivery.len());
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
}
