#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = dtn_lqr::table::parse_sweep_range(text) {
        assert!(!points.is_empty() && points.len() <= dtn_lqr::table::MAX_SWEEP_POINTS);
        assert!(points.windows(2).all(|w| w[0] < w[1]));
    }
});
