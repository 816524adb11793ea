#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = dtn_lqr::scenario::parse_scenario_str(text) {
        assert!(s.horizon > 0.0);
        assert_eq!(s.weights.u_bar.len(), s.model.classes());
    }
});
