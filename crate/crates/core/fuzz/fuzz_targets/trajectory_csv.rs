#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cols) = dtn_lqr::table::parse_trajectory_csv(text) {
        assert_eq!(cols.t.len(), cols.x.len());
        assert_eq!(cols.t.len(), cols.delivery.len());
    }
});
