#![no_main]

use koopman_prune::pruning::PruneReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(report) = PruneReport::from_json(text) else {
        return;
    };
    let json = report.to_json();
    assert_eq!(PruneReport::from_json(&json).unwrap().to_json(), json);
    let _ = report.basis_for_dim(report.final_dim());
});
