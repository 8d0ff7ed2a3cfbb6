#![no_main]

use koopman_prune::systems::{generate_data, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ExperimentConfig::from_json(text) else {
        return;
    };
    if cfg.n_traj.saturating_mul(cfg.traj_len) <= 256 {
        if let Ok(set) = generate_data(&cfg) {
            assert_eq!(set.len(), cfg.n_traj * cfg.traj_len);
        }
    }
});
