#![no_main]

use koopman_prune::dictionary::Dictionary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(dict) = Dictionary::from_json(text) else {
        return;
    };
    assert_eq!(Dictionary::from_json(&dict.to_json()).unwrap(), dict);
    // Evaluation must not panic; the value itself may be anything.
    if dict.len() <= 4096 {
        let _ = dict.evaluate_point(&vec![0.5; dict.state_dim()]);
    }
});
