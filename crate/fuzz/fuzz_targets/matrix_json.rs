#![no_main]

use koopman_prune::formats::{parse_matrix_json, MatrixJson};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(m) = parse_matrix_json(text) else {
        return;
    };
    let json = MatrixJson::from(&m);
    assert_eq!((json.rows, json.cols), m.shape());
    assert_eq!(json.to_matrix().unwrap(), m);
});
