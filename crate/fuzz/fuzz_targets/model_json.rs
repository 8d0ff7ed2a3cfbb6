#![no_main]

use koopman_prune::model::{predict, LiftedModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = LiftedModel::from_json(text) else {
        return;
    };
    let json = model.to_json();
    assert_eq!(LiftedModel::from_json(&json).unwrap().to_json(), json);
    if model.dict.len() <= 4096 {
        let _ = predict(&model, &vec![0.25; model.dict.state_dim()], 2, None);
    }
});
