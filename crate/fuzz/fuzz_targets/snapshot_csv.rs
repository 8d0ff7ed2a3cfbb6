#![no_main]

use koopman_prune::formats::SnapshotSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(set) = SnapshotSet::read_csv(data) else {
        return;
    };
    let mut out = Vec::new();
    set.write_csv(&mut out).unwrap();
    assert_eq!(SnapshotSet::read_csv(out.as_slice()).unwrap(), set);
});
