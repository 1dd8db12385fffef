#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::DatasetSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = DatasetSpec::from_json_bytes(data) {
        let again = DatasetSpec::from_json(&spec.to_json()).expect("serialized spec parses");
        assert_eq!(again.scene_classes(), spec.scene_classes());
    }
});
