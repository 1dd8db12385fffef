#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::codec::{decode_uid, encode_uid, split_uid};
use partpq_core::DatasetSpec;

fuzz_target!(|data: [u8; 4]| {
    let uid = u32::from_le_bytes(data);
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    if let Ok((t, _)) = split_uid(uid) {
        let _ = encode_uid(&t);
    }
    if let Ok(t) = decode_uid(uid, &spec) {
        assert_eq!(decode_uid(encode_uid(&t).unwrap(), &spec).unwrap(), t);
    }
});
