#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::codec::{decode_u32_sidecar, encode_u32_sidecar};
use partpq_core::DatasetSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(raster) = decode_u32_sidecar(data) else { return };
    assert_eq!(encode_u32_sidecar(&raster), data);
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    assert_eq!(raster.to_map(&spec).is_ok(), raster.violations(&spec).is_empty());
});
