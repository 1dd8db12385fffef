#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::codec::decode_packed_png;
use partpq_core::DatasetSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(raster) = decode_packed_png(data) else { return };
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    let clean = raster.violations(&spec).is_empty();
    assert_eq!(raster.to_map(&spec).is_ok(), clean);
});
