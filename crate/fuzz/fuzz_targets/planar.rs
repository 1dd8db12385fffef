#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::codec::decode_planar_pngs;
use partpq_core::DatasetSpec;

// input: two little-endian u32 lengths, then the three planes back to back
fuzz_target!(|data: &[u8]| {
    if data.len() < 8 {
        return;
    }
    let a = u32::from_le_bytes(data[0..4].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    let rest = &data[8..];
    if a > rest.len() || b > rest.len() - a {
        return;
    }
    let (sem, tail) = rest.split_at(a);
    let (inst, part) = tail.split_at(b);
    let Ok(raster) = decode_planar_pngs(sem, inst, part) else { return };
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    assert_eq!(raster.to_map(&spec).is_ok(), raster.violations(&spec).is_empty());
});
