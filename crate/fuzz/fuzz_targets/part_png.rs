#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::merge::PartPrediction;
use partpq_core::DatasetSpec;

fuzz_target!(|data: &[u8]| {
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    if let Ok(pred) = PartPrediction::from_png(data, &spec, None) {
        let back = PartPrediction::from_png(&pred.to_png().unwrap(), &spec, None).unwrap();
        assert_eq!(back, pred);
    }
    let grouping = spec.grouping("grouped").unwrap();
    let _ = PartPrediction::from_png(data, &spec, Some(grouping));
});
