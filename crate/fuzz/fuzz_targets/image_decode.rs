#![no_main]
//! PNG/JPEG decoding into the RGB raster, then a cheap degradation on
//! whatever decodes.

use libfuzzer_sys::fuzz_target;
use robustlab::{apply_spec, DegradationSpec, DegradationType, RasterImage, RngState};

fuzz_target!(|data: &[u8]| {
    let Ok(img) = RasterImage::decode(data) else { return };
    if u64::from(img.width()) * u64::from(img.height()) > 1 << 16 {
        return;
    }
    let spec = DegradationSpec::new(DegradationType::Darkness, 0.5).unwrap();
    let out = apply_spec(&img, &spec, &mut RngState::new(0)).unwrap();
    assert_eq!((out.width(), out.height()), (img.width(), img.height()));
});
