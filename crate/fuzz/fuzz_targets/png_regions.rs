#![no_main]
use confill::image::decode_control_png;
use confill::{Image, Mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Mask::decode_png(data) {
        assert_eq!(Mask::decode_png(&m.encode_png().unwrap()).unwrap(), m);
    }
    if let Ok((avoid, usable)) = decode_control_png(data) {
        assert_eq!((avoid.width(), avoid.height()), (usable.width(), usable.height()));
    }
    let _ = Image::decode_png(data);
});
