#![no_main]
use confill::checkpoint::Container;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        let bytes = c.encode().expect("decoded containers re-encode");
        assert_eq!(Container::decode(&bytes).expect("re-encoded bytes decode").encode().unwrap(), bytes);
    }
});
