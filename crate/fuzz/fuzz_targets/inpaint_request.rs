#![no_main]
use confill_service::api::parse_request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(job) = parse_request(data) {
        assert_eq!((job.image.width(), job.image.height()), (job.hole.width(), job.hole.height()));
        assert!(job.iterations >= 1);
    }
});
