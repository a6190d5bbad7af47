#![no_main]
use libfuzzer_sys::fuzz_target;
use rvhate::ingestion::EmbeddingMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = EmbeddingMatrix::decode(data) {
        // stored values are kept bit for bit
        assert_eq!(m.encode(), data);
        assert!(m.warning_count() <= m.count());
    }
});
