#![no_main]
use libfuzzer_sys::fuzz_target;
use rvhate::ingestion::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dataset::from_reader("fuzz", data) {
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let again = Dataset::from_reader("fuzz", buf.as_slice()).unwrap();
        assert_eq!(again, d);
    }
});
