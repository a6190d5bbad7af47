#![no_main]
use libfuzzer_sys::fuzz_target;
use rvhate::trainer::ModuleHead;

fuzz_target!(|data: &[u8]| {
    if let Ok(head) = ModuleHead::decode(data) {
        let again = ModuleHead::decode(&head.encode()).unwrap();
        assert_eq!(again, head);
        let x = vec![0.5; head.dim];
        let _ = head.forward(&x);
    }
});
