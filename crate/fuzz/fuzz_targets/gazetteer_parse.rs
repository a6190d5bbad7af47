#![no_main]
use libfuzzer_sys::fuzz_target;
use rvhate::ingestion::{Label, LabeledExample, Split};
use rvhate::tagging::{tag_targets, Gazetteer};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(g) = Gazetteer::parse(text) {
        let ex = LabeledExample {
            id: "x".into(),
            text: text.replace('\t', " "),
            label: Label::HATE,
            split: Split::Train,
        };
        let _ = tag_targets(&ex, &g);
    }
});
