#![no_main]

use fewshot_tsc::data::{parse_ucr_str, Delimiter, ParseOptions, Provenance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(ds) = parse_ucr_str(text, "fuzz", Provenance::OriginalTrain, &ParseOptions::default()) else {
        return;
    };
    // Whatever parses must survive a text round trip.
    let again = parse_ucr_str(&ds.to_ucr_string(Delimiter::Tab), "fuzz", Provenance::OriginalTrain, &ParseOptions::default())
        .expect("re-parse");
    assert_eq!(ds, again);
});
