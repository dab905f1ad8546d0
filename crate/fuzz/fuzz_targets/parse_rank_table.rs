#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = fewshot_tsc::eval::RankTable::from_csv(text, &[]);
});
