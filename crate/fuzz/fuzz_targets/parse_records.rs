#![no_main]

use fewshot_tsc::eval::{aggregate, TaskResult};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(records) = fewshot_tsc::jsonl::parse_jsonl::<TaskResult>(text) {
        let _ = aggregate(&records);
    }
});
