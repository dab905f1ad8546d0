#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = fewshot_tsc::data::parse_task_log(text);
});
