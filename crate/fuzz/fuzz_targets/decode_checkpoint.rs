#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let _ = fewshot_tsc::embedder::checkpoint::decode(bytes);
});
