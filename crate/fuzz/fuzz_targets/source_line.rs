#![no_main]

use libfuzzer_sys::fuzz_target;
use robustlab::dataset::parse_source_line;

fuzz_target!(|data: &[u8]| {
    let _ = parse_source_line(&String::from_utf8_lossy(data));
});
