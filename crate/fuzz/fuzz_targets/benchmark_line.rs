#![no_main]

use libfuzzer_sys::fuzz_target;
use robustlab::eval::parse_item_line;

fuzz_target!(|data: &[u8]| {
    let _ = parse_item_line(&String::from_utf8_lossy(data));
});
