#![no_main]
//! Strict and tolerant chain parsing on arbitrary text. Anything the strict
//! parser accepts and that validates must reach a serialization fixed point.

use libfuzzer_sys::fuzz_target;
use robustlab::chain::{parse_chain, parse_chain_tolerant, serialize_chain};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = parse_chain_tolerant(&text);
    if let Ok(chain) = parse_chain(&text) {
        if chain.validate().is_ok() {
            let text = serialize_chain(&chain);
            let again = parse_chain(&text).expect("serialized chain parses");
            assert_eq!(serialize_chain(&again), text);
        }
    }
});
