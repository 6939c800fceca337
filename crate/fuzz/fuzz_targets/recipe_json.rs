#![no_main]

use libfuzzer_sys::fuzz_target;
use robustlab::DegradationRecipe;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(recipe) = DegradationRecipe::from_json(text) {
        let back = DegradationRecipe::from_json(&recipe.to_json()).expect("round trip");
        assert_eq!(back, recipe);
        let _ = recipe.scaled(0.5);
        let _ = recipe.normalized_to(1.0);
    }
});
