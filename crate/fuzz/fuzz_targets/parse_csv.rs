#![no_main]
use libfuzzer_sys::fuzz_target;
use metabias::dataset::{parse_csv, EffectPolicy};

fuzz_target!(|data: &[u8]| {
    for policy in [EffectPolicy::PreferCounts, EffectPolicy::PreferExplicit] {
        if let Ok(ds) = parse_csv(data, policy) {
            // Accepted datasets must be safe to validate and summarise.
            let _ = ds.validate();
            assert_eq!(ds.n_published() + ds.n_unpublished(), ds.studies().len());
        }
    }
});
