#![no_main]
use libfuzzer_sys::fuzz_target;
use metabias::simlab::{parse_scenario_config, write_scenario_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse_scenario_config(text) {
        let again =
            parse_scenario_config(&write_scenario_config(&config)).expect("written config parses");
        assert_eq!(again, config);
    }
});
