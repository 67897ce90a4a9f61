#![no_main]
use libfuzzer_sys::fuzz_target;
use metabias::report::parse_report_json;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = parse_report_json(text) {
        let json = table.to_json().expect("accepted table serialises");
        let again = parse_report_json(&json).expect("emitted report parses");
        assert_eq!(again.to_json().unwrap(), json);
    }
});
