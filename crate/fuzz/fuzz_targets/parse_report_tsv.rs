#![no_main]
use libfuzzer_sys::fuzz_target;
use metabias::report::parse_report_tsv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = parse_report_tsv(text) {
        let tsv = table.to_tsv();
        let again = parse_report_tsv(&tsv).expect("emitted report parses");
        assert_eq!(again.to_tsv(), tsv);
    }
});
