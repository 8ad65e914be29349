#![no_main]

use fedcom::data::{read_csv, ColumnRef, CsvOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&mode, body)) = data.split_first() else { return };
    let opts = CsvOptions {
        label_column: if mode & 1 == 0 { ColumnRef::Index(usize::from(mode >> 4)) } else { ColumnRef::Name("label".into()) },
        group_column: (mode & 2 != 0).then_some(ColumnRef::Index(0)),
        has_header: mode & 4 != 0,
    };
    if let Ok(loaded) = read_csv(body, &opts) {
        let ds = &loaded.dataset;
        assert!(ds.labels().iter().all(|&l| l < ds.class_count()));
        if let Some(groups) = &loaded.groups {
            assert_eq!(groups.len(), ds.rows());
        }
    }
});
