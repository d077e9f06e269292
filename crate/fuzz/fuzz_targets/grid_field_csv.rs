#![no_main]

use libfuzzer_sys::fuzz_target;
use sce_core::grid::{GridField1D, GridField2D};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(f) = GridField1D::from_csv(text) {
        let back = GridField1D::from_csv(&f.to_csv()).expect("written 1D field parses");
        assert_eq!(back.values.len(), f.values.len());
    }
    if let Ok(f) = GridField2D::from_csv(text) {
        let back = GridField2D::from_csv(&f.to_csv()).expect("written 2D field parses");
        assert_eq!(back.values.len(), f.values.len());
    }
});
