use std::ffi::CString;

use pyo3::prelude::*;
use synthherd::synthherd as module;

#[test]
fn smoke_script_passes_in_embedded_interpreter() {
    pyo3::append_to_inittab!(module);
    Python::initialize();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py");
    let code = CString::new(std::fs::read_to_string(path).unwrap()).unwrap();
    Python::attach(|py| {
        let globals = pyo3::types::PyDict::new(py);
        globals.set_item("__name__", "__main__").unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("smoke script failed: {e}");
        }
    });
}
