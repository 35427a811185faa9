use pyo3::prelude::*;

#[pymodule]
fn tailcause_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
