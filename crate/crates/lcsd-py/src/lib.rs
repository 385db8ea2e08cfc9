use pyo3::prelude::*;

#[pymodule]
fn lcsd_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
