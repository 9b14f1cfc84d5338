use std::ffi::CStr;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &CStr) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("gcad", wrap_pymodule!(gcad_py::gcad_module)(py))?;
        py.run(code, Some(&globals), None)
    })
}

#[test]
fn metrics_and_errors() {
    run(c"
assert gcad.auroc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == 0.75
assert gcad.auprc([1.0, 2.0, 3.0, 4.0], [False, False, True, True]) == 1.0
try:
    gcad.auroc([1.0, 2.0], [False, False])
    raise AssertionError('accepted')
except gcad.GcadRuntimeError:
    pass
try:
    gcad.auroc([1.0], [True, False])
    raise AssertionError('accepted')
except ValueError:
    pass
")
    .unwrap();
}

#[test]
fn config_keywords() {
    run(c"
import json
c = json.loads(gcad.DetectorConfig(max_lag=6, beta=1.5, patience=None, optimizer='adam').to_json())
assert c['max_lag'] == 6 and c['beta'] == 1.5 and c['patience'] is None and c['optimizer'] == 'adam'
assert json.loads(gcad.DetectorConfig().to_json())['bernoulli_p'] == 0.2
for bad in ({'stride': 0}, {'typo': 1}, {'beta': 'x'}):
    try:
        gcad.DetectorConfig(**bad)
        raise AssertionError(bad)
    except ValueError:
        pass
")
    .unwrap();
}

#[test]
fn dataset_and_synth() {
    run(c"
d = gcad.Dataset([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [False, True, False])
assert len(d) == 3 and d.n_channels == 2 and d.labels == [False, True, False]
assert d.slice(1, 3).rows() == [[3.0, 4.0], [5.0, 6.0]]
spec = gcad.SynthSpec.default_benchmark()
again = gcad.SynthSpec.from_json(spec.to_json())
assert again.to_json() == spec.to_json()
")
    .unwrap();
}
