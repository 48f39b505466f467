use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(kog::kog)(py);
        let globals = PyDict::new(py);
        globals.set_item("kog", module).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn skeleton_structures_cross_the_boundary() {
    run(r#"
b = kog.Skeleton.body16()
assert b.num_nodes == 16 and b.root == 1
h = b.signed_distance()
assert h[8][7] == 4 and h[7][8] == -4
assert b.relative_index_map(2, False)[8][7] == 2
assert len(b.order_masks(4)) == 5
lap = b.scaled_laplacian()
assert all(abs(lap[i][j] - lap[j][i]) < 1e-12 for i in range(16) for j in range(16))
"#);
}

#[test]
fn bad_inputs_raise_value_error() {
    run(r#"
try:
    kog.Skeleton(3, [(0, 1), (1, 2), (2, 0)])
    raise AssertionError("cycle accepted")
except ValueError:
    pass
try:
    kog.Model(kog.Skeleton.body16(), '{"kind": "kog-transformer", "dim": 30, "heads": 4}')
    raise AssertionError("bad dim accepted")
except ValueError:
    pass
try:
    kog.mpjpe([[[0.0, 0.0, 0.0]]], [[[0.0, 0.0]]])
    raise AssertionError("shape mismatch accepted")
except ValueError:
    pass
"#);
}

#[test]
fn metrics_and_mesh_model() {
    run(r#"
gt = [[[0.0, 0.0, 0.0], [10.0, 20.0, 30.0]]]
assert abs(kog.mpjpe([[[5.0, 5.0, 5.0], [15.0, 25.0, 35.0]]], gt) ) < 1e-12
assert abs(kog.mpve([[[1.0, 0.0, 0.0], [11.0, 20.0, 30.0]]], gt) - 1.0) < 1e-12
hand = kog.Skeleton.hand21()
cfg = '{"kind": "gase-net", "dim": 8, "schedule": [21, 24, 28, 32, 36, 40], "dropout": 0.0}'
m = kog.Model(hand, cfg, seed=3)
data = kog.synth_meshes(hand, 40, 4, seed=2)
out = m.forward([x for x, _ in data])
assert len(out) == 4 and len(out[0]) == 40 and len(out[0][0]) == 3
assert m.fusion_weights() == []
"#);
}
