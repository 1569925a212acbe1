use serde::Serialize;
use serde_json::{json, Value};

use dlsurface::{Mat, WeightStack};

/// Row-major nested arrays.
pub fn matrix(m: &Mat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn stack(w: &WeightStack) -> Value {
    json!({
        "widths": w.shape().widths(),
        "layers": w.layers().iter().map(matrix).collect::<Vec<_>>(),
    })
}

pub fn value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}
