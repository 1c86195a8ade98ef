// scratch: search scalar plants for target skip limits at gamma 0.95
use hns_core::control::*;
use nalgebra::DMatrix;

fn scalar(a: f64, b: f64, c: f64, k: f64, l: f64) -> PlantModel {
    PlantModel::new(
        DMatrix::from_row_slice(1, 1, &[a]),
        DMatrix::from_row_slice(1, 1, &[b]),
        DMatrix::from_row_slice(1, 1, &[c]),
        DMatrix::from_row_slice(1, 1, &[k]),
        DMatrix::from_row_slice(1, 1, &[l]),
    )
    .unwrap()
}

fn main() {
    let gamma = 0.95;
    for a in [1.00, 1.02, 1.05, 1.08, 1.10, 1.15, 1.20, 1.25, 1.30] {
        for k in [-0.3, -0.4, -0.5, -0.6, -0.7] {
            for l in [0.3, 0.5, 0.7] {
                let p = scalar(a, 1.0, 1.0, k, l);
                match skip_limit(&p, gamma, 6) {
                    Ok(s) => println!("a={a} k={k} l={l} -> limit {s}"),
                    Err(_) => {}
                }
            }
        }
    }
}
