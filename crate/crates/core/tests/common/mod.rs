//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use memxbar::device::MemristorDevice;
use memxbar::mlp::NetworkTopology;
use memxbar::training::Dataset;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

/// Far-end relative drop of an `n`-segment ladder by dense nodal analysis.
/// The unknowns are the node drops `d_k = 1 − v_k` (driver at 1 V, `d_0 = 0`),
/// so small drops are solved for directly rather than as `1 − v`.
pub fn dense_ladder_drop(n: usize, r_w: f64, g: f64) -> f64 {
    let gw = 1.0 / r_w;
    let mut a = DMatrix::<f64>::zeros(n, n);
    // KCL at node k: G·(1 − d_k) = gw·(d_k − d_{k−1}) + gw·(d_k − d_{k+1}).
    let b = DVector::<f64>::from_element(n, g);
    for k in 0..n {
        a[(k, k)] += g + gw;
        if k > 0 {
            a[(k, k - 1)] -= gw;
        }
        if k + 1 < n {
            a[(k, k)] += gw;
            a[(k, k + 1)] -= gw;
        }
    }
    let d = a.lu().solve(&b).expect("ladder system is non-singular");
    d[n - 1]
}

/// Dense nodal analysis of the resistive crossbar. Node numbering here is
/// independent of the library: all column-line nodes first (row-major),
/// then all row-line nodes.
pub fn dense_wire_currents(g: &Array2<f64>, r_w: f64, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = g.dim();
    let gw = 1.0 / r_w;
    let cn = |r: usize, c: usize| r * cols + c;
    let rn = |r: usize, c: usize| rows * cols + r * cols + c;
    let n = 2 * rows * cols;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let resistor = |a: &mut DMatrix<f64>, p: usize, q: usize, y: f64| {
        a[(p, p)] += y;
        a[(q, q)] += y;
        a[(p, q)] -= y;
        a[(q, p)] -= y;
    };
    for r in 0..rows {
        for c in 0..cols {
            resistor(&mut a, cn(r, c), rn(r, c), g[[r, c]]);
            if r + 1 < rows {
                resistor(&mut a, cn(r, c), cn(r + 1, c), gw);
            }
            if c + 1 < cols {
                resistor(&mut a, rn(r, c), rn(r, c + 1), gw);
            }
        }
    }
    for c in 0..cols {
        a[(cn(0, c), cn(0, c))] += gw;
        b[cn(0, c)] += gw * v[c];
    }
    for r in 0..rows {
        a[(rn(r, cols - 1), rn(r, cols - 1))] += gw;
    }
    let x = a.lu().solve(&b).expect("nodal system is non-singular");
    (0..rows).map(|r| gw * x[rn(r, cols - 1)]).collect()
}

/// Loss evaluated directly from its definition, independent of the
/// library's forward pass.
pub fn reference_loss(t: &NetworkTopology, w1: &Array2<f64>, w2: &Array2<f64>, data: &Dataset) -> f64 {
    let k = t.transimpedance_gain;
    let mut total = 0.0;
    for (x, target) in data.inputs.outer_iter().zip(data.targets.outer_iter()) {
        let mut h: Vec<f64> = w1
            .outer_iter()
            .map(|row| t.hidden_saturation * (k * row.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>()).tanh())
            .collect();
        h.push(t.bias_level);
        for (row, tj) in w2.outer_iter().zip(target.iter()) {
            let o = k * row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            total += (o - tj) * (o - tj);
        }
    }
    0.5 * total / data.len() as f64
}

/// Conductance change of one pulse, written out from the device equations.
pub fn expected_step(d: &MemristorDevice, amplitude: f64, width: f64) -> f64 {
    let k = d.kinetics_rate * width / 500e-6;
    if amplitude >= d.set_threshold {
        let g = d.conductance + k * ((amplitude - d.set_threshold) / d.kinetics_voltage_scale).exp();
        g.min(d.g_max) - d.conductance
    } else if amplitude <= d.reset_threshold {
        let g = d.conductance - k * ((d.reset_threshold - amplitude) / d.kinetics_voltage_scale).exp();
        g.max(d.g_min) - d.conductance
    } else {
        0.0
    }
}
