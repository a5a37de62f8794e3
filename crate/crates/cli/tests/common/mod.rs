//! Independent oracles for the acceptance run.

use tdkws_core::gru::{GruFcWeights, QuantMatrix, CLASSES, HIDDEN};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_vec(m: &QuantMatrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|r| (0..m.cols).map(|c| m.value(r, c) * x[c]).sum())
        .collect()
}

fn q(raw: i16) -> f64 {
    raw as f64 / 256.0
}

/// Float-arithmetic GRU-FC forward pass over the same dequantized
/// parameters; returns the class scores after the last frame.
pub fn float_scores(frames: &[[i16; 16]], w: &GruFcWeights) -> [f64; CLASSES] {
    let mut h = vec![vec![0.0; HIDDEN]; w.layers.len()];
    for f in frames {
        let mut x: Vec<f64> = f.iter().map(|&v| q(v)).collect();
        for (l, layer) in w.layers.iter().enumerate() {
            let [gr, gz, gn] = &layer.gates;
            let (ri, rh) = (mat_vec(&gr.w_ih, &x), mat_vec(&gr.w_hh, &h[l]));
            let (zi, zh) = (mat_vec(&gz.w_ih, &x), mat_vec(&gz.w_hh, &h[l]));
            let (ni, nh) = (mat_vec(&gn.w_ih, &x), mat_vec(&gn.w_hh, &h[l]));
            let next: Vec<f64> = (0..HIDDEN)
                .map(|k| {
                    let r = sigmoid(ri[k] + rh[k] + q(gr.bias[k]));
                    let z = sigmoid(zi[k] + zh[k] + q(gz.bias[k]));
                    let n = (ni[k] + q(gn.bias[k]) + r * (nh[k] + q(layer.bias_hn[k]))).tanh();
                    (1.0 - z) * n + z * h[l][k]
                })
                .collect();
            h[l] = next;
            x = h[l].clone();
        }
    }
    let top = h.last().expect("layers");
    let s = mat_vec(&w.fc.w, top);
    std::array::from_fn(|c| s[c] + q(w.fc.bias[c]))
}

pub fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..s.len() {
        if s[i] > s[best] {
            best = i;
        }
    }
    best
}
