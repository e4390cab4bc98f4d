//! One-hidden-layer tanh network with hand-written backprop.
//!
//! Parameter order: `W1 (hidden x input)`, `b1`, `W2 (actions x hidden)`, `b2`.

pub fn param_count(input: usize, hidden: usize, actions: usize) -> usize {
    hidden * input + hidden + actions * hidden + actions
}

/// Writes the logits into `out`; optionally keeps the hidden activations.
pub fn forward(
    params: &[f64],
    input: usize,
    hidden: usize,
    actions: usize,
    x: &[f64],
    out: &mut [f64],
    keep_hidden: Option<&mut Vec<f64>>,
) {
    let (w1, rest) = params.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(actions * hidden);
    let mut h = vec![0.0; hidden];
    for (k, hk) in h.iter_mut().enumerate() {
        let row = &w1[k * input..(k + 1) * input];
        let mut z = b1[k];
        for (w, &xi) in row.iter().zip(x) {
            if xi != 0.0 {
                z += w * xi;
            }
        }
        *hk = z.tanh();
    }
    for (a, o) in out.iter_mut().enumerate() {
        let row = &w2[a * hidden..(a + 1) * hidden];
        *o = b2[a] + row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>();
    }
    if let Some(keep) = keep_hidden {
        *keep = h;
    }
}

/// Accumulates `scale * J^T dlogits` into `grad`.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    params: &[f64],
    input: usize,
    hidden: usize,
    actions: usize,
    x: &[f64],
    dlogits: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let mut h = Vec::new();
    let mut logits = vec![0.0; actions];
    forward(params, input, hidden, actions, x, &mut logits, Some(&mut h));

    let w2_off = hidden * input + hidden;
    let b2_off = w2_off + actions * hidden;
    let w2 = &params[w2_off..b2_off];
    let mut dh = vec![0.0; hidden];
    for a in 0..actions {
        let d = scale * dlogits[a];
        if d == 0.0 {
            continue;
        }
        grad[b2_off + a] += d;
        for k in 0..hidden {
            grad[w2_off + a * hidden + k] += d * h[k];
            dh[k] += d * w2[a * hidden + k];
        }
    }
    let b1_off = hidden * input;
    for k in 0..hidden {
        let dz = dh[k] * (1.0 - h[k] * h[k]);
        if dz == 0.0 {
            continue;
        }
        grad[b1_off + k] += dz;
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                grad[k * input + j] += dz * xj;
            }
        }
    }
}
