//! Forward and backward kernels. Weights are row-major `[out, in]` for dense
//! layers and `[out_ch, in_ch, kernel]` for 1-D convolutions; activations are
//! channel-major.

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn leaky_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = leaky(*x));
}

/// `dy ⊙ leaky'(pre)`.
pub fn leaky_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(p, d)| d * leaky_grad(*p)).collect()
}

/// `y = W x + b`.
pub fn dense(w: &[f64], b: Option<&[f64]>, x: &[f64], out: usize) -> Vec<f64> {
    let inp = x.len();
    debug_assert_eq!(w.len(), out * inp);
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            s + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and returns `Wᵀ dy` when requested.
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let inp = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * inp..(o + 1) * inp];
        for (d, xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(db) = db {
        for (d, g) in db.iter_mut().zip(dy) {
            *d += g;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; inp];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * inp..(o + 1) * inp];
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
        dx
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub length: usize,
}

/// "Same"-padded stride-1 convolution.
pub fn conv1d(shape: Conv1dShape, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let Conv1dShape {
        in_channels: ci,
        out_channels: co,
        kernel: k,
        length: n,
    } = shape;
    let pad = k / 2;
    let mut y = vec![0.0; co * n];
    for o in 0..co {
        let yo = &mut y[o * n..(o + 1) * n];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..ci {
            let xc = &x[c * n..(c + 1) * n];
            let wk = &w[(o * ci + c) * k..(o * ci + c + 1) * k];
            for (t, &wv) in wk.iter().enumerate() {
                // y[p] += w[t] * x[p + t - pad]
                let lo = pad.saturating_sub(t);
                let hi = (n + pad).saturating_sub(t).min(n);
                for p in lo..hi {
                    yo[p] += wv * xc[p + t - pad];
                }
            }
        }
    }
    y
}

pub fn conv1d_backward(
    shape: Conv1dShape,
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let Conv1dShape {
        in_channels: ci,
        out_channels: co,
        kernel: k,
        length: n,
    } = shape;
    let pad = k / 2;
    let mut dx = want_dx.then(|| vec![0.0; ci * n]);
    for o in 0..co {
        let dyo = &dy[o * n..(o + 1) * n];
        db[o] += dyo.iter().sum::<f64>();
        for c in 0..ci {
            let xc = &x[c * n..(c + 1) * n];
            let base = (o * ci + c) * k;
            for t in 0..k {
                let lo = pad.saturating_sub(t);
                let hi = (n + pad).saturating_sub(t).min(n);
                let mut acc = 0.0;
                for p in lo..hi {
                    acc += dyo[p] * xc[p + t - pad];
                }
                dw[base + t] += acc;
                if let Some(dx) = dx.as_mut() {
                    let wv = w[base + t];
                    let dxc = &mut dx[c * n..(c + 1) * n];
                    for p in lo..hi {
                        dxc[p + t - pad] += wv * dyo[p];
                    }
                }
            }
        }
    }
    dx
}

/// Output length of average pooling with `width`, keeping a partial last window.
pub fn pooled_len(length: usize, width: usize) -> usize {
    length.div_ceil(width).max(1)
}

pub fn avg_pool(x: &[f64], channels: usize, length: usize, width: usize) -> Vec<f64> {
    let out_len = pooled_len(length, width);
    let mut y = vec![0.0; channels * out_len];
    for c in 0..channels {
        for q in 0..out_len {
            let start = q * width;
            let end = ((q + 1) * width).min(length);
            if start >= end {
                continue;
            }
            let s: f64 = x[c * length + start..c * length + end].iter().sum();
            y[c * out_len + q] = s / (end - start) as f64;
        }
    }
    y
}

pub fn avg_pool_backward(dy: &[f64], channels: usize, length: usize, width: usize) -> Vec<f64> {
    let out_len = pooled_len(length, width);
    let mut dx = vec![0.0; channels * length];
    for c in 0..channels {
        for q in 0..out_len {
            let start = q * width;
            let end = ((q + 1) * width).min(length);
            if start >= end {
                continue;
            }
            let g = dy[c * out_len + q] / (end - start) as f64;
            for v in &mut dx[c * length + start..c * length + end] {
                *v += g;
            }
        }
    }
    dx
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}
