//! Inner loops over (particle, data point) pairs, monomorphized for small d.

use crate::activation::Activation;
use crate::par;

#[inline(always)]
fn dot_n<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        s += a[k] * b[k];
    }
    s
}

fn forward_fixed<const D: usize>(inputs: &[f64], weights: &[f64], act: Activation) -> Vec<f64> {
    let m = weights.len() / D;
    let inv_m = 1.0 / m as f64;
    let n = inputs.len() / D;
    par::map_indices(n, |i| {
        let x: &[f64; D] = inputs[i * D..(i + 1) * D].try_into().unwrap();
        let mut s = 0.0;
        match act {
            Activation::Relu => {
                for w in weights.chunks_exact(D) {
                    let z = dot_n(w.try_into().unwrap(), x);
                    s += z.max(0.0);
                }
            }
            _ => {
                for w in weights.chunks_exact(D) {
                    s += act.value(dot_n(w.try_into().unwrap(), x));
                }
            }
        }
        s * inv_m
    })
}

fn forward_dyn(inputs: &[f64], weights: &[f64], d: usize, act: Activation) -> Vec<f64> {
    let m = weights.len() / d;
    let inv_m = 1.0 / m as f64;
    let n = inputs.len() / d;
    par::map_indices(n, |i| {
        let x = &inputs[i * d..(i + 1) * d];
        weights.chunks_exact(d).map(|w| act.value(crate::linalg::dot(w, x))).sum::<f64>() * inv_m
    })
}

/// `f(x_i) = (1/m) sum_j σ(w_j·x_i)`; each output sums particles in index order.
pub fn forward(inputs: &[f64], weights: &[f64], d: usize, act: Activation) -> Vec<f64> {
    match d {
        1 => forward_fixed::<1>(inputs, weights, act),
        2 => forward_fixed::<2>(inputs, weights, act),
        3 => forward_fixed::<3>(inputs, weights, act),
        4 => forward_fixed::<4>(inputs, weights, act),
        _ => forward_dyn(inputs, weights, d, act),
    }
}

fn feature_sum_fixed<const D: usize>(w: &[f64], inputs: &[f64], coef: &[f64], act: Activation, out: &mut [f64]) {
    let w: &[f64; D] = w.try_into().unwrap();
    let mut acc = [0.0; D];
    for (x, &c) in inputs.chunks_exact(D).zip(coef) {
        let x: &[f64; D] = x.try_into().unwrap();
        let z = dot_n(w, x);
        let s = match act {
            Activation::Relu => {
                if z > 0.0 {
                    c
                } else {
                    continue;
                }
            }
            _ => c * act.deriv(z),
        };
        for k in 0..D {
            acc[k] += s * x[k];
        }
    }
    out.copy_from_slice(&acc);
}

/// `out = sum_i coef_i σ'(w·x_i) x_i`, summed in data order.
pub fn feature_sum(w: &[f64], inputs: &[f64], coef: &[f64], act: Activation, out: &mut [f64]) {
    match w.len() {
        1 => feature_sum_fixed::<1>(w, inputs, coef, act, out),
        2 => feature_sum_fixed::<2>(w, inputs, coef, act, out),
        3 => feature_sum_fixed::<3>(w, inputs, coef, act, out),
        4 => feature_sum_fixed::<4>(w, inputs, coef, act, out),
        d => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (x, &c) in inputs.chunks_exact(d).zip(coef) {
                let s = c * act.deriv(crate::linalg::dot(w, x));
                if s != 0.0 {
                    crate::linalg::axpy(s, x, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn fixed_and_dynamic_paths_agree() {
        for d in 1..=5 {
            let inputs: Vec<f64> = (0..7 * d).map(|k| ((k as f64) * 0.71).sin()).collect();
            let weights: Vec<f64> = (0..11 * d).map(|k| ((k as f64) * 1.3).cos()).collect();
            for act in [Activation::Relu, Activation::smoothed(0.2)] {
                let f = forward(&inputs, &weights, d, act);
                let g = forward_dyn(&inputs, &weights, d, act);
                for (a, b) in f.iter().zip(&g) {
                    assert!((a - b).abs() < 1e-15);
                }
                let coef: Vec<f64> = (0..7).map(|k| k as f64 - 3.0).collect();
                let mut out = vec![0.0; d];
                feature_sum(&weights[..d], &inputs, &coef, act, &mut out);
                let mut naive = vec![0.0; d];
                for i in 0..7 {
                    let x = &inputs[i * d..(i + 1) * d];
                    let s = coef[i] * act.deriv(dot(&weights[..d], x));
                    for k in 0..d {
                        naive[k] += s * x[k];
                    }
                }
                for (a, b) in out.iter().zip(&naive) {
                    assert!((a - b).abs() < 1e-13);
                }
            }
        }
    }
}
