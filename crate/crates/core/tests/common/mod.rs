//! Test-only oracles: straightforward re-implementations used to check the
//! library, plus random network builders.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use aebound::matrix::Matrix;
use aebound::nn::{surrogate_loss, Activation, Layer, NetworkParams, SurrogateLoss};
use rand::Rng;

/// All singular values by one-sided Jacobi rotations on the columns.
pub fn jacobi_singular_values(w: &Matrix) -> Vec<f64> {
    let (m, n) = (w.rows(), w.cols());
    // work on the orientation with fewer columns
    let (rows, cols, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if n <= m {
        (m, n, Box::new(|i, j| w.get(i, j)))
    } else {
        (n, m, Box::new(|i, j| w.get(j, i)))
    };
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| get(i, j)).collect())
        .collect();
    for _ in 0..200 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn sigma_max(w: &Matrix) -> f64 {
    jacobi_singular_values(w)[0]
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Identity => z,
    }
}

/// Forward pass written out with explicit index loops.
pub fn forward_oracle(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for l in p.layers() {
        let w = &l.weights;
        let mut next = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = 0.0;
            for c in 0..w.cols() {
                s += w.get(r, c) * cur[c];
            }
            if let Some(b) = &l.bias {
                s += b[r];
            }
            next[r] = act(l.activation, s);
        }
        cur = next;
    }
    cur
}

/// Pre-activations of every layer, for keeping finite differences off kinks.
pub fn pre_activations(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut cur = x.to_vec();
    for l in p.layers() {
        let w = &l.weights;
        let mut next = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s: f64 = (0..w.cols()).map(|c| w.get(r, c) * cur[c]).sum();
            if let Some(b) = &l.bias {
                s += b[r];
            }
            out.push(s);
            next[r] = act(l.activation, s);
        }
        cur = next;
    }
    out
}

/// Central differences of the mean surrogate loss w.r.t. every weight.
pub fn fd_weight_gradient(
    p: &NetworkParams,
    batch: &[Vec<f64>],
    loss: SurrogateLoss,
    step: f64,
) -> Vec<Matrix> {
    let mut grads = Vec::new();
    for li in 0..p.depth() {
        let (r, c) = (p.layers()[li].weights.rows(), p.layers()[li].weights.cols());
        let mut g = Matrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let mut plus = p.clone();
                let w0 = plus.layers()[li].weights.get(i, j);
                plus.layers_mut()[li].weights.set(i, j, w0 + step);
                let mut minus = p.clone();
                minus.layers_mut()[li].weights.set(i, j, w0 - step);
                let fp = surrogate_loss(&plus, batch, loss).unwrap();
                let fm = surrogate_loss(&minus, batch, loss).unwrap();
                g.set(i, j, (fp - fm) / (2.0 * step));
            }
        }
        grads.push(g);
    }
    grads
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Random autoencoder with hidden activation `hidden` and output `output`.
/// `dims` runs from input to output.
pub fn random_net(
    rng: &mut impl Rng,
    dims: &[usize],
    hidden: Activation,
    output: Activation,
) -> NetworkParams {
    let d = dims.len() - 1;
    let layers: Vec<Layer> = (0..d)
        .map(|i| {
            let a = if i + 1 == d { output } else { hidden };
            Layer::new(random_matrix(rng, dims[i + 1], dims[i], 1.0), a)
        })
        .collect();
    let narrowest = (1..dims.len() - 1)
        .min_by_key(|&i| (dims[i], i))
        .unwrap_or(1);
    NetworkParams::new(layers, narrowest).unwrap()
}

/// Random autoencoder dims `[M, ..., M]` with at most `max_params` weights.
pub fn random_dims(rng: &mut impl Rng, max_params: usize) -> Vec<usize> {
    loop {
        let m = rng.gen_range(3..=8);
        let depth = rng.gen_range(2..=4);
        let mut dims = vec![m];
        for _ in 0..depth - 1 {
            dims.push(rng.gen_range(1..=m));
        }
        dims.push(m);
        if !dims[1..dims.len() - 1].iter().any(|&h| h < m) {
            continue;
        }
        let n: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        if n <= max_params {
            return dims;
        }
    }
}

pub fn random_binary(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(0..=1) as f64).collect()
}

/// Minimum L2 distance over pairs with different ids, by nested loops.
pub fn brute_margin(points: &[Vec<f64>], ids: &[u32]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..points.len() {
            if ids[i] != ids[j] {
                let d: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
    }
    best
}

/// Counts entries with `|x - xhat| > 1/2 - gamma`, one at a time.
pub fn count_margin_loss(x: &[f64], xhat: &[f64], gamma: f64) -> f64 {
    let mut wrong = 0usize;
    for k in 0..x.len() {
        if (x[k] - xhat[k]).abs() > 0.5 - gamma {
            wrong += 1;
        }
    }
    wrong as f64 / x.len() as f64
}
