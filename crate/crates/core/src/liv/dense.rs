use super::plan::LayerPlan;
use crate::genome::{LivFamily, Role};
use crate::grad::Tensor;

/// Longest sequence for which the dense operator is materialized.
pub const DENSE_ORACLE_CAP: usize = 32;

fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn group<'a>(groups: &'a [(Role, Tensor<f64>)], role: Role) -> &'a Tensor<f64> {
    &groups.iter().find(|(r, _)| *r == role).expect("group present").1
}

fn causal_softmax_rows(s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    s.iter()
        .enumerate()
        .map(|(i, row)| {
            let max = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row[..=i].iter().map(|x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut p: Vec<f64> = e.into_iter().map(|x| x / z).collect();
            p.resize(row.len(), 0.0);
            p
        })
        .collect()
}

/// Explicit `T[i, j, α, β]` with `y_i^α = Σ_j Σ_β T[i, j, α, β] u_j^β`,
/// where `u` concatenates the operator input group of every branch.
/// The second branch of a differential layer enters with a negative sign.
pub(crate) fn materialize(
    layer: &LayerPlan,
    groups: &[Vec<(Role, Tensor<f64>)>],
    outs: &[Option<Tensor<f64>>],
    width: usize,
    l: usize,
) -> Tensor<f64> {
    let d_in = layer.input_channels();
    let total = d_in * groups.len();
    let d_out = width;
    let mut t = Tensor::<f64>::zeros(&[l, l, d_out, total]);
    let idx = |i: usize, j: usize, a: usize, b: usize| ((i * l + j) * d_out + a) * total + b;
    let data = t.data_mut();
    for (br, g) in groups.iter().enumerate() {
        let sign = if br == 0 { 1.0 } else { -1.0 };
        let off = br * d_in;
        match layer.family {
            LivFamily::Attention => {
                let (q, k) = (group(g, Role::Q), group(g, Role::K));
                let wo = outs[br].as_ref().expect("attention has an output projection");
                let hd = layer.hyper.head_dim;
                let heads = q.cols() / hd;
                let kv_heads = k.cols() / hd;
                let scale = 1.0 / (hd as f64).sqrt();
                for h in 0..heads {
                    let kvh = h % kv_heads;
                    let s: Vec<Vec<f64>> = (0..l)
                        .map(|i| {
                            (0..l)
                                .map(|j| (0..hd).map(|c| q.at(i, h * hd + c) * k.at(j, kvh * hd + c)).sum::<f64>() * scale)
                                .collect()
                        })
                        .collect();
                    let p = causal_softmax_rows(&s);
                    for i in 0..l {
                        for j in 0..=i {
                            for c in 0..hd {
                                let beta = off + kvh * hd + c;
                                for a in 0..d_out {
                                    data[idx(i, j, a, beta)] += sign * p[i][j] * wo.at(h * hd + c, a);
                                }
                            }
                        }
                    }
                }
            }
            LivFamily::Recurrence => {
                let (a, z, b, c) = (group(g, Role::A), group(g, Role::Z), group(g, Role::B), group(g, Role::C));
                let n = b.cols();
                for ch in 0..d_in {
                    for i in 0..l {
                        let mut decay = 1.0;
                        for j in (0..=i).rev() {
                            let cb: f64 = (0..n).map(|s| c.at(i, s) * b.at(j, s)).sum();
                            data[idx(i, j, ch, off + ch)] += sign * z.at(i, ch) * cb * decay;
                            decay *= a.at(j, ch);
                        }
                    }
                }
            }
            LivFamily::GatedConv => {
                let (b, c, k) = (group(g, Role::B), group(g, Role::C), group(g, Role::Kernel));
                for ch in 0..d_in {
                    for i in 0..l {
                        for j in 0..=i {
                            if i - j < k.rows() {
                                data[idx(i, j, ch, off + ch)] += sign * c.at(i, ch) * k.at(i - j, ch) * b.at(j, ch);
                            }
                        }
                    }
                }
            }
            LivFamily::Memoryless => {
                let gate = group(g, Role::Gate);
                let wd = outs[br].as_ref().expect("memoryless units have a down projection");
                for i in 0..l {
                    for beta in 0..d_in {
                        let s = swish(gate.at(i, beta));
                        for a in 0..d_out {
                            data[idx(i, i, a, off + beta)] += sign * s * wd.at(beta, a);
                        }
                    }
                }
            }
        }
    }
    t
}

/// `y_i = Σ_j T[i, j] · u_j` for a materialized operator.
pub fn apply_dense(t: &Tensor<f64>, u: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    let (l, d_out, d_in) = (s[0], s[2], s[3]);
    let mut y = Tensor::zeros(&[l, d_out]);
    for i in 0..l {
        for a in 0..d_out {
            let mut acc = 0.0;
            for j in 0..l {
                let base = ((i * l + j) * d_out + a) * d_in;
                acc += (0..d_in).map(|b| t.data()[base + b] * u.at(j, b)).sum::<f64>();
            }
            y.set(i, a, acc);
        }
    }
    y
}
