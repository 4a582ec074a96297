//! Gradient checks: tape gradients against central differences of a naive
//! double-precision reference of the same computation.

use rand::Rng;

use super::{Tape, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// A scalar-valued graph over leaf variables.
pub type Graph<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

/// Naive `f64` kernels with the tape's conventions (NCHW, same padding).
pub mod reference {
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(x: &[f64], w: &[f64], n: usize, ci: usize, co: usize, h: usize, wd: usize, k: usize) -> Vec<f64> {
        let p = (k / 2) as isize;
        let mut out = vec![0.0; n * co * h * wd];
        for b in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    s += w[((o * ci + c) * k + ky) * k + kx]
                                        * x[((b * ci + c) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                        out[((b * co + o) * h + y) * wd + xx] = s;
                    }
                }
            }
        }
        out
    }

    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        out
    }

    pub fn silu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v / (1.0 + (-v).exp())).collect()
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    /// Bias `[C]` shared by all samples, or `[N, C]` per sample.
    pub fn bias(x: &[f64], b: &[f64], n: usize, c: usize, per_sample: bool) -> Vec<f64> {
        let inner = x.len() / (n * c);
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (s, ch) = (i / (c * inner), (i / inner) % c);
                v + if per_sample { b[s * c + ch] } else { b[ch] }
            })
            .collect()
    }

    pub fn mse(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    }
}

/// Uniform `[-1, 1)` values, rounded through `f32` so the tape and the
/// reference see identical inputs.
pub fn random_values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed, 7);
    (0..len)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32 as f64)
        .collect()
}

/// Central differences of `f` with respect to every entry of `inputs[which]`.
pub fn central_differences(inputs: &[Vec<f64>], which: usize, h: f64, f: &dyn Fn(&[Vec<f64>]) -> f64) -> Vec<f64> {
    (0..inputs[which].len())
        .map(|j| {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[which][j] += h;
            minus[which][j] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / ‖n‖`.
pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a as f64 - b).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Reference loss value.
    pub value: f64,
    /// `|L_tape − L_ref|`.
    pub value_error: f64,
    /// Worst relative gradient error over the inputs.
    pub gradient_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.gradient_error < TOLERANCE && self.value_error <= 1e-5 * self.value.abs().max(1.0)
    }
}

/// Records `graph` on leaves holding `inputs` and compares its gradients
/// with central differences of `reference`.
pub fn check_graph(
    name: &str,
    shapes: &[Vec<usize>],
    inputs: &[Vec<f64>],
    graph: Graph,
    reference: &dyn Fn(&[Vec<f64>]) -> f64,
) -> Result<GradCheck, TensorError> {
    let mut tape = Tape::new();
    let mut vars = Vec::with_capacity(inputs.len());
    for (s, v) in shapes.iter().zip(inputs) {
        vars.push(tape.leaf(Tensor::new(s.clone(), v.iter().map(|&x| x as f32).collect())?));
    }
    let loss = graph(&mut tape, &vars)?;
    let value = tape.value(loss).item()? as f64;
    let ref_value = reference(inputs);
    let value_error = (value - ref_value).abs();
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let numeric = central_differences(inputs, i, STEP, reference);
        let analytic = grads
            .get(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numeric.len()]);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck {
        name: name.to_string(),
        value: ref_value,
        value_error,
        gradient_error: worst,
    })
}

fn random_inputs(shapes: &[Vec<usize>], seed: u64) -> Vec<Vec<f64>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random_values(s.iter().product(), seed + i as u64))
        .collect()
}

/// `mse(y, R)` against a fixed random `R`, reducing any output to a scalar.
fn against_target(tape: &mut Tape, y: Var) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let r = random_values(shape.iter().product(), 999);
    let r = tape.constant(Tensor::new(shape, r.iter().map(|&x| x as f32).collect())?);
    tape.mse(y, r)
}

fn target(len: usize) -> Vec<f64> {
    random_values(len, 999)
}

/// Inputs kept at least 0.1 away from zero, so `±h` never crosses the ReLU kink.
fn off_kink(len: usize, seed: u64) -> Vec<f64> {
    random_values(len, seed)
        .into_iter()
        .map(|v| (v.signum() * (0.1 + 0.9 * v.abs())) as f32 as f64)
        .collect()
}

/// One check per differentiable op, plus a small conv net that chains them.
pub fn op_suite() -> Result<Vec<GradCheck>, TensorError> {
    use reference as r;
    let mut out = Vec::new();
    let s = vec![2, 3, 4];
    let t24 = target(24);
    let ew = |name: &str, seed, n_in: usize, graph: Graph, f: &dyn Fn(&[Vec<f64>]) -> Vec<f64>| {
        let shapes = vec![s.clone(); n_in];
        check_graph(name, &shapes, &random_inputs(&shapes, seed), graph, &|x| {
            r::mse(&f(x), &t24)
        })
    };
    out.push(ew(
        "add",
        1,
        2,
        &|t, v| {
            let y = t.add(v[0], v[1])?;
            against_target(t, y)
        },
        &|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect(),
    )?);
    out.push(ew(
        "sub",
        2,
        2,
        &|t, v| {
            let y = t.sub(v[0], v[1])?;
            against_target(t, y)
        },
        &|x| x[0].iter().zip(&x[1]).map(|(a, b)| a - b).collect(),
    )?);
    out.push(ew(
        "mul_scalar",
        3,
        1,
        &|t, v| {
            let y = t.mul_scalar(v[0], -1.75)?;
            against_target(t, y)
        },
        &|x| x[0].iter().map(|a| a * -1.75).collect(),
    )?);
    out.push(ew(
        "silu",
        4,
        1,
        &|t, v| {
            let y = t.silu(v[0])?;
            against_target(t, y)
        },
        &|x| r::silu(&x[0]),
    )?);
    out.push(check_graph(
        "relu",
        std::slice::from_ref(&s),
        &[off_kink(24, 5)],
        &|t, v| {
            let y = t.relu(v[0])?;
            against_target(t, y)
        },
        &|x| r::mse(&r::relu(&x[0]), &t24),
    )?);

    let m = vec![3, 5];
    out.push(check_graph(
        "sum",
        std::slice::from_ref(&m),
        &random_inputs(std::slice::from_ref(&m), 6),
        &|t, v| {
            let y = t.sum(v[0])?;
            t.mul_scalar(y, 0.3)
        },
        &|x| 0.3 * x[0].iter().sum::<f64>(),
    )?);
    out.push(check_graph(
        "mean",
        std::slice::from_ref(&m),
        &random_inputs(std::slice::from_ref(&m), 7),
        &|t, v| t.mean(v[0]),
        &|x| x[0].iter().sum::<f64>() / 15.0,
    )?);
    let sq = vec![vec![4, 4], vec![4, 4]];
    out.push(check_graph(
        "mse",
        &sq,
        &random_inputs(&sq, 8),
        &|t, v| t.mse(v[0], v[1]),
        &|x| r::mse(&x[0], &x[1]),
    )?);

    let mm = vec![vec![3, 4], vec![4, 5]];
    let t15 = target(15);
    out.push(check_graph(
        "matmul",
        &mm,
        &random_inputs(&mm, 9),
        &|t, v| {
            let y = t.matmul(v[0], v[1])?;
            against_target(t, y)
        },
        &|x| r::mse(&r::matmul(&x[0], &x[1], 3, 4, 5), &t15),
    )?);

    let cv = vec![vec![2, 3, 8, 8], vec![4, 3, 3, 3]];
    let t512 = target(512);
    out.push(check_graph(
        "conv2d",
        &cv,
        &random_inputs(&cv, 10),
        &|t, v| {
            let y = t.conv2d(v[0], v[1])?;
            against_target(t, y)
        },
        &|x| r::mse(&r::conv2d(&x[0], &x[1], 2, 3, 4, 8, 8, 3), &t512),
    )?);

    let t96 = target(96);
    for (name, bshape, per_sample, seed) in [
        ("bias_shared", vec![3], false, 11),
        ("bias_per_sample", vec![2, 3], true, 12),
    ] {
        let shapes = vec![vec![2, 3, 4, 4], bshape];
        out.push(check_graph(
            name,
            &shapes,
            &random_inputs(&shapes, seed),
            &|t, v| {
                let y = t.broadcast_add_channelwise(v[0], v[1])?;
                against_target(t, y)
            },
            &|x| r::mse(&r::bias(&x[0], &x[1], 2, 3, per_sample), &t96),
        )?);
    }

    // conv → bias → silu → conv
    let net = vec![vec![2, 1, 8, 8], vec![4, 1, 3, 3], vec![4], vec![1, 4, 3, 3]];
    let t128 = target(128);
    out.push(check_graph(
        "conv_net",
        &net,
        &random_inputs(&net, 13),
        &|t, v| {
            let h = t.conv2d(v[0], v[1])?;
            let h = t.broadcast_add_channelwise(h, v[2])?;
            let h = t.silu(h)?;
            let y = t.conv2d(h, v[3])?;
            against_target(t, y)
        },
        &|x| {
            let h = r::silu(&r::bias(&r::conv2d(&x[0], &x[1], 2, 1, 4, 8, 8, 3), &x[2], 2, 4, false));
            r::mse(&r::conv2d(&h, &x[3], 2, 4, 1, 8, 8, 3), &t128)
        },
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_op_and_passes() {
        let suite = op_suite().unwrap();
        for c in &suite {
            assert!(c.passed(), "{c:?}");
        }
        assert_eq!(suite.len(), 13);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // reference of 2·sum while the tape computes sum
        let c = check_graph("wrong", &[vec![4]], &[random_values(4, 1)], &|t, v| t.sum(v[0]), &|x| {
            2.0 * x[0].iter().sum::<f64>()
        })
        .unwrap();
        assert!(c.gradient_error > 0.4);
        assert!(!c.passed());
    }
}
