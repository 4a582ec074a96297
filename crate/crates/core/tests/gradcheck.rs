//! Tape gradients against central finite differences of independent
//! double-precision references (h = 1e-3).

use amid::tensor::check::{check_graph, op_suite, random_values, reference, TOLERANCE};
use amid::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences() {
    let suite = op_suite().unwrap();
    let names: Vec<&str> = suite.iter().map(|c| c.name.as_str()).collect();
    for op in [
        "add",
        "sub",
        "mul_scalar",
        "silu",
        "relu",
        "sum",
        "mean",
        "mse",
        "matmul",
        "conv2d",
    ] {
        assert!(names.contains(&op), "{op} not covered");
    }
    for c in &suite {
        assert!(
            c.passed(),
            "{}: value error {:e}, gradient error {:e}",
            c.name,
            c.value_error,
            c.gradient_error
        );
    }
}

fn against(tape: &mut Tape, y: Var, r: &[f64]) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let c = tape.constant(Tensor::new(shape, r.iter().map(|&v| v as f32).collect()).unwrap());
    tape.mse(y, c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    // chain rule across random compositions of matmul, silu and add
    #[test]
    fn chain_rule(m in 1usize..4, k in 1usize..5, n in 1usize..4, scale in -2.0f32..2.0, seed in 0u64..1000) {
        let r = random_values(m * n, 999);
        let shapes = [vec![m, k], vec![k, n], vec![m, n]];
        let inputs: Vec<Vec<f64>> = shapes.iter().enumerate()
            .map(|(i, s)| random_values(s.iter().product(), seed + i as u64))
            .collect();
        let c = check_graph("chain", &shapes, &inputs, &|t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.silu(y)?;
            let y = t.add(y, v[2])?;
            let y = t.mul_scalar(y, scale)?;
            Ok(against(t, y, &r))
        }, &|x| {
            let y = reference::silu(&reference::matmul(&x[0], &x[1], m, k, n));
            let y: Vec<f64> = y.iter().zip(&x[2]).map(|(a, b)| (a + b) * scale as f64).collect();
            reference::mse(&y, &r)
        }).unwrap();
        prop_assert!(c.gradient_error < TOLERANCE, "{:e}", c.gradient_error);
        prop_assert!(c.passed());
    }
}
