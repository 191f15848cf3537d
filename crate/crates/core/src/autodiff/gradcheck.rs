use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare analytic gradients against central differences for a
/// tensor-to-scalar function of several inputs.
///
/// `build` must be deterministic given fixed inputs (re-seed any internal
/// sampling on every call); this is verified by evaluating twice. Returns the
/// maximum over all coordinates of
/// `|analytic - central| / max(1, |central|)`.
pub fn grad_check_many<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut work: Vec<Tensor> = inputs.to_vec();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &vars)?;
        if tape.values(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: tape.shape(loss).to_vec(),
            });
        }
        Ok(tape.scalar_value(loss))
    };

    let first = eval(&work)?;
    let second = eval(&work)?;
    if first != second {
        return Err(Error::NonDeterministic { first, second });
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let mut max_err: f64 = 0.0;
    for ti in 0..work.len() {
        for i in 0..work[ti].numel() {
            let orig = work[ti].values()[i];
            work[ti].values_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[ti].values_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[ti].values_mut()[i] = orig;
            let central = (plus - minus) / (2.0 * eps);
            let err = (analytic[ti][i] - central).abs() / central.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// [`grad_check_many`] for a single input tensor.
pub fn grad_check<F>(build: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| build(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor {
        let mut rng = stream_rng(seed, "gradcheck");
        let n = shape.iter().product();
        let values = (0..n).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let x = random_tensor(vec![3, 4], 1, 2.0);
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }

    #[test]
    fn every_op_matches_central_differences() {
        // One composite per op so the whole surface is covered.
        let checks: Vec<(&str, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>, Vec<Tensor>)> = vec![
            (
                "matmul",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.matmul(v[0], v[1])?;
                    Ok(t.sum(y))
                }),
                vec![random_tensor(vec![3, 4], 2, 2.0), random_tensor(vec![4, 2], 3, 2.0)],
            ),
            (
                "add_same",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.add(v[0], v[1])?;
                    let y = t.tanh(y);
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![2, 3], 4, 2.0), random_tensor(vec![2, 3], 5, 2.0)],
            ),
            (
                "add_bias",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.add(v[0], v[1])?;
                    let y = t.relu(y);
                    Ok(t.sum(y))
                }),
                vec![random_tensor(vec![4, 3], 6, 2.0), random_tensor(vec![3], 7, 2.0)],
            ),
            (
                "add_scalar_rhs",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.add(v[0], v[1])?;
                    let y = t.exp(y);
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![2, 2], 8, 1.0), random_tensor(vec![], 9, 1.0)],
            ),
            (
                "mul_div",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let p = t.mul(v[0], v[1])?;
                    let q = t.add_scalar(v[1], 10.0);
                    let y = t.div(p, q)?;
                    Ok(t.sum(y))
                }),
                vec![random_tensor(vec![5], 10, 2.0), random_tensor(vec![5], 11, 2.0)],
            ),
            (
                "mul_scalar_var",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.mul(v[0], v[1])?;
                    Ok(t.sum(y))
                }),
                vec![random_tensor(vec![4], 12, 2.0), random_tensor(vec![], 13, 2.0)],
            ),
            (
                "div_scalar_rhs",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let d = t.add_scalar(v[1], 5.0);
                    let y = t.div(v[0], d)?;
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![3, 2], 14, 2.0), random_tensor(vec![], 15, 1.0)],
            ),
            (
                "scalar_ops_relu_tanh",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.mul_scalar(v[0], -1.7);
                    let y = t.add_scalar(y, 0.3);
                    let y = t.relu(y);
                    let y = t.tanh(y);
                    Ok(t.sum(y))
                }),
                vec![random_tensor(vec![6], 16, 2.0)],
            ),
            (
                "exp_log",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.exp(v[0]);
                    let y = t.add_scalar(y, 1.0);
                    let y = t.log(y);
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![5], 17, 2.0)],
            ),
            (
                "softmax",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let s = t.softmax_last_axis(v[0])?;
                    let sq = t.mul(s, s)?;
                    Ok(t.sum(sq))
                }),
                vec![random_tensor(vec![4, 5], 18, 3.0)],
            ),
            (
                "min_max_scalar",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let lo = t.min_scalar(v[0], 0.4);
                    let hi = t.max_scalar(lo, -0.4);
                    Ok(t.sum(hi))
                }),
                vec![random_tensor(vec![7], 19, 2.0)],
            ),
            (
                "concat_slice",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let c = t.concat_last_axis(&[v[0], v[1]])?;
                    let s = t.slice_last_axis(c, 1, 3)?;
                    let y = t.tanh(s);
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![3, 2], 20, 2.0), random_tensor(vec![3, 3], 21, 2.0)],
            ),
            (
                "reparameterize",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let mut rng = stream_rng(99, "eps");
                    let y = t.reparameterize_with(v[0], v[1], &mut rng)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.mean(sq))
                }),
                vec![random_tensor(vec![4], 22, 1.0), random_tensor(vec![4], 23, 1.0)],
            ),
            (
                "mean",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let y = t.mul(v[0], v[0])?;
                    Ok(t.mean(y))
                }),
                vec![random_tensor(vec![3, 3], 24, 2.0)],
            ),
        ];

        for (name, build, inputs) in checks {
            let err = grad_check_many(|t, v| build(t, v), &inputs, 1e-5)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(err <= 1e-4, "{name}: max relative error {err}");
        }
    }

    #[test]
    fn reparameterize_gradients_reach_both_inputs() {
        let mu = random_tensor(vec![4], 30, 1.0);
        let lv = random_tensor(vec![4], 31, 1.0);
        let mut tape = Tape::new();
        let vm = tape.leaf(&mu);
        let vl = tape.leaf(&lv);
        let mut rng = stream_rng(7, "eps");
        let y = tape.reparameterize_with(vm, vl, &mut rng).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.mean(sq);
        tape.backward(loss).unwrap();
        assert!(tape.grad(vm).iter().any(|g| *g != 0.0));
        assert!(tape.grad(vl).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn non_deterministic_function_is_flagged() {
        use std::cell::Cell;
        let counter = Cell::new(0.0_f64);
        let x = random_tensor(vec![2], 40, 1.0);
        let res = grad_check(
            |t, v| {
                counter.set(counter.get() + 1.0);
                let y = t.add_scalar(v, counter.get());
                Ok(t.sum(y))
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonDeterministic { .. })));
    }

    #[test]
    fn three_layer_network_gradient() {
        // Random dense net: x -> relu(xW1+b1) -> tanh(.W2+b2) -> sum(.W3).
        let w1 = random_tensor(vec![5, 8], 50, 1.0);
        let b1 = random_tensor(vec![8], 51, 1.0);
        let w2 = random_tensor(vec![8, 6], 52, 1.0);
        let b2 = random_tensor(vec![6], 53, 1.0);
        let w3 = random_tensor(vec![6, 1], 54, 1.0);
        let x = random_tensor(vec![4, 5], 55, 2.0);
        let inputs = vec![x, w1, b1, w2, b2, w3];
        let err = grad_check_many(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add(h, v[2])?;
                let h = t.relu(h);
                let h = t.matmul(h, v[3])?;
                let h = t.add(h, v[4])?;
                let h = t.tanh(h);
                let o = t.matmul(h, v[5])?;
                Ok(t.sum(o))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }
}
