use serde::{Deserialize, Serialize};

use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with Adam moment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    #[serde(with = "tensor_serde")]
    pub value: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

mod tensor_serde {
    use super::Tensor;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Flat {
        shape: Vec<usize>,
        values: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(t: &Tensor, s: S) -> Result<S::Ok, S::Error> {
        Flat {
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Tensor, D::Error> {
        let f = Flat::deserialize(d)?;
        Tensor::new(f.shape, f.values)
            .map(Tensor::with_requires_grad)
            .map_err(serde::de::Error::custom)
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value: value.with_requires_grad(),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    /// Bind this parameter to a tape (by name) for the current forward pass.
    pub fn bind(&self, tape: &mut Tape) -> super::tape::Var {
        tape.param(&self.name, &self.value)
    }

    /// Pull this parameter's gradient off a finished tape and add it to the
    /// local gradient buffer. No-op if the parameter was never bound.
    pub fn accumulate_grad_from(&mut self, tape: &Tape) {
        if let Some(g) = tape.param_grad(&self.name) {
            self.value.accumulate_grad(g);
        }
    }
}

/// One bias-corrected Adam update over `params`, in place. Every parameter
/// must hold a gradient; gradients are cleared afterwards.
pub fn adam_step<'a, I>(params: I, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    for p in params {
        let grad = match p.value.grad() {
            Some(g) => g.to_vec(),
            None => {
                return Err(Error::MissingGradient {
                    name: p.name.clone(),
                })
            }
        };
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let values = p.value.values_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
            p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
            let m_hat = p.adam_m[i] / bc1;
            let v_hat = p.adam_v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.value.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::new("p", Tensor::scalar(0.0));
        p.value.accumulate_grad(&[1.0]);
        adam_step([&mut p], 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p.value.item() + 0.1).abs() < 1e-8);
        assert_eq!(p.step_count, 1);
        assert!(p.value.grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = Parameter::new("p", Tensor::scalar(1.5));
        p.value.accumulate_grad(&[0.0]);
        adam_step([&mut p], 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.value.item(), 1.5);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = Parameter::new("encoder.trunk.w0", Tensor::scalar(0.0));
        let err =
            adam_step([&mut p], 0.1, 0.9, 0.999, 1e-8).unwrap_err();
        assert!(err.to_string().contains("encoder.trunk.w0"));
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // 200 steps on (p - 3)^2 from 0 with lr 0.1 lands within 1e-2 of 3.
        let mut p = Parameter::new("p", Tensor::scalar(0.0));
        for _ in 0..200 {
            let g = 2.0 * (p.value.item() - 3.0);
            p.value.accumulate_grad(&[g]);
            adam_step([&mut p], 0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!(
            (p.value.item() - 3.0).abs() < 1e-2,
            "ended at {}",
            p.value.item()
        );
    }
}
