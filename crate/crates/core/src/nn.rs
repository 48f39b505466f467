//! Parameter storage, basic layers, Adam and learning-rate schedules.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KogError, Result};
use crate::tensor::{KogRng, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(KogError::Contract(format!("parameter {name} registered twice")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(&p.tensor)).collect(),
        }
    }

    /// Copies gradients of the bound leaves into the parameters. Parameters
    /// the loss did not reach get a zero gradient.
    pub fn harvest_grads(&mut self, tape: &Tape<T>, bound: &Bound<'_, T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.tensor.grad = Some(match tape.grad(v) {
                Some(g) => g.into_data(),
                None => vec![T::zero(); p.tensor.len()],
            });
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Tape handles of a [`ParamStore`] for one forward pass.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }
}

/// Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn uniform_tensor<T: Scalar>(rng: &mut KogRng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Xavier-uniform `(fan_in, fan_out)` weight.
pub fn init_weight<T: Scalar>(rng: &mut KogRng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    uniform_tensor(rng, &[fan_in, fan_out], xavier_bound(fan_in, fan_out))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init_weight(rng, in_dim, out_dim))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.var(self.weight))?.add_tiled(p.var(self.bias))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::new(vec![dim], vec![T::one(); dim])?,
        )?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), T::of(LAYER_NORM_EPS))
    }
}

/// Position-wise feed-forward sublayer `d -> h -> d` with GELU.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, dim)?,
            dropout,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let d = *x.shape().last().unwrap_or(&0);
        if d != self.fc1.in_dim {
            return Err(KogError::shape(
                "mlp",
                format!("feature size {d}, expected {}", self.fc1.in_dim),
            ));
        }
        let h = self.fc1.forward(p, x)?.gelu().dropout(self.dropout)?;
        self.fc2.forward(p, h)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of every parameter from its harvested gradient.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.tensor.grad.is_none()) {
            return Err(KogError::Contract(format!("parameter {} has no gradient", p.name)));
        }
        if self.first.is_empty() {
            self.first = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != store.len() {
            return Err(KogError::Contract(
                "optimizer state was built for a different parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.params.iter_mut().enumerate() {
            let grad = p.tensor.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.len() != grad.len() {
                return Err(KogError::Contract(format!(
                    "optimizer state for {} has the wrong size",
                    p.name
                )));
            }
            let values = p.tensor.data_mut();
            for j in 0..values.len() {
                let g = grad[j].as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let update = lr * mhat / (vhat.sqrt() + self.eps);
                values[j] = T::of(values[j].as_f64() - update);
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Counter is the optimizer step.
    Step,
    /// Counter is the epoch.
    Epoch,
}

/// `lr = base * factor^floor(counter / interval)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base: f64,
    pub factor: f64,
    pub interval: u64,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, base: f64, factor: f64, interval: u64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(KogError::Config(format!("lr decay factor {factor} outside (0, 1]")));
        }
        if interval < 1 {
            return Err(KogError::Config("lr decay interval must be >= 1".into()));
        }
        Ok(Self {
            kind,
            base,
            factor,
            interval,
        })
    }

    /// 0.001, times 0.9 every 50000 steps.
    pub fn pose_default() -> Self {
        Self::new(ScheduleKind::Step, 1e-3, 0.9, 50_000).expect("valid constants")
    }

    /// 1e-5, times 0.8 every 5 epochs.
    pub fn shape_default() -> Self {
        Self::new(ScheduleKind::Epoch, 1e-5, 0.8, 5).expect("valid constants")
    }

    pub fn lr(&self, counter: u64) -> f64 {
        self.base * self.factor.powi((counter / self.interval) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::pose_default();
        assert_eq!(s.lr(49_999), 0.001);
        assert!((s.lr(50_000) - 0.0009).abs() < 1e-15);
        let g = LrSchedule::new(ScheduleKind::Epoch, 1e-5, 0.8, 5).unwrap();
        assert!((g.lr(10) - 6.4e-6).abs() < 1e-18);
        assert!(LrSchedule::new(ScheduleKind::Step, 1.0, 0.0, 1).is_err());
        assert!(LrSchedule::new(ScheduleKind::Step, 1.0, 0.5, 0).is_err());
    }

    #[test]
    fn xavier_bound_formula() {
        assert_eq!(xavier_bound(128, 128), (6.0f64 / 256.0).sqrt());
    }

    #[test]
    fn init_draws_are_centered() {
        let mut rng = seeded_rng(5);
        let t: Tensor<f64> = uniform_tensor(&mut rng, &[100_000], 1.0);
        let mean: f64 = t.data().iter().sum::<f64>() / 1e5;
        // uniform on [-1, 1] has sigma = 1/sqrt(3); 3 sigma of the mean
        let sigma_mean = (1.0f64 / 3.0).sqrt() / (1e5f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.get_mut(ParamId(0)).grad = Some(vec![g]);
    }

    #[test]
    fn adam_two_steps_match_hand_oracle() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::default();
        let lr = 0.01;
        // hand-stepped: with a constant gradient both bias-corrected moments
        // equal g and g^2, so every step moves by lr * g / (|g| + eps)
        let mut expected = 0.5;
        for t in 1..=2 {
            set_grad(&mut s, 1.0);
            adam.step(&mut s, lr).unwrap();
            let m = (1.0 - 0.9f64.powi(t)) * 1.0;
            let v = (1.0 - 0.999f64.powi(t)) * 1.0;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            expected -= lr * mhat / (vhat.sqrt() + 1e-8);
            assert!((s.get(ParamId(0)).data()[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_leave_params() {
        let mut s = scalar_store(1.25);
        let mut adam = AdamState::default();
        set_grad(&mut s, 0.0);
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(ParamId(0)).data()[0], 1.25);
        set_grad(&mut s, 3.0);
        adam.step(&mut s, 0.0).unwrap();
        assert_eq!(s.get(ParamId(0)).data()[0], 1.25);
    }

    #[test]
    fn adam_missing_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let err = AdamState::default().step(&mut s, 0.1).unwrap_err();
        assert!(err.to_string().contains("x"), "{err}");
    }

    #[test]
    fn adam_without_momentum_is_scaled_gradient_descent() {
        let mut rng = seeded_rng(11);
        for _ in 0..10 {
            let x0: f64 = rng.gen_range(-5.0..5.0);
            let eps = 1e6;
            let lr = 0.1;
            let mut s = scalar_store(x0);
            let mut adam = AdamState::new(0.0, 0.0, eps);
            let mut x = x0;
            for _ in 0..3 {
                let g = 2.0 * x;
                set_grad(&mut s, g);
                adam.step(&mut s, lr).unwrap();
                x -= lr * g / (g.abs() + eps);
                assert!((s.get(ParamId(0)).data()[0] - x).abs() < 1e-12);
                // effectively plain descent with step lr / eps
                assert!(((x0 - x).abs() - 0.0).is_finite());
            }
        }
    }

    #[test]
    fn one_step_decreases_quadratic_loss() {
        for &lr in &[0.1, 0.01, 0.001] {
            let mut s = scalar_store(2.0);
            let loss = |v: f64| (v - 0.5) * (v - 0.5);
            let before = loss(s.get(ParamId(0)).data()[0]);
            let g = 2.0 * (2.0 - 0.5);
            set_grad(&mut s, g);
            AdamState::default().step(&mut s, lr).unwrap();
            assert!(loss(s.get(ParamId(0)).data()[0]) < before);
        }
    }

    #[test]
    fn mlp_zero_weights_give_zero_and_hand_example() {
        let mut rng = seeded_rng(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, &mut rng, "mlp", 2, 4, 0.1).unwrap();
        for id in [mlp.fc1.weight, mlp.fc2.weight] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 0.0, 1.0]).unwrap());
        assert!(mlp.forward(&p, x).unwrap().value().data().iter().all(|&v| v == 0.0));

        // hand-set: fc1 = [[1, 0, -1, 2], [0, 1, 1, 0]], b1 = 0;
        // fc2 = [[1, 0], [0, 1], [1, 1], [0, 0]], b2 = [0.5, -0.5]
        store.get_mut(mlp.fc1.weight).data_mut().copy_from_slice(&[1.0, 0.0, -1.0, 2.0, 0.0, 1.0, 1.0, 0.0]);
        store.get_mut(mlp.fc2.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        store.get_mut(mlp.fc2.bias).data_mut().copy_from_slice(&[0.5, -0.5]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let y = mlp.forward(&p, x).unwrap().value();
        // hidden pre-activation = [1, 2, 1, 2]
        let g = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh());
        let h = [g(1.0), g(2.0), g(1.0), g(2.0)];
        let expected = [h[0] + h[2] + 0.5, h[1] + h[2] - 0.5];
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_eval_mode_is_repeatable() {
        let mut rng = seeded_rng(1);
        let mut store = ParamStore::<f32>::new();
        let mlp = Mlp::new(&mut store, &mut rng, "mlp", 4, 8, 0.1).unwrap();
        let x = Tensor::from_f64(&[2, 4], &[0.1, 0.2, 0.3, 0.4, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let run = || {
            let tape = Tape::new();
            let p = store.bind(&tape);
            mlp.forward(&p, tape.constant(&x)).unwrap().value()
        };
        assert_eq!(run(), run());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let bad = tape.constant(&Tensor::<f32>::zeros(&[2, 3]));
        assert!(mlp.forward(&p, bad).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
    }
}
