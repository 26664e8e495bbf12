use std::collections::BTreeMap;

use super::schedule::parse;
use super::OptimError;
use crate::numerics::{Gradients, Parameters};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub kind: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { kind: "sgd".into(), beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

impl OptimConfig {
    pub fn adam(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { kind: "adam".into(), beta1, beta2, eps }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("optimizer".into(), self.kind.clone()),
            ("beta1".into(), format!("{:?}", self.beta1)),
            ("beta2".into(), format!("{:?}", self.beta2)),
            ("eps".into(), format!("{:?}", self.eps)),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, OptimError> {
        let d = Self::default();
        Ok(Self {
            kind: pairs.get("optimizer").cloned().unwrap_or(d.kind),
            beta1: parse(pairs, "beta1", d.beta1)?,
            beta2: parse(pairs, "beta2", d.beta2)?,
            eps: parse(pairs, "eps", d.eps)?,
        })
    }
}

/// Persistent optimizer state. Stateless optimizers have no moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub t: u64,
    /// Parameter name → (first moment, second moment).
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    /// Applies one update with an already normalized gradient.
    fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) -> Result<(), OptimError>;
    fn state(&self) -> OptimState;
    fn load_state(&mut self, state: OptimState) -> Result<(), OptimError>;
}

fn check_grads(params: &Parameters, grads: &Gradients) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| OptimError::Shape(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(OptimError::Shape(format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(OptimError::NonFinite(name.clone()));
        }
    }
    Ok(())
}

fn commit(params: &mut Parameters, updates: Vec<(String, Vec<f64>)>) -> Result<(), OptimError> {
    for (name, next) in updates {
        let p = params.get_mut(&name).ok_or_else(|| OptimError::Shape(format!("no parameter {name}")))?;
        p.assign(next).map_err(|_| OptimError::NonFinite(name.clone()))?;
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct Sgd {
    t: u64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) -> Result<(), OptimError> {
        check_grads(params, grads)?;
        let mut updates = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            let g = &grads[name];
            let next: Vec<f64> = p.data().iter().zip(g.data()).map(|(x, g)| x - lr * g).collect();
            if next.iter().any(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite(name.clone()));
            }
            updates.push((name.clone(), next));
        }
        commit(params, updates)?;
        self.t += 1;
        Ok(())
    }

    fn state(&self) -> OptimState {
        OptimState { t: self.t, moments: BTreeMap::new() }
    }

    fn load_state(&mut self, state: OptimState) -> Result<(), OptimError> {
        if !state.moments.is_empty() {
            return Err(OptimError::State("sgd state carries no moments".into()));
        }
        self.t = state.t;
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: OptimState,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, state: OptimState::default() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) -> Result<(), OptimError> {
        check_grads(params, grads)?;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.state.t + 1;
        let bc1 = 1.0 - b1.powf(t as f64);
        let bc2 = 1.0 - b2.powf(t as f64);
        let mut updates = Vec::with_capacity(params.len());
        let mut moments = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            let g = grads[name].data();
            let (mut m, mut v) = match self.state.moments.get(name) {
                Some((m, v)) if m.len() == g.len() => (m.clone(), v.clone()),
                Some(_) => return Err(OptimError::State(format!("moment length mismatch for {name}"))),
                None => (vec![0.0; g.len()], vec![0.0; g.len()]),
            };
            let mut next = Vec::with_capacity(g.len());
            for (i, &gi) in g.iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                next.push(p.data()[i] - lr * m_hat / (v_hat.sqrt() + self.eps));
            }
            if next.iter().chain(&m).chain(&v).any(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite(name.clone()));
            }
            updates.push((name.clone(), next));
            moments.push((name.clone(), (m, v)));
        }
        commit(params, updates)?;
        self.state.moments.extend(moments);
        self.state.t = t;
        Ok(())
    }

    fn state(&self) -> OptimState {
        self.state.clone()
    }

    fn load_state(&mut self, state: OptimState) -> Result<(), OptimError> {
        if state.moments.values().any(|(m, v)| m.len() != v.len()) {
            return Err(OptimError::State("moment lengths differ".into()));
        }
        self.state = state;
        Ok(())
    }
}

pub type OptimizerFactory = fn(&OptimConfig) -> Box<dyn Optimizer>;

pub fn optimizer_registry() -> Registry<OptimizerFactory> {
    Registry::<OptimizerFactory>::new("optimizer")
        .with("sgd", |_| Box::new(Sgd::default()))
        .with("adam", |c| Box::new(Adam::new(c.beta1, c.beta2, c.eps)))
}

pub fn build_optimizer(config: &OptimConfig) -> Result<Box<dyn Optimizer>, OptimError> {
    let factory = *optimizer_registry().get(&config.kind).map_err(|e| OptimError::Config(e.to_string()))?;
    Ok(factory(config))
}
