use super::OptimError;
use crate::numerics::{add_gradients, Gradients};

/// Sums of loss, weight and gradients over `update_freq` micro-steps.
#[derive(Debug, Clone)]
pub struct Accumulator {
    update_freq: usize,
    micro_steps: usize,
    loss_sum: f64,
    weight: f64,
    grads: Option<Gradients>,
}

impl Accumulator {
    pub fn new(update_freq: usize) -> Result<Self, OptimError> {
        if update_freq == 0 {
            return Err(OptimError::Config("update frequency must be >= 1".into()));
        }
        Ok(Self { update_freq, micro_steps: 0, loss_sum: 0.0, weight: 0.0, grads: None })
    }

    pub fn update_freq(&self) -> usize {
        self.update_freq
    }

    pub fn micro_steps(&self) -> usize {
        self.micro_steps
    }

    pub fn is_empty(&self) -> bool {
        self.micro_steps == 0
    }

    /// Adds one micro-step. Returns true once `update_freq` steps are held.
    pub fn accumulate(&mut self, loss_sum: f64, weight: f64, grads: Gradients) -> Result<bool, OptimError> {
        if self.micro_steps == self.update_freq {
            return Err(OptimError::State("accumulator is full; flush first".into()));
        }
        self.grads = Some(match self.grads.take() {
            None => grads,
            Some(acc) => add_gradients(&acc, &grads).map_err(|e| OptimError::Shape(e.to_string()))?,
        });
        self.loss_sum += loss_sum;
        self.weight += weight;
        self.micro_steps += 1;
        Ok(self.micro_steps == self.update_freq)
    }

    /// Running loss and weight sums and the gradient sum so far.
    pub fn running(&self) -> (f64, f64, Option<&Gradients>) {
        (self.loss_sum, self.weight, self.grads.as_ref())
    }

    /// Records one micro-step whose sums were already folded onto
    /// [`running`](Self::running) elsewhere. Returns true once full.
    pub fn advance(&mut self, loss_sum: f64, weight: f64, grads: Gradients) -> Result<bool, OptimError> {
        if self.micro_steps == self.update_freq {
            return Err(OptimError::State("accumulator is full; flush first".into()));
        }
        self.loss_sum = loss_sum;
        self.weight = weight;
        self.grads = Some(grads);
        self.micro_steps += 1;
        Ok(self.micro_steps == self.update_freq)
    }

    /// Returns the sums and resets. Partial accumulations may be flushed.
    pub fn flush(&mut self) -> Result<(f64, f64, Gradients), OptimError> {
        let grads = self.grads.take().ok_or_else(|| OptimError::State("flush on empty accumulator".into()))?;
        let out = (self.loss_sum, self.weight, grads);
        self.loss_sum = 0.0;
        self.weight = 0.0;
        self.micro_steps = 0;
        Ok(out)
    }
}
