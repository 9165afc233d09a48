//! Adam with a linear warmup / linear decay learning-rate schedule.

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Ramps linearly to the peak over the first `ceil(warmup_portion · total)`
/// steps, then decays linearly toward zero at `total`.
#[derive(Debug, Clone, Copy)]
pub struct LinearSchedule {
    peak: f64,
    warmup_steps: usize,
    total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_portion: f64, total_steps: usize) -> Self {
        let warmup_steps = (warmup_portion * total_steps as f64).ceil() as usize;
        LinearSchedule {
            peak,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    /// Learning rate for the 0-based update `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak * (step + 1) as f64 / self.warmup_steps as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            self.peak * (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps(), 10);
        assert_eq!(s.lr(0), 0.1);
        assert_eq!(s.lr(9), 1.0);
        assert_eq!(s.lr(10), 1.0);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert!((s.lr(99) - 1.0 / 90.0).abs() < 1e-12);
        assert_eq!(s.lr(100), 0.0);
        let peak = (0..100).map(|i| s.lr(i)).fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn schedule_without_warmup() {
        let s = LinearSchedule::new(0.5, 0.0, 4);
        assert_eq!(s.warmup_steps(), 0);
        assert_eq!(s.lr(0), 0.5);
        assert_eq!(s.lr(3), 0.125);
    }

    #[test]
    fn schedule_rounds_warmup_up() {
        assert_eq!(LinearSchedule::new(1.0, 0.1, 5).warmup_steps(), 1);
        assert_eq!(LinearSchedule::new(1.0, 0.1, 0).warmup_steps(), 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first update is lr · sign(g).
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.3, -2.0], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 3.0);
            adam.step(&mut p, &[g], 0.05);
        }
        assert!((p[0] - 3.0).abs() < 1e-3);
    }
}
