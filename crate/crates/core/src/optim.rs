//! SGD with classical momentum and a step-decay learning-rate schedule.

/// Named views over every trainable block of a parameter set. Gradients use
/// the same type, so blocks line up one-to-one.
pub trait Parameters: Clone {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;
    /// Same shape, all zeros.
    fn zeros_like(&self) -> Self;

    fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.blocks().into_iter().flat_map(|(_, b)| b.to_vec()).collect()
    }

    /// `self += scale * other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let theirs = other.blocks();
        for ((_, mine), (_, theirs)) in self.blocks_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * b;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

/// Sums `items` in order into a fresh zero set shaped like `template`.
pub fn ordered_sum<P: Parameters>(template: &P, items: &[P]) -> P {
    let mut acc = template.zeros_like();
    for g in items {
        acc.add_scaled(g, 1.0);
    }
    acc
}

/// `lr(t) = initial * factor^floor(t / interval)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub interval: usize,
}

impl StepDecay {
    pub fn rate(&self, iteration: usize) -> f64 {
        let steps = iteration / self.interval.max(1);
        self.initial * self.factor.powi(steps.min(i32::MAX as usize) as i32)
    }
}

/// `v <- mu v - lr g; theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd<P> {
    momentum: f64,
    velocity: P,
}

impl<P: Parameters> MomentumSgd<P> {
    pub fn new(params: &P, momentum: f64) -> Self {
        MomentumSgd {
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        let g = grads.blocks();
        for (((_, v), (_, g)), (_, p)) in self
            .velocity
            .blocks_mut()
            .into_iter()
            .zip(g)
            .zip(params.blocks_mut())
        {
            for ((v, g), p) in v.iter_mut().zip(g).zip(p.iter_mut()) {
                *v = self.momentum * *v - lr * g;
                *p += *v;
            }
        }
    }
}

/// Rescales `grads` in place so that its global L2 norm is at most `max_norm`.
pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct V(Vec<f64>);

    impl Parameters for V {
        fn blocks(&self) -> Vec<(String, &[f64])> {
            vec![("v".into(), &self.0)]
        }
        fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
            vec![("v".into(), &mut self.0)]
        }
        fn zeros_like(&self) -> Self {
            V(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn step_decay_schedule() {
        let s = StepDecay { initial: 0.1, factor: 0.5, interval: 10 };
        assert_eq!(s.rate(0), 0.1);
        assert_eq!(s.rate(9), 0.1);
        assert_eq!(s.rate(10), 0.05);
        assert_eq!(s.rate(25), 0.025);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = V(vec![1.0]);
        let mut opt = MomentumSgd::new(&p, 0.9);
        let g = V(vec![1.0]);
        opt.step(&mut p, &g, 0.1);
        assert!((p.0[0] - 0.9).abs() < 1e-15);
        opt.step(&mut p, &g, 0.1);
        // v = 0.9 * -0.1 - 0.1 = -0.19
        assert!((p.0[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut p = V(vec![1.0, -2.0]);
        let mut opt = MomentumSgd::new(&p, 0.9);
        for _ in 0..5 {
            opt.step(&mut p, &V(vec![3.0, 4.0]), 0.0);
        }
        assert_eq!(p, V(vec![1.0, -2.0]));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = V(vec![3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g.l2_norm() - 1.0).abs() < 1e-12);
        let mut small = V(vec![0.3, 0.4]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, V(vec![0.3, 0.4]));
    }
}
