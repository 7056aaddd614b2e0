//! Central finite-difference checks of the analytic gradients of the frame
//! scorer and the hierarchical model on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FrameSample, ProbSequence, ProbShot};
use crate::error::Result;
use crate::hlstm::{backward_sequence, forward_sequence, hlstm_loss, HlstmParams};
use crate::linalg::softmax;
use crate::optim::Parameters;
use crate::par;
use crate::scorer::{loss_and_grad, score, ScorerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub scorer_instances: usize,
    pub hlstm_instances: usize,
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            scorer_instances: 75,
            hlstm_instances: 75,
            seed: 0,
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub instance: String,
    pub blocks: Vec<BlockReport>,
}

impl CheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .fold(None, |acc: Option<&BlockReport>, b| match acc {
                Some(a) if a.max_rel_error >= b.max_rel_error => Some(a),
                _ => Some(b),
            })
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grad` with central differences of `loss` at every coordinate.
pub fn check_gradient<P, F>(instance: &str, params: &P, grad: &P, loss: F, step: f64, floor: f64) -> CheckReport
where
    P: Parameters,
    F: Fn(&P) -> f64,
{
    let analytic = grad.blocks();
    let mut blocks = Vec::with_capacity(analytic.len());
    for (bi, (name, g)) in analytic.iter().enumerate() {
        let mut worst = BlockReport {
            block: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, &a) in g.iter().enumerate() {
            let mut probe = params.clone();
            let base = probe.blocks()[bi].1[k];
            probe.blocks_mut()[bi].1[k] = base + step;
            let up = loss(&probe);
            probe.blocks_mut()[bi].1[k] = base - step;
            let down = loss(&probe);
            let numeric = (up - down) / (2.0 * step);
            let rel = relative_error(a, numeric, floor);
            if rel > worst.max_rel_error || rel.is_nan() {
                worst = BlockReport {
                    block: name.clone(),
                    max_rel_error: if rel.is_nan() { f64::INFINITY } else { rel },
                    worst_index: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        blocks.push(worst);
    }
    CheckReport {
        instance: instance.to_string(),
        blocks,
    }
}

fn negate_block<P: Parameters>(grad: &mut P, block: &str) {
    for (name, b) in grad.blocks_mut() {
        if name == block {
            b.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random scorer problem whose latent argmax has a clear margin, so the
/// loss is smooth within the finite-difference step.
pub fn random_scorer_instance<R: Rng + ?Sized>(rng: &mut R) -> (ScorerParams, Vec<(FrameSample, Vec<usize>)>) {
    loop {
        let a = rng.random_range(2..=5);
        let d = rng.random_range(2..=6);
        let mut params = ScorerParams::zeros(a, d);
        for (_, b) in params.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.5 * gaussian(rng));
        }
        let batch: Vec<(FrameSample, Vec<usize>)> = (0..rng.random_range(1..=3))
            .map(|_| {
                let vec = |rng: &mut R| (0..d).map(|_| gaussian(rng) as f32).collect::<Vec<f32>>();
                let n = rng.random_range(1..=5);
                let frame = FrameSample {
                    primary: vec(rng),
                    secondaries: (0..n).map(|_| vec(rng)).collect(),
                    label: rng.random_range(0..a),
                };
                let mut cands: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
                if cands.is_empty() {
                    cands.push(rng.random_range(0..n));
                }
                (frame, cands)
            })
            .collect();
        if min_latent_gap(&params, &batch) > 1e-3 {
            return (params, batch);
        }
    }
}

fn min_latent_gap(params: &ScorerParams, batch: &[(FrameSample, Vec<usize>)]) -> f64 {
    let mut gap = f64::INFINITY;
    for (frame, cands) in batch {
        for a in 0..params.num_actions() {
            let mut s: Vec<f64> = cands
                .iter()
                .map(|&z| crate::linalg::dot_f32(params.w_secondary.row(a), &frame.secondaries[z]))
                .collect();
            s.sort_by(|x, y| y.total_cmp(x));
            if s.len() > 1 {
                gap = gap.min(s[0] - s[1]);
            }
        }
    }
    gap
}

fn scorer_loss(params: &ScorerParams, batch: &[(FrameSample, Vec<usize>)]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|(f, c)| -score(params, f, c).expect("valid instance").probs[f.label].ln())
        .sum();
    total / batch.len() as f64
}

pub fn check_scorer_instance(index: usize, config: &GradcheckConfig, fault: Option<&str>) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2 * index as u64);
    let (params, batch) = random_scorer_instance(&mut rng);
    let examples: Vec<(&FrameSample, Vec<usize>)> = batch.iter().map(|(f, c)| (f, c.clone())).collect();
    let (_, mut grad) = loss_and_grad(&params, &examples)?;
    if let Some(block) = fault {
        negate_block(&mut grad, block);
    }
    Ok(check_gradient(
        &format!("scorer#{index}"),
        &params,
        &grad,
        |p| scorer_loss(p, &batch),
        config.step,
        config.floor,
    ))
}

/// Random hierarchical problem: A in 2..=4, H in 2..=5, 1-3 shots of 1-3 frames.
pub fn random_hlstm_instance<R: Rng + ?Sized>(rng: &mut R) -> (HlstmParams, ProbSequence) {
    let a = rng.random_range(2..=4);
    let h = rng.random_range(2..=5);
    let mut params = HlstmParams::zeros(a, h);
    for (_, b) in params.blocks_mut() {
        b.iter_mut().for_each(|v| *v = 0.5 * gaussian(rng));
    }
    let shots = (0..rng.random_range(1..=3))
        .map(|_| ProbShot {
            label: rng.random_range(0..a),
            frames: (0..rng.random_range(1..=3))
                .map(|_| softmax(&(0..a).map(|_| gaussian(rng)).collect::<Vec<_>>()))
                .collect(),
        })
        .collect();
    let seq = ProbSequence {
        id: "g".into(),
        subject: "g".into(),
        shots,
    };
    (params, seq)
}

fn hlstm_total_loss(params: &HlstmParams, seq: &ProbSequence, beta: f64) -> f64 {
    let f = forward_sequence(params, seq).expect("valid instance");
    hlstm_loss(&f.frame_probs, &f.shot_probs, &seq.frame_labels(), &seq.shot_labels(), beta).expect("matching lengths")
}

/// The beta used by hierarchical instance `index` cycles through 0, 0.5, 1.
pub fn instance_beta(index: usize) -> f64 {
    [0.0, 0.5, 1.0][index % 3]
}

pub fn check_hlstm_instance(index: usize, config: &GradcheckConfig, fault: Option<&str>) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2 * index as u64 + 1);
    let (params, seq) = random_hlstm_instance(&mut rng);
    let beta = instance_beta(index);
    let fwd = forward_sequence(&params, &seq)?;
    let mut grad = backward_sequence(&params, &fwd.trace, &seq.frame_labels(), &seq.shot_labels(), beta)?;
    if let Some(block) = fault {
        negate_block(&mut grad, block);
    }
    Ok(check_gradient(
        &format!("hlstm#{index} beta={beta}"),
        &params,
        &grad,
        |p| hlstm_total_loss(p, &seq, beta),
        config.step,
        config.floor,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(CheckReport::max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn failures(&self) -> Vec<(&str, &BlockReport)> {
        self.checks
            .iter()
            .flat_map(|c| {
                c.blocks
                    .iter()
                    .filter(|b| !(b.max_rel_error < self.tolerance))
                    .map(move |b| (c.instance.as_str(), b))
            })
            .collect()
    }

    /// Worst relative error per block name across all instances.
    pub fn per_block_max(&self) -> Vec<(String, f64)> {
        let mut out: std::collections::BTreeMap<String, f64> = Default::default();
        for c in &self.checks {
            let family = c.instance.split('#').next().unwrap_or("");
            for b in &c.blocks {
                let e = out.entry(format!("{family}:{}", b.block)).or_insert(0.0);
                *e = e.max(b.max_rel_error);
            }
        }
        out.into_iter().collect()
    }
}

/// Runs every instance. `fault` negates the analytic gradient of the named
/// block before comparison, to confirm the harness notices.
pub fn run_suite(config: &GradcheckConfig, fault: Option<&str>) -> Result<SuiteReport> {
    let scorer = par::map_range(config.scorer_instances, |i| check_scorer_instance(i, config, fault));
    let hlstm = par::map_range(config.hlstm_instances, |i| check_hlstm_instance(i, config, fault));
    let checks = scorer.into_iter().chain(hlstm).collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        tolerance: config.tolerance,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        #[derive(Clone)]
        struct Q(Vec<f64>);
        impl Parameters for Q {
            fn blocks(&self) -> Vec<(String, &[f64])> {
                vec![("q".into(), &self.0)]
            }
            fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
                vec![("q".into(), &mut self.0)]
            }
            fn zeros_like(&self) -> Self {
                Q(vec![0.0; self.0.len()])
            }
        }
        let p = Q(vec![1.0, -2.0, 0.5]);
        let g = Q(p.0.iter().map(|x| 2.0 * x).collect());
        let loss = |q: &Q| q.0.iter().map(|x| x * x).sum::<f64>();
        let r = check_gradient("q", &p, &g, loss, 1e-5, 1e-6);
        assert!(r.max_rel_error() < 1e-8);
        let bad = Q(vec![2.0, -4.0, -1.0]);
        let r = check_gradient("q", &p, &bad, loss, 1e-5, 1e-6);
        assert_eq!(r.blocks[0].worst_index, 2);
    }

    #[test]
    fn small_suite_passes_and_fault_fails() {
        let config = GradcheckConfig {
            scorer_instances: 6,
            hlstm_instances: 6,
            seed: 11,
            ..Default::default()
        };
        let ok = run_suite(&config, None).unwrap();
        assert!(ok.passed(), "{:?}", ok.failures());
        let bad = run_suite(&config, Some("level1.W_forget")).unwrap();
        assert!(!bad.passed());
        assert!(bad.failures().iter().all(|(_, b)| b.block == "level1.W_forget"));
    }
}
