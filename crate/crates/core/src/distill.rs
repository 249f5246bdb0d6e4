//! Sampler distillation: per-step score coefficients Φ (LSD) and learned step
//! sizes κ (LSD+), fitted by aligning a few-step student with a cached
//! many-step teacher.
//!
//! Both objectives compare effective scores, the part of the score that
//! carries reverse-rate mass: `E[i][v] = Q(v, x^i) · s[i][v]` for `v ≠ x^i`.
//! With `a = E* + δ` (teacher) and `b = E + δ` (student) the per-step loss is
//! the generalized KL `d(a, θ·b)` divided by the batch mean of `Σa` at that
//! step, so steps at very different noise levels weigh alike while the
//! optimum stays the pooled ratio `Σ_n Σa / Σ_n Σb`. Each sample's loss is a
//! function of three sums, which gives closed-form values and gradients for
//! any scale `θ`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctmc::{rate_entry, sample_prior, RateMatrixKind, Sequence, StateSpace};
use crate::error::{Error, Result};
use crate::par::try_map_indexed;
use crate::rng::{Purpose, StreamKey};
use crate::sampler::{CoefficientSet, Sampler, SamplerKind, TimeSchedule};
use crate::score::{ScoreField, ScoreOracle};

/// Bounds outside which a learned coefficient counts as diverged.
pub const PHI_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// Distance used between score vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    GeneralizedKl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub t_max: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub epochs: usize,
    pub schedule_eta: f64,
    pub schedule_epochs: usize,
    pub n_samples: usize,
    /// Hamming radius of the relaxed objective; `None` means 5% of the
    /// sequence length, rounded.
    pub zeta: Option<usize>,
    pub metric: Metric,
    pub sampler_kind: SamplerKind,
    pub score_floor: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            teacher_steps: 1024,
            student_steps: 8,
            t_max: 1.0,
            epsilon: 1e-4,
            eta: 1e-3,
            epochs: 20,
            schedule_eta: 1e-3,
            schedule_epochs: 20,
            n_samples: 64,
            zeta: None,
            metric: Metric::GeneralizedKl,
            sampler_kind: SamplerKind::Euler,
            score_floor: 1e-8,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn zeta_for(&self, seq_len: usize) -> usize {
        self.zeta
            .unwrap_or_else(|| (0.05 * seq_len as f64).round() as usize)
    }

    pub fn validate(&self, seq_len: usize, schedule_t_max: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.teacher_steps == 0 || self.student_steps == 0 {
            return bad("teacher_steps and student_steps must be positive".into());
        }
        if self.student_steps > self.teacher_steps || !self.teacher_steps.is_multiple_of(self.student_steps) {
            return bad(format!(
                "student_steps {} must divide teacher_steps {}",
                self.student_steps, self.teacher_steps
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.t_max) {
            return bad(format!("need 0 < epsilon < t_max, got {} and {}", self.epsilon, self.t_max));
        }
        if self.t_max > schedule_t_max {
            return bad(format!(
                "t_max {} exceeds the noise schedule horizon {schedule_t_max}",
                self.t_max
            ));
        }
        for (name, v) in [("eta", self.eta), ("schedule_eta", self.schedule_eta), ("score_floor", self.score_floor)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.zeta_for(seq_len) > seq_len {
            return bad(format!("zeta {} exceeds sequence length {seq_len}", self.zeta_for(seq_len)));
        }
        Ok(())
    }

    pub fn teacher_schedule(&self) -> Result<TimeSchedule> {
        TimeSchedule::uniform(self.t_max, self.epsilon, self.teacher_steps)
    }

    pub fn student_schedule(&self) -> Result<TimeSchedule> {
        self.teacher_schedule()?.subsample(self.student_steps)
    }

    /// Teacher step size `(T - ε) / N`.
    pub fn teacher_step(&self) -> f64 {
        (self.t_max - self.epsilon) / self.teacher_steps as f64
    }
}

/// `Σ a log(a/b) - a + b`, with `0 log 0 = 0`.
pub fn gen_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("gen_kl on lengths {} and {}", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(y > 0.0) {
            return Err(Error::domain(format!("gen_kl needs b > 0, got {y}")));
        }
        if !(x >= 0.0) {
            return Err(Error::domain(format!("gen_kl needs a >= 0, got {x}")));
        }
        total += if x > 0.0 { x * (x / y).ln() } else { 0.0 } - x + y;
    }
    Ok(total)
}

/// `d/dθ gen_kl(a, θ b) = Σ (b - a/θ)`.
pub fn gen_kl_scale_grad(a: &[f64], b: &[f64], theta: f64) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| y - x / theta).sum()
}

/// Φ gradient: `d/dΦ gen_kl(s*, Φ s)`.
pub fn phi_grad(s_star: &[f64], s: &[f64], phi: f64) -> f64 {
    gen_kl_scale_grad(s_star, s, phi)
}

/// κ gradient: `d/dκ gen_kl(c s*, κ s)` for teacher step `c`.
pub fn kappa_grad(s_star: &[f64], s: &[f64], kappa: f64, teacher_step: f64) -> f64 {
    s.iter().zip(s_star).map(|(&y, &x)| y - teacher_step * x / kappa).sum()
}

/// Effective scores, flattened row-major over positions and values.
pub fn effective_score(kind: RateMatrixKind, score: &ScoreField) -> Vec<f64> {
    let (d, n) = score.values.dim();
    let toks = score.base_state.tokens();
    let mut out = Vec::with_capacity(d * n);
    for (i, &tok) in toks.iter().enumerate().take(d) {
        for v in 0..n {
            out.push(if v == tok {
                0.0
            } else {
                rate_entry(kind, n, v, tok) * score.get(i, v)
            });
        }
    }
    out
}

/// Sufficient statistics of `d(a, θ b) / Σa` in `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub a_sum: f64,
    pub b_sum: f64,
    /// `Σ a log(a / b)`.
    pub cross: f64,
}

impl Alignment {
    /// Statistics for `a = scale · (teacher + floor)`, `b = student + floor`.
    pub fn new(teacher: &[f64], student: &[f64], scale: f64, floor: f64) -> Result<Self> {
        if teacher.len() != student.len() {
            return Err(Error::Shape(format!(
                "teacher has {} score entries, student {}",
                teacher.len(),
                student.len()
            )));
        }
        let mut s = Alignment {
            a_sum: 0.0,
            b_sum: 0.0,
            cross: 0.0,
        };
        for (&t, &u) in teacher.iter().zip(student) {
            let a = scale * (t + floor);
            let b = u + floor;
            s.a_sum += a;
            s.b_sum += b;
            s.cross += a * (a / b).ln();
        }
        Ok(s)
    }

    /// `d(a, θ b) / norm`.
    pub fn loss(&self, theta: f64, norm: f64) -> f64 {
        (self.cross - self.a_sum - self.a_sum * theta.ln() + theta * self.b_sum) / norm
    }

    pub fn grad(&self, theta: f64, norm: f64) -> f64 {
        (self.b_sum - self.a_sum / theta) / norm
    }

    /// Minimizer `Σa / Σb`.
    pub fn optimum(&self) -> f64 {
        self.a_sum / self.b_sum
    }
}

/// Batch normalizer: mean teacher mass `Σa` at one step.
pub fn batch_norm(stats: &[Alignment]) -> f64 {
    stats.iter().map(|s| s.a_sum).sum::<f64>() / stats.len().max(1) as f64
}

/// Step normalizer: the larger of the mean teacher mass `Σa` and the mean
/// scaled student mass `θ Σb`. Dividing the gradient by it bounds each
/// sample's contribution to the update whichever side dominates.
pub fn step_norm(stats: &[Alignment], theta: f64) -> f64 {
    let b = stats.iter().map(|s| s.b_sum).sum::<f64>() / stats.len().max(1) as f64;
    batch_norm(stats).max(theta * b)
}

/// Mean per-sample loss `d(a_n, θ b_n) / norm`.
pub fn batch_loss(stats: &[Alignment], theta: f64, norm: f64) -> f64 {
    stats.iter().map(|s| s.loss(theta, norm)).sum::<f64>() / stats.len().max(1) as f64
}

/// Per-sample gradients accumulated in sample order.
pub fn batch_grad(stats: &[Alignment], theta: f64, norm: f64) -> f64 {
    stats.iter().map(|s| s.grad(theta, norm)).sum()
}

/// One gradient step on Φ with the accumulated batch gradient.
pub fn phi_update(phi: f64, stats: &[Alignment], norm: f64, eta: f64) -> f64 {
    phi - eta * batch_grad(stats, phi, norm)
}

/// One gradient step on `log κ` with the accumulated batch gradient.
pub fn kappa_update(kappa: f64, stats: &[Alignment], norm: f64, eta: f64) -> f64 {
    (kappa.ln() - eta * kappa * batch_grad(stats, kappa, norm)).exp()
}

/// Relaxed-objective start state: `m ~ U{0..ζ}` distinct positions, each set to
/// a different valid token (never the mask).
pub fn perturb_initial(
    x: &Sequence,
    zeta: usize,
    kind: RateMatrixKind,
    space: &StateSpace,
    key: StreamKey,
) -> Result<Sequence> {
    let d = x.len();
    if zeta > d {
        return Err(Error::domain(format!("zeta {zeta} exceeds sequence length {d}")));
    }
    if zeta == 0 {
        return Ok(x.clone());
    }
    let data_states = match kind {
        RateMatrixKind::Absorbing => space.num_states - 1,
        RateMatrixKind::Uniform => space.num_states,
    };
    let mut rng = key.rng();
    let m = rng.random_range(0..=zeta);
    let mut out = x.clone();
    for pos in sample_indices(&mut rng, d, m).into_iter() {
        let cur = x.tokens()[pos];
        let choices: Vec<usize> = (0..data_states).filter(|&v| v != cur).collect();
        if choices.is_empty() {
            continue;
        }
        out.0[pos] = choices[rng.random_range(0..choices.len())];
    }
    Ok(out)
}

/// Teacher states and scores cached at the coarse times.
#[derive(Debug, Clone)]
pub struct TeacherCache {
    pub states: Vec<Sequence>,
    pub scores: Vec<ScoreField>,
}

/// Runs the Φ ≡ 1 teacher over its whole schedule and keeps the state and
/// score at every `stride`-th time.
pub fn teacher_rollout(
    sampler: &Sampler,
    start: &Sequence,
    teacher_schedule: &TimeSchedule,
    stride: usize,
    key: StreamKey,
) -> Result<TeacherCache> {
    let n = teacher_schedule.steps();
    if stride == 0 || !n.is_multiple_of(stride) {
        return Err(Error::domain(format!("stride {stride} does not divide {n}")));
    }
    let mut states = Vec::with_capacity(n / stride + 1);
    let mut scores = Vec::with_capacity(n / stride + 1);
    sampler.run_observed(
        start,
        teacher_schedule,
        &CoefficientSet::ones(n),
        key,
        true,
        |j, x, s| {
            if j % stride == 0 {
                states.push(x.clone());
                scores.push(s.expect("scores are requested at every step").clone());
            }
        },
    )?;
    Ok(TeacherCache { states, scores })
}

/// Student effective scores at every visited time `k = 0..=M`.
fn student_effective(
    sampler: &Sampler,
    start: &Sequence,
    times: &TimeSchedule,
    phi: &CoefficientSet,
    key: StreamKey,
) -> Result<Vec<Vec<f64>>> {
    let kind = sampler.oracle.kind();
    let mut out = Vec::with_capacity(times.steps() + 1);
    sampler.run_observed(start, times, phi, key, true, |_, _, s| {
        out.push(effective_score(kind, s.expect("scores are requested at every step")));
    })?;
    Ok(out)
}

/// Fixed training set: per sample, the teacher's effective scores at the
/// coarse times, the student start state and its trajectory stream.
struct TrainingSet {
    teacher: Vec<Vec<Vec<f64>>>,
    starts: Vec<Sequence>,
    keys: Vec<StreamKey>,
}

fn training_keys(seed: u64, n: usize) -> (Vec<StreamKey>, Vec<StreamKey>, Vec<StreamKey>) {
    let ids = |purpose| {
        (0..n as u64)
            .map(|i| StreamKey::new(seed, purpose, &[0x7A11, i]))
            .collect()
    };
    (ids(Purpose::Prior), ids(Purpose::Perturb), ids(Purpose::Trajectory))
}

fn build_training_set(oracle: &ScoreOracle, config: &DistillConfig) -> Result<TrainingSet> {
    let kind = oracle.kind();
    let space = oracle.space();
    let teacher_schedule = config.teacher_schedule()?;
    let stride = config.teacher_steps / config.student_steps;
    let zeta = config.zeta_for(space.seq_len);
    let sampler = Sampler::new(oracle, config.sampler_kind);
    let (prior_keys, perturb_keys, keys) = training_keys(config.seed, config.n_samples);
    let rows = try_map_indexed(config.n_samples, |n| -> Result<_> {
        let x0 = sample_prior(kind, space, prior_keys[n])?;
        let cache = teacher_rollout(&sampler, &x0, &teacher_schedule, stride, keys[n])?;
        let teacher: Vec<Vec<f64>> = cache.scores.iter().map(|s| effective_score(kind, s)).collect();
        let start = perturb_initial(&x0, zeta, kind, space, perturb_keys[n])?;
        Ok((teacher, start))
    })?;
    let (teacher, starts) = rows.into_iter().unzip();
    Ok(TrainingSet { teacher, starts, keys })
}

/// One row per (phase, epoch, step): mean loss over the training samples at
/// the parameters in force during that epoch, and the parameter afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epoch,step,loss,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.phase, r.epoch, r.step, r.loss, r.value);
        }
        out
    }

    /// Rows of the last recorded epoch of `phase`.
    pub fn final_rows(&self, phase: &str) -> Vec<&TraceRow> {
        let last = self.rows.iter().filter(|r| r.phase == phase).map(|r| r.epoch).max();
        self.rows
            .iter()
            .filter(|r| r.phase == phase && Some(r.epoch) == last)
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.rows.iter().find(|r| !r.loss.is_finite() || !r.value.is_finite()) {
            Some(r) => Err(Error::Divergence {
                step: r.step,
                value: if r.value.is_finite() { r.loss } else { r.value },
            }),
            None => Ok(()),
        }
    }
}

/// Per-sample alignment statistics for steps `1..=last`.
fn epoch_stats(
    oracle: &ScoreOracle,
    config: &DistillConfig,
    set: &TrainingSet,
    times: &TimeSchedule,
    phi: &CoefficientSet,
    teacher_scale: f64,
    last: usize,
) -> Result<Vec<Vec<Alignment>>> {
    let sampler = Sampler::new(oracle, config.sampler_kind);
    try_map_indexed(set.starts.len(), |n| {
        let student = student_effective(&sampler, &set.starts[n], times, phi, set.keys[n])?;
        (1..=last)
            .map(|k| Alignment::new(&set.teacher[n][k], &student[k], teacher_scale, config.score_floor))
            .collect()
    })
}

fn column(stats: &[Vec<Alignment>], idx: usize) -> Vec<Alignment> {
    stats.iter().map(|s| s[idx]).collect()
}

/// LSD: learns `Φ(t_k)` for `k = 1..M-1` (`Φ(t_0) = 1`), all other settings
/// fixed. Returns the coefficients and the per-epoch trace; a final row
/// block at `epoch = epochs` holds the loss at the returned coefficients.
pub fn lsd_train(oracle: &ScoreOracle, config: &DistillConfig) -> Result<(CoefficientSet, LossTrace)> {
    config.validate(oracle.space().seq_len, oracle.schedule().t_max())?;
    let set = build_training_set(oracle, config)?;
    let times = config.student_schedule()?;
    let m = config.student_steps;
    let mut phi = vec![1.0; m];
    let mut trace = LossTrace::default();
    for epoch in 0..=config.epochs {
        let coeffs = CoefficientSet::new(phi.clone())?;
        let stats = epoch_stats(oracle, config, &set, &times, &coeffs, 1.0, m.saturating_sub(1))?;
        let columns: Vec<Vec<Alignment>> = (1..m).map(|k| column(&stats, k - 1)).collect();
        let norms: Vec<f64> = columns.iter().map(|c| batch_norm(c)).collect();
        let losses: Vec<f64> = (1..m).map(|k| batch_loss(&columns[k - 1], phi[k], norms[k - 1])).collect();
        if epoch < config.epochs {
            for k in 1..m {
                let norm = step_norm(&columns[k - 1], phi[k]);
                phi[k] = phi_update(phi[k], &columns[k - 1], norm, config.eta);
                if !(phi[k] > PHI_BOUNDS.0 && phi[k] < PHI_BOUNDS.1) {
                    return Err(Error::Divergence { step: k, value: phi[k] });
                }
            }
        }
        for k in 1..m {
            trace.rows.push(TraceRow {
                phase: "phi".into(),
                epoch,
                step: k,
                loss: losses[k - 1],
                value: phi[k],
            });
        }
    }
    trace.check_finite()?;
    Ok((CoefficientSet::new(phi)?, trace))
}

/// Floors κ at `1e-6 (T - ε)` and rescales to `Σκ = T - ε`.
pub fn project_kappa(kappa: &mut [f64], t_max: f64, epsilon: f64) {
    let width = t_max - epsilon;
    for k in kappa.iter_mut() {
        *k = k.max(1e-6 * width);
    }
    let total: f64 = kappa.iter().sum();
    for k in kappa.iter_mut() {
        *k *= width / total;
    }
}

/// `τ_k = T - Σ_{ℓ≤k} κ_ℓ`, with `τ_M = ε` pinned. Equal step sizes give the
/// canonical uniform grid exactly.
pub fn tau_from_kappa(kappa: &[f64], t_max: f64, epsilon: f64) -> Result<TimeSchedule> {
    if kappa.is_empty() {
        return Err(Error::domain("no step sizes"));
    }
    if kappa.iter().all(|&k| k == kappa[0]) {
        return TimeSchedule::uniform(t_max, epsilon, kappa.len());
    }
    let mut times = Vec::with_capacity(kappa.len() + 1);
    times.push(t_max);
    let mut acc = 0.0;
    for k in &kappa[..kappa.len() - 1] {
        acc += k;
        times.push(t_max - acc);
    }
    times.push(epsilon);
    TimeSchedule::new(times)
}

/// LSD+: learns step sizes κ with Φ held fixed. The student runs on the
/// learned times `τ_k`; its effective score there is aligned with the
/// teacher's at the uniform coarse time `t_k`, scaled by the teacher step.
pub fn lsd_plus_train(
    oracle: &ScoreOracle,
    config: &DistillConfig,
    phi: &CoefficientSet,
) -> Result<(LearnedSampler, LossTrace)> {
    config.validate(oracle.space().seq_len, oracle.schedule().t_max())?;
    let m = config.student_steps;
    if phi.len() != m {
        return Err(Error::Shape(format!("{} coefficients for {m} steps", phi.len())));
    }
    let set = build_training_set(oracle, config)?;
    let (t_max, eps) = (config.t_max, config.epsilon);
    let c_step = config.teacher_step();
    let student_step = (t_max - eps) / m as f64;
    let mut kappa = vec![student_step; m];
    let mut tau = tau_from_kappa(&kappa, t_max, eps)?;
    let mut trace = LossTrace::default();
    for epoch in 0..=config.schedule_epochs {
        let stats = epoch_stats(oracle, config, &set, &tau, phi, c_step, m)?;
        // κ_k is the step that ends at τ_k; its loss reads the student at τ_k
        let columns: Vec<Vec<Alignment>> = (1..=m).map(|k| column(&stats, k - 1)).collect();
        // teacher mass at the uniform student step size: keeps the gradient
        // scale of κ comparable to that of Φ
        let norms: Vec<f64> = columns.iter().map(|c| batch_norm(c) * student_step / c_step).collect();
        let losses: Vec<f64> = (1..=m)
            .map(|k| batch_loss(&columns[k - 1], kappa[k - 1], norms[k - 1]))
            .collect();
        if epoch < config.schedule_epochs {
            for k in 1..=m {
                // in the same units, the student's mass at its current step
                let scale = student_step / c_step;
                let norm = scale * step_norm(&columns[k - 1], kappa[k - 1] / scale);
                let next = kappa_update(kappa[k - 1], &columns[k - 1], norm, config.schedule_eta);
                if !(next > 0.0 && next.is_finite()) {
                    return Err(Error::Divergence { step: k, value: next });
                }
                kappa[k - 1] = next;
            }
            project_kappa(&mut kappa, t_max, eps);
            tau = tau_from_kappa(&kappa, t_max, eps)?;
        }
        for k in 1..=m {
            trace.rows.push(TraceRow {
                phase: "kappa".into(),
                epoch,
                step: k,
                loss: losses[k - 1],
                value: kappa[k - 1],
            });
        }
    }
    trace.check_finite()?;
    let learned = LearnedSampler {
        kind: LearnedKind::LsdPlus,
        t_max,
        epsilon: eps,
        phi: phi.clone(),
        kappa,
        tau,
        sampler_kind: config.sampler_kind,
        config_hash: config_hash(config)?,
        seed: config.seed,
        provenance_mismatch: false,
    };
    learned.validate()?;
    Ok((learned, trace))
}

/// Hex sha256 of a value's canonical JSON.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn config_hash(config: &DistillConfig) -> Result<String> {
    hash_json(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnedKind {
    #[serde(rename = "lsd")]
    Lsd,
    #[serde(rename = "lsd+")]
    LsdPlus,
}

/// Distilled sampler: coefficients, step sizes and the schedule they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedSampler {
    pub kind: LearnedKind,
    pub t_max: f64,
    pub epsilon: f64,
    pub phi: CoefficientSet,
    pub kappa: Vec<f64>,
    pub tau: TimeSchedule,
    pub sampler_kind: SamplerKind,
    pub config_hash: String,
    pub seed: u64,
    /// Set on import when the artifact came from a different configuration.
    pub provenance_mismatch: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnedDoc {
    version: u32,
    kind: LearnedKind,
    #[serde(rename = "T")]
    t_max: f64,
    epsilon: f64,
    #[serde(rename = "M")]
    m: usize,
    phi: Vec<f64>,
    kappa: Vec<f64>,
    tau: Vec<f64>,
    sampler_kind: SamplerKind,
    config_hash: String,
    seed: u64,
}

const SCHEMA_VERSION: u32 = 1;

impl LearnedSampler {
    /// LSD artifact: learned Φ on the uniform grid.
    pub fn lsd(config: &DistillConfig, phi: CoefficientSet) -> Result<Self> {
        let m = config.student_steps;
        let s = Self {
            kind: LearnedKind::Lsd,
            t_max: config.t_max,
            epsilon: config.epsilon,
            phi,
            kappa: vec![(config.t_max - config.epsilon) / m as f64; m],
            tau: config.student_schedule()?,
            sampler_kind: config.sampler_kind,
            config_hash: config_hash(config)?,
            seed: config.seed,
            provenance_mismatch: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// Φ ≡ 1 on the uniform grid: the plain sampler in artifact form.
    pub fn vanilla(config: &DistillConfig) -> Result<Self> {
        Self::lsd(config, CoefficientSet::ones(config.student_steps))
    }

    pub fn steps(&self) -> usize {
        self.kappa.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.kappa.len();
        let schema = |msg: String| Err(Error::Schema(msg));
        if m == 0 {
            return schema("artifact has no steps".into());
        }
        if self.phi.len() != m || self.tau.steps() != m {
            return schema(format!(
                "inconsistent lengths: M={m}, phi={}, tau={}",
                self.phi.len(),
                self.tau.times().len()
            ));
        }
        let width = self.t_max - self.epsilon;
        if !(self.epsilon > 0.0 && width > 0.0) {
            return schema(format!("need 0 < epsilon < T, got {} and {}", self.epsilon, self.t_max));
        }
        if let Some(k) = self.kappa.iter().position(|&k| !(k > 0.0 && k.is_finite())) {
            return schema(format!("kappa[{k}] = {} is not positive", self.kappa[k]));
        }
        let sum: f64 = self.kappa.iter().sum();
        if (sum - width).abs() > 1e-9 {
            return schema(format!("kappa sums to {sum}, expected {width}"));
        }
        let times = self.tau.times();
        if times[0] != self.t_max {
            return schema(format!("tau starts at {}, expected {}", times[0], self.t_max));
        }
        if (times[m] - self.epsilon).abs() > 1e-9 {
            return schema(format!("tau ends at {}, expected {}", times[m], self.epsilon));
        }
        let mut acc = 0.0;
        for (k, &t) in times.iter().enumerate().take(m).skip(1) {
            acc += self.kappa[k - 1];
            if (t - (self.t_max - acc)).abs() > 1e-9 {
                return schema(format!("tau[{k}] = {t} disagrees with the step sizes"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = LearnedDoc {
            version: SCHEMA_VERSION,
            kind: self.kind,
            t_max: self.t_max,
            epsilon: self.epsilon,
            m: self.steps(),
            phi: self.phi.values().to_vec(),
            kappa: self.kappa.clone(),
            tau: self.tau.times().to_vec(),
            sampler_kind: self.sampler_kind,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Parses and validates an artifact. When `expected_hash` is given and
    /// differs, the artifact still loads with `provenance_mismatch` set.
    pub fn from_json(text: &str, expected_hash: Option<&str>) -> Result<Self> {
        let doc: LearnedDoc = serde_json::from_str(text)?;
        if doc.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported artifact version {}", doc.version)));
        }
        if doc.m != doc.kappa.len() {
            return Err(Error::Schema(format!("M = {} but {} step sizes", doc.m, doc.kappa.len())));
        }
        let s = Self {
            kind: doc.kind,
            t_max: doc.t_max,
            epsilon: doc.epsilon,
            phi: CoefficientSet::new(doc.phi).map_err(|e| Error::Schema(e.to_string()))?,
            kappa: doc.kappa,
            tau: TimeSchedule::new(doc.tau).map_err(|e| Error::Schema(e.to_string()))?,
            sampler_kind: doc.sampler_kind,
            provenance_mismatch: expected_hash.is_some_and(|h| h != doc.config_hash),
            config_hash: doc.config_hash,
            seed: doc.seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn import(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, expected_hash)
    }
}

/// Mean batch Φ-loss over steps `1..M-1` on fresh evaluation samples (no
/// perturbation): the student runs on `learned`'s schedule and
/// coefficients, the teacher on its uniform fine grid.
pub fn alignment_loss(
    oracle: &ScoreOracle,
    config: &DistillConfig,
    learned: &LearnedSampler,
    n_eval: usize,
    eval_seed: u64,
) -> Result<f64> {
    let m = learned.steps();
    if m != config.student_steps {
        return Err(Error::Shape(format!(
            "artifact has {m} steps, configuration {}",
            config.student_steps
        )));
    }
    if m < 2 || n_eval == 0 {
        return Ok(0.0);
    }
    let kind = oracle.kind();
    let space = oracle.space();
    let teacher_schedule = config.teacher_schedule()?;
    let stride = config.teacher_steps / m;
    let sampler = Sampler::new(oracle, learned.sampler_kind);
    let stats = try_map_indexed(n_eval, |n| -> Result<Vec<Alignment>> {
        let ids = [0xE7A1, n as u64];
        let x0 = sample_prior(kind, space, StreamKey::new(eval_seed, Purpose::Prior, &ids))?;
        let key = StreamKey::new(eval_seed, Purpose::Trajectory, &ids);
        let cache = teacher_rollout(&sampler, &x0, &teacher_schedule, stride, key)?;
        let student = student_effective(&sampler, &x0, &learned.tau, &learned.phi, key)?;
        (1..m)
            .map(|k| {
                let teacher = effective_score(kind, &cache.scores[k]);
                Alignment::new(&teacher, &student[k], 1.0, config.score_floor)
            })
            .collect()
    })?;
    let total: f64 = (1..m)
        .map(|k| {
            let col = column(&stats, k - 1);
            batch_loss(&col, learned.phi.get(k), batch_norm(&col))
        })
        .sum();
    Ok(total / (m - 1) as f64)
}
