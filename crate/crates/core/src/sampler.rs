//! Reverse-process τ-leaping samplers.
//!
//! Both samplers update every position independently from a per-token
//! transition row built from the score of the current sequence. The reverse
//! rate into `v` from `x^i` is the forward rate `Q(v, x^i)` weighted by the
//! concrete score, so absorbing samplers only ever unmask.

use serde::{Deserialize, Serialize};

use crate::ctmc::{expm_entry, rate_entry, NoiseSchedule, RateMatrixKind, Sequence};
use crate::error::{Error, Result};
use crate::rng::{categorical, StreamKey};
use crate::score::{ScoreField, ScoreOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Euler,
    Tweedie,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Euler => "euler",
            SamplerKind::Tweedie => "tweedie",
        }
    }
}

/// Decreasing sampling times `T = t_0 > t_1 > … > t_M = ε > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeSchedule {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeSchedule {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        TimeSchedule::new(times)
    }
}

impl From<TimeSchedule> for Vec<f64> {
    fn from(s: TimeSchedule) -> Self {
        s.times
    }
}

impl TimeSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::domain("a time schedule needs at least one step"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("time schedule has non-finite entries"));
        }
        if let Some(w) = times.windows(2).position(|w| w[0] <= w[1]) {
            return Err(Error::domain(format!(
                "time schedule not strictly decreasing at step {w}: {} -> {}",
                times[w],
                times[w + 1]
            )));
        }
        if !(*times.last().unwrap() > 0.0) {
            return Err(Error::domain("final time must be positive"));
        }
        Ok(Self { times })
    }

    /// `t_k = T - (T - ε)·(k / M)`. Evaluating `k / M` as one division makes
    /// a coarse grid an exact subsequence of any finer grid it divides.
    pub fn uniform(t_max: f64, epsilon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if !(epsilon > 0.0 && epsilon < t_max) {
            return Err(Error::domain(format!("need 0 < epsilon < T, got epsilon={epsilon}, T={t_max}")));
        }
        let width = t_max - epsilon;
        let mut times: Vec<f64> = (0..=steps)
            .map(|k| t_max - width * (k as f64 / steps as f64))
            .collect();
        times[0] = t_max;
        times[steps] = epsilon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Every `steps / m`-th time; `m` must divide the step count.
    pub fn subsample(&self, m: usize) -> Result<Self> {
        let n = self.steps();
        if m == 0 || !n.is_multiple_of(m) {
            return Err(Error::domain(format!("{m} steps do not divide {n}")));
        }
        let stride = n / m;
        Self::new((0..=m).map(|k| self.times[k * stride]).collect())
    }
}

/// Per-step score coefficients `Φ(t_k)`, one per departing step; `Φ(t_0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CoefficientSet {
    phi: Vec<f64>,
}

impl TryFrom<Vec<f64>> for CoefficientSet {
    type Error = Error;

    fn try_from(phi: Vec<f64>) -> Result<Self> {
        CoefficientSet::new(phi)
    }
}

impl From<CoefficientSet> for Vec<f64> {
    fn from(c: CoefficientSet) -> Self {
        c.phi
    }
}

impl CoefficientSet {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::domain("coefficient set is empty"));
        }
        if phi[0] != 1.0 {
            return Err(Error::domain(format!("first coefficient must be 1, got {}", phi[0])));
        }
        if let Some(k) = phi.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::domain(format!("coefficient {k} is not finite and positive: {}", phi[k])));
        }
        Ok(Self { phi })
    }

    pub fn ones(steps: usize) -> Self {
        Self {
            phi: vec![1.0; steps.max(1)],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.phi[k]
    }
}

/// States visited by one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Sequence>,
    #[serde(skip)]
    pub scores: Option<Vec<ScoreField>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &Sequence {
        self.states.last().unwrap()
    }
}

/// Clip negative mass, then renormalize.
fn normalize_clipped(mut row: Vec<f64>, position: usize) -> Result<Vec<f64>> {
    for p in row.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateStep { position });
    }
    for p in row.iter_mut() {
        *p /= total;
    }
    Ok(row)
}

/// Euler τ-leaping row for position `i`:
/// `δ_{x^i}(v) + Δt σ(t_k) Q(v, x^i) Φ s[i][v]`, diagonal taking the
/// complement. `rate_dt` is `Δt · σ(t_k)`.
pub fn euler_transition_row(
    x: &Sequence,
    i: usize,
    rate_dt: f64,
    kind: RateMatrixKind,
    score: &ScoreField,
    phi: f64,
) -> Result<Vec<f64>> {
    if !(rate_dt >= 0.0) {
        return Err(Error::domain(format!("rate * dt must be >= 0, got {rate_dt}")));
    }
    let n = score.values.ncols();
    let cur = x.tokens()[i];
    let mut row = vec![0.0; n];
    let mut off = 0.0;
    for (v, r) in row.iter_mut().enumerate() {
        if v != cur {
            *r = rate_dt * rate_entry(kind, n, v, cur) * phi * score.get(i, v);
            off += *r;
        }
    }
    row[cur] = 1.0 - off;
    normalize_clipped(row, i)
}

/// Tweedie τ-leaping row for position `i` between cumulative noise levels
/// `sb_from > sb_to`:
/// `row[v] ∝ (exp(-Δ Q)ᵀ w)[v] · exp(Δ Q)[v, x^i]` with `Δ = sb_from - sb_to`
/// and `w` the score of position `i` with off-diagonal entries scaled by Φ.
pub fn tweedie_transition_row(
    x: &Sequence,
    i: usize,
    sb_from: f64,
    sb_to: f64,
    kind: RateMatrixKind,
    score: &ScoreField,
    phi: f64,
) -> Result<Vec<f64>> {
    let delta = sb_from - sb_to;
    if !(delta >= 0.0) {
        return Err(Error::domain(format!(
            "Tweedie step needs sb_from >= sb_to, got {sb_from} -> {sb_to}"
        )));
    }
    let n = score.values.ncols();
    let cur = x.tokens()[i];
    let w: Vec<f64> = (0..n)
        .map(|u| if u == cur { 1.0 } else { phi * score.get(i, u) })
        .collect();
    let row = (0..n)
        .map(|v| backward_entry(kind, n, delta, &w, v) * expm_entry(kind, n, delta, v, cur))
        .collect();
    normalize_clipped(row, i)
}

/// `(exp(-Δ Q)ᵀ w)[v]`. For uniform diffusion the inverse kernel has entries
/// of size `e^{nΔ}` with alternating signs, so the sum is rewritten as
/// `mean(w) + e^{nΔ} (w[v] - mean(w))` with the deviation taken from
/// pairwise differences; equal weights then give exactly `mean(w)`.
fn backward_entry(kind: RateMatrixKind, n: usize, delta: f64, w: &[f64], v: usize) -> f64 {
    match kind {
        RateMatrixKind::Uniform => {
            let nf = n as f64;
            let mean = w.iter().sum::<f64>() / nf;
            let dev = w.iter().map(|&u| w[v] - u).sum::<f64>() / nf;
            mean + (nf * delta).exp() * dev
        }
        RateMatrixKind::Absorbing => (0..n).map(|u| expm_entry(kind, n, -delta, u, v) * w[u]).sum(),
    }
}

/// Reverse sampler bound to a score model.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    pub oracle: &'a ScoreOracle,
    pub kind: SamplerKind,
}

impl<'a> Sampler<'a> {
    pub fn new(oracle: &'a ScoreOracle, kind: SamplerKind) -> Self {
        Self { oracle, kind }
    }

    fn schedule(&self) -> &NoiseSchedule {
        self.oracle.schedule()
    }

    /// Transition rows for every position of `x`, given its score at `t_k`.
    pub fn transition_rows(
        &self,
        x: &Sequence,
        score: &ScoreField,
        t_k: f64,
        t_next: f64,
        phi: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if !(t_k > t_next) {
            return Err(Error::domain(format!("step needs t_k > t_next, got {t_k} -> {t_next}")));
        }
        let kind = self.oracle.kind();
        match self.kind {
            SamplerKind::Euler => {
                let rate_dt = (t_k - t_next) * self.schedule().sigma(t_k)?;
                (0..x.len())
                    .map(|i| euler_transition_row(x, i, rate_dt, kind, score, phi))
                    .collect()
            }
            SamplerKind::Tweedie => {
                let from = self.schedule().sigma_bar(t_k)?;
                let to = self.schedule().sigma_bar(t_next)?;
                (0..x.len())
                    .map(|i| tweedie_transition_row(x, i, from, to, kind, score, phi))
                    .collect()
            }
        }
    }

    /// One factorized update; position `i` reads uniform `i` of block
    /// `step_index` in `key`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        x: &Sequence,
        score: &ScoreField,
        t_k: f64,
        t_next: f64,
        phi: f64,
        key: StreamKey,
        step_index: usize,
    ) -> Result<Sequence> {
        let rows = self.transition_rows(x, score, t_k, t_next, phi)?;
        let u = key.uniforms_at(step_index as u64, x.len());
        Ok(Sequence(
            rows.iter().zip(&u).map(|(row, &u)| categorical(row, u)).collect(),
        ))
    }

    /// Runs the sampler and calls `observe(k, state, score)` at every visited
    /// time `t_k`, `k = 0..=M`; the score at the final time is only computed
    /// when `score_final` is set.
    pub fn run_observed(
        &self,
        start: &Sequence,
        schedule: &TimeSchedule,
        coeffs: &CoefficientSet,
        key: StreamKey,
        score_final: bool,
        mut observe: impl FnMut(usize, &Sequence, Option<&ScoreField>),
    ) -> Result<Sequence> {
        let m = schedule.steps();
        if coeffs.len() != m {
            return Err(Error::Shape(format!("{} coefficients for {m} steps", coeffs.len())));
        }
        self.oracle.space().validate_sequence(start)?;
        let times = schedule.times();
        let mut x = start.clone();
        let mut prepared = self.oracle.prepare_lenient(&x)?;
        for k in 0..m {
            let score = self.oracle.score_prepared(&prepared, times[k])?;
            observe(k, &x, Some(&score));
            let next = self.step(&x, &score, times[k], times[k + 1], coeffs.get(k), key, k)?;
            if next != x {
                prepared = self.oracle.prepare_lenient(&next)?;
                x = next;
            }
        }
        if score_final {
            let score = self.oracle.score_prepared(&prepared, times[m])?;
            observe(m, &x, Some(&score));
        } else {
            observe(m, &x, None);
        }
        Ok(x)
    }

    pub fn run(
        &self,
        start: &Sequence,
        schedule: &TimeSchedule,
        coeffs: &CoefficientSet,
        key: StreamKey,
        cache_scores: bool,
    ) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(schedule.steps() + 1);
        let mut scores = cache_scores.then(Vec::new);
        self.run_observed(start, schedule, coeffs, key, cache_scores, |_, x, s| {
            states.push(x.clone());
            if let (Some(cache), Some(s)) = (scores.as_mut(), s) {
                cache.push(s.clone());
            }
        })?;
        Ok(Trajectory {
            times: schedule.times().to_vec(),
            states,
            scores,
        })
    }

    /// Terminal state only.
    pub fn sample(
        &self,
        start: &Sequence,
        schedule: &TimeSchedule,
        coeffs: &CoefficientSet,
        key: StreamKey,
    ) -> Result<Sequence> {
        self.run_observed(start, schedule, coeffs, key, false, |_, _, _| {})
    }
}
