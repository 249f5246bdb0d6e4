//! Forward continuous-time Markov chain: state space, noise schedules, rate
//! matrices and transition kernels.
//!
//! Rate matrices act on row vectors: `P(τ) = exp(τ Q)` and `P[x][y]` is the
//! probability of moving from `x` to `y`. The mask state of absorbing
//! diffusion is always the last index.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{categorical, StreamKey};
use crate::score::DataDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMatrixKind {
    Uniform,
    Absorbing,
}

impl RateMatrixKind {
    pub fn name(self) -> &'static str {
        match self {
            RateMatrixKind::Uniform => "uniform",
            RateMatrixKind::Absorbing => "absorbing",
        }
    }
}

/// Token alphabet and sequence length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub num_states: usize,
    pub mask_index: Option<usize>,
    pub seq_len: usize,
}

impl StateSpace {
    pub fn new(num_states: usize, mask_index: Option<usize>, seq_len: usize) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::domain(format!("num_states must be >= 2, got {num_states}")));
        }
        if seq_len == 0 {
            return Err(Error::domain("seq_len must be >= 1"));
        }
        if let Some(m) = mask_index {
            if m >= num_states {
                return Err(Error::domain(format!("mask index {m} out of range for {num_states} states")));
            }
        }
        Ok(Self {
            num_states,
            mask_index,
            seq_len,
        })
    }

    /// Space for a data vocabulary of `vocab` values; absorbing diffusion
    /// appends the mask as state `vocab`.
    pub fn for_kind(kind: RateMatrixKind, vocab: usize, seq_len: usize) -> Result<Self> {
        match kind {
            RateMatrixKind::Uniform => Self::new(vocab, None, seq_len),
            RateMatrixKind::Absorbing => Self::new(vocab + 1, Some(vocab), seq_len),
        }
    }

    /// Number of data (non-mask) values.
    pub fn vocab(&self) -> usize {
        match self.mask_index {
            Some(_) => self.num_states - 1,
            None => self.num_states,
        }
    }

    pub fn validate_sequence(&self, x: &Sequence) -> Result<()> {
        if x.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} != seq_len {}",
                x.len(),
                self.seq_len
            )));
        }
        if let Some(&bad) = x.tokens().iter().find(|&&v| v >= self.num_states) {
            return Err(Error::domain(format!(
                "token {bad} out of range for {} states",
                self.num_states
            )));
        }
        Ok(())
    }
}

/// A token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<usize>);

impl Sequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with position `i` replaced by `v`.
    pub fn with_token(&self, i: usize, v: usize) -> Self {
        let mut out = self.clone();
        out.0[i] = v;
        out
    }

    pub fn hamming(&self, other: &Sequence) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl From<Vec<usize>> for Sequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Noise schedule `σ(t)` with closed-form integral `σ̄(t) = ∫₀ᵗ σ(s) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSchedule {
    /// `σ(t) = rate`, so `σ̄(t) = rate · t`.
    Linear { rate: f64, t_max: f64 },
    /// `σ̄(t) = σ_min^{1-u} σ_max^{u} - σ_min` with `u = t / t_max`; the
    /// offset pins `σ̄(0) = 0`.
    Geometric {
        sigma_min: f64,
        sigma_max: f64,
        t_max: f64,
    },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Geometric {
            sigma_min: 1e-4,
            sigma_max: 20.0,
            t_max: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn linear(rate: f64) -> Self {
        NoiseSchedule::Linear { rate, t_max: 1.0 }
    }

    pub fn t_max(&self) -> f64 {
        match *self {
            NoiseSchedule::Linear { t_max, .. } | NoiseSchedule::Geometric { t_max, .. } => t_max,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            NoiseSchedule::Linear { rate, .. } => format!("linear(rate={rate})"),
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
                ..
            } => format!("geometric(sigma_min={sigma_min},sigma_max={sigma_max})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t_max = self.t_max();
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::domain(format!("t_max must be positive, got {t_max}")));
        }
        match *self {
            NoiseSchedule::Linear { rate, .. } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::domain(format!("linear rate must be positive, got {rate}")));
                }
            }
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
                ..
            } => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
                    return Err(Error::domain(format!(
                        "geometric schedule needs 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max()).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.t_max())));
        }
        Ok(())
    }

    pub fn sigma_bar(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match *self {
            NoiseSchedule::Linear { rate, .. } => rate * t,
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
                t_max,
            } => {
                let u = t / t_max;
                sigma_min.powf(1.0 - u) * sigma_max.powf(u) - sigma_min
            }
        })
    }

    /// Instantaneous rate `σ(t) = dσ̄/dt`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match *self {
            NoiseSchedule::Linear { rate, .. } => rate,
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
                t_max,
            } => {
                let u = t / t_max;
                sigma_min.powf(1.0 - u) * sigma_max.powf(u) * (sigma_max / sigma_min).ln() / t_max
            }
        })
    }
}

/// Row-stochastic matrix `exp(Δσ̄ Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    pub matrix: Array2<f64>,
    pub source_sigma_bar: f64,
    pub target_sigma_bar: f64,
}

impl TransitionKernel {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.target_sigma_bar - self.source_sigma_bar
    }

    pub fn row(&self, from: usize) -> Vec<f64> {
        self.matrix.row(from).to_vec()
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Base rate matrix `Q^uniform` or `Q^absorb`.
pub fn rate_matrix(kind: RateMatrixKind, n: usize) -> Result<Array2<f64>> {
    if n < 2 {
        return Err(Error::domain(format!("rate matrix needs N >= 2, got {n}")));
    }
    let mut q = Array2::<f64>::zeros((n, n));
    match kind {
        RateMatrixKind::Uniform => {
            q.fill(1.0);
            for i in 0..n {
                q[[i, i]] = 1.0 - n as f64;
            }
        }
        RateMatrixKind::Absorbing => {
            for i in 0..n - 1 {
                q[[i, i]] = -1.0;
                q[[i, n - 1]] = 1.0;
            }
        }
    }
    Ok(q)
}

/// Single rate `Q(from, to)` without building the matrix.
pub fn rate_entry(kind: RateMatrixKind, n: usize, from: usize, to: usize) -> f64 {
    match kind {
        RateMatrixKind::Uniform => {
            if from == to {
                1.0 - n as f64
            } else {
                1.0
            }
        }
        RateMatrixKind::Absorbing => {
            let mask = n - 1;
            if from == mask {
                0.0
            } else if to == from {
                -1.0
            } else if to == mask {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Entry `(from, to)` of `exp(a Q)` for any real `a`; negative `a` gives the
/// (non-stochastic) inverse kernels used by Tweedie updates.
pub fn expm_entry(kind: RateMatrixKind, n: usize, a: f64, from: usize, to: usize) -> f64 {
    match kind {
        RateMatrixKind::Uniform => {
            let decay = (-(n as f64) * a).exp();
            let off = (1.0 - decay) / n as f64;
            if from == to {
                decay + off
            } else {
                off
            }
        }
        RateMatrixKind::Absorbing => {
            let mask = n - 1;
            if from == mask {
                if to == mask {
                    1.0
                } else {
                    0.0
                }
            } else if to == from {
                (-a).exp()
            } else if to == mask {
                -(-a).exp_m1()
            } else {
                0.0
            }
        }
    }
}

/// Dense `exp(a Q)` from the closed form.
pub fn expm_closed_form(kind: RateMatrixKind, n: usize, a: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| expm_entry(kind, n, a, i, j))
}

/// `exp(Δσ̄ Q)` in closed form.
pub fn kernel_closed_form(kind: RateMatrixKind, delta_sigma_bar: f64, n: usize) -> Result<TransitionKernel> {
    if n < 2 {
        return Err(Error::domain(format!("kernel needs N >= 2, got {n}")));
    }
    if !(delta_sigma_bar >= 0.0) || !delta_sigma_bar.is_finite() {
        return Err(Error::domain(format!(
            "delta sigma_bar must be finite and >= 0, got {delta_sigma_bar}"
        )));
    }
    Ok(TransitionKernel {
        matrix: expm_closed_form(kind, n, delta_sigma_bar),
        source_sigma_bar: 0.0,
        target_sigma_bar: delta_sigma_bar,
    })
}

/// Checks that `q` is square, has nonnegative off-diagonal entries and rows
/// summing to zero.
pub fn validate_rate_matrix(q: &Array2<f64>) -> Result<()> {
    let n = q.nrows();
    if q.ncols() != n || n == 0 {
        return Err(Error::Shape(format!("rate matrix must be square, got {:?}", q.dim())));
    }
    let scale = q.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for (i, row) in q.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("rate matrix has non-finite entries"));
        }
        if row.iter().enumerate().any(|(j, &v)| j != i && v < 0.0) {
            return Err(Error::domain(format!("negative off-diagonal rate in row {i}")));
        }
        if row.sum().abs() > 1e-12 * scale * n as f64 {
            return Err(Error::domain(format!("row {i} of rate matrix does not sum to zero")));
        }
    }
    Ok(())
}

/// `exp(τ Q)` for an arbitrary conservative `Q` by scaling and squaring a
/// truncated Taylor series. Used to cross-check the closed forms.
pub fn kernel_generic(q: &Array2<f64>, tau: f64) -> Result<TransitionKernel> {
    validate_rate_matrix(q)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau must be finite and >= 0, got {tau}")));
    }
    let n = q.nrows();
    let a = q * tau;
    let norm = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = &a / 2f64.powi(squarings);

    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=24 {
        term = term.dot(&b) / k as f64;
        result += &term;
        if term.iter().all(|v| v.abs() < 1e-18) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(TransitionKernel {
        matrix: result,
        source_sigma_bar: 0.0,
        target_sigma_bar: tau,
    })
}

/// Draw from the stationary prior: all-mask for absorbing diffusion, i.i.d.
/// uniform tokens for uniform diffusion.
pub fn sample_prior(kind: RateMatrixKind, space: &StateSpace, key: StreamKey) -> Result<Sequence> {
    match kind {
        RateMatrixKind::Absorbing => {
            let mask = space
                .mask_index
                .ok_or_else(|| Error::domain("absorbing prior needs a mask state"))?;
            Ok(Sequence(vec![mask; space.seq_len]))
        }
        RateMatrixKind::Uniform => {
            let u = key.uniforms_at(0, space.seq_len);
            Ok(Sequence(
                u.iter()
                    .map(|&u| ((u * space.num_states as f64) as usize).min(space.num_states - 1))
                    .collect(),
            ))
        }
    }
}

/// Noise a clean sequence to time `t` in one shot, token by token.
pub fn forward_sample(
    x0: &Sequence,
    t: f64,
    schedule: &NoiseSchedule,
    kind: RateMatrixKind,
    space: &StateSpace,
    key: StreamKey,
) -> Result<Sequence> {
    space.validate_sequence(x0)?;
    if kind == RateMatrixKind::Absorbing && space.mask_index != Some(space.num_states - 1) {
        return Err(Error::domain("absorbing diffusion needs the mask as last state"));
    }
    let kernel = kernel_closed_form(kind, schedule.sigma_bar(t)?, space.num_states)?;
    let u = key.uniforms_at(0, space.seq_len);
    let tokens = x0
        .tokens()
        .iter()
        .zip(&u)
        .map(|(&tok, &u)| categorical(kernel.matrix.row(tok).as_slice().unwrap(), u))
        .collect();
    Ok(Sequence(tokens))
}

/// `p_t(x) = Σ_{x0} p0(x0) Π_i P_{t|0}(x0^i, x^i)` by enumeration.
pub fn exact_marginal(
    dist: &DataDistribution,
    x: &Sequence,
    t: f64,
    schedule: &NoiseSchedule,
    kind: RateMatrixKind,
    space: &StateSpace,
) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::domain("data distribution has empty support"));
    }
    space.validate_sequence(x)?;
    let kernel = kernel_closed_form(kind, schedule.sigma_bar(t)?, space.num_states)?;
    let k = &kernel.matrix;
    Ok(dist
        .iter()
        .map(|(x0, p)| {
            p * x0
                .tokens()
                .iter()
                .zip(x.tokens())
                .map(|(&a, &b)| k[[a, b]])
                .product::<f64>()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Composite Simpson quadrature of σ over [0, t]; independent of the
    /// closed-form integral.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
        let h = (b - a) / intervals as f64;
        let mut s = f(a) + f(b);
        for i in 1..intervals {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn linear_sigma_bar_examples() {
        let s = NoiseSchedule::linear(1.0);
        assert_eq!(s.sigma_bar(0.0).unwrap(), 0.0);
        assert_eq!(s.sigma_bar(0.5).unwrap(), 0.5);
        assert!(s.sigma_bar(1.5).is_err());
        assert!(s.sigma_bar(-0.1).is_err());
    }

    #[test]
    fn geometric_sigma_bar_matches_quadrature() {
        let s = NoiseSchedule::default();
        assert_eq!(s.sigma_bar(0.0).unwrap(), 0.0);
        for &t in &[0.05, 0.3, 0.5, 0.77, 0.93, 1.0] {
            let quad = simpson(|u| s.sigma(u).unwrap(), 0.0, t, 20_000);
            assert_abs_diff_eq!(s.sigma_bar(t).unwrap(), quad, epsilon = 1e-8);
        }
    }

    #[test]
    fn sigma_bar_is_monotone() {
        for s in [NoiseSchedule::default(), NoiseSchedule::linear(3.0)] {
            let mut prev = -1.0;
            for i in 0..=1000 {
                let v = s.sigma_bar(i as f64 / 1000.0).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn rate_matrix_examples() {
        let u = rate_matrix(RateMatrixKind::Uniform, 2).unwrap();
        assert_eq!(u, ndarray::array![[-1.0, 1.0], [1.0, -1.0]]);
        let a = rate_matrix(RateMatrixKind::Absorbing, 2).unwrap();
        assert_eq!(a, ndarray::array![[-1.0, 1.0], [0.0, 0.0]]);
        for kind in [RateMatrixKind::Uniform, RateMatrixKind::Absorbing] {
            for n in 2..9 {
                let q = rate_matrix(kind, n).unwrap();
                validate_rate_matrix(&q).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(q[[i, j]], rate_entry(kind, n, i, j));
                    }
                }
            }
        }
        assert!(rate_matrix(RateMatrixKind::Uniform, 1).is_err());
    }

    #[test]
    fn closed_form_kernel_examples() {
        for kind in [RateMatrixKind::Uniform, RateMatrixKind::Absorbing] {
            let k = kernel_closed_form(kind, 0.0, 5).unwrap();
            assert_eq!(k.matrix, Array2::<f64>::eye(5));
        }
        let ln2 = 2f64.ln();
        let k = kernel_closed_form(RateMatrixKind::Absorbing, ln2, 3).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(k.matrix[[i, i]], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(k.matrix[[i, 1 - i]], 0.0);
            assert_abs_diff_eq!(k.matrix[[i, 2]], 0.5, epsilon = 1e-15);
        }
        let k = kernel_closed_form(RateMatrixKind::Uniform, ln2, 2).unwrap();
        assert_abs_diff_eq!(k.matrix[[0, 0]], 0.625, epsilon = 1e-15);
        assert!(kernel_closed_form(RateMatrixKind::Uniform, -0.1, 2).is_err());
    }

    #[test]
    fn uniform_n2_ln2_kernel_matches_series() {
        // exp(τQ) for Q = [[-1,1],[1,-1]] has diagonal (1 + e^{-2τ})/2.
        let ln2 = 2f64.ln();
        let q = rate_matrix(RateMatrixKind::Uniform, 2).unwrap();
        let series = kernel_generic(&q, ln2).unwrap();
        assert_abs_diff_eq!(series.matrix[[0, 0]], 0.625, epsilon = 1e-14);
        assert_abs_diff_eq!(series.matrix[[0, 1]], 0.375, epsilon = 1e-14);
    }

    #[test]
    fn generic_kernel_agrees_with_closed_form() {
        let q = rate_matrix(RateMatrixKind::Uniform, 4).unwrap();
        for &tau in &[0.1, 1.0, 5.0] {
            let g = kernel_generic(&q, tau).unwrap();
            let c = kernel_closed_form(RateMatrixKind::Uniform, tau, 4).unwrap();
            assert!(max_abs_diff(&g.matrix, &c.matrix) < 1e-10);
            assert!(g.max_row_defect() < 1e-10);
        }
        assert_eq!(kernel_generic(&q, 0.0).unwrap().matrix, Array2::<f64>::eye(4));
    }

    #[test]
    fn generic_kernel_rejects_non_conservative() {
        let q = ndarray::array![[-1.0, 0.5], [0.0, 0.0]];
        assert!(kernel_generic(&q, 1.0).is_err());
        let q = ndarray::array![[1.0, -1.0], [0.0, 0.0]];
        assert!(kernel_generic(&q, 1.0).is_err());
    }

    #[test]
    fn semigroup_property() {
        for kind in [RateMatrixKind::Uniform, RateMatrixKind::Absorbing] {
            let q = rate_matrix(kind, 5).unwrap();
            let a = kernel_generic(&q, 0.3).unwrap().matrix;
            let b = kernel_generic(&q, 1.1).unwrap().matrix;
            let ab = kernel_generic(&q, 1.4).unwrap().matrix;
            assert!(max_abs_diff(&a.dot(&b), &ab) < 1e-9);
            let a = kernel_closed_form(kind, 0.3, 5).unwrap().matrix;
            let b = kernel_closed_form(kind, 1.1, 5).unwrap().matrix;
            let ab = kernel_closed_form(kind, 1.4, 5).unwrap().matrix;
            assert!(max_abs_diff(&a.dot(&b), &ab) < 1e-10);
        }
    }

    #[test]
    fn negative_argument_inverts_kernel() {
        for kind in [RateMatrixKind::Uniform, RateMatrixKind::Absorbing] {
            let fwd = expm_closed_form(kind, 4, 0.7);
            let inv = expm_closed_form(kind, 4, -0.7);
            assert!(max_abs_diff(&fwd.dot(&inv), &Array2::<f64>::eye(4)) < 1e-12);
        }
    }

    #[test]
    fn prior_draws() {
        let space = StateSpace::for_kind(RateMatrixKind::Absorbing, 3, 4).unwrap();
        let key = StreamKey::new(0, crate::rng::Purpose::Prior, &[0]);
        assert_eq!(
            sample_prior(RateMatrixKind::Absorbing, &space, key).unwrap(),
            Sequence(vec![3; 4])
        );
        let no_mask = StateSpace::new(3, None, 4).unwrap();
        assert!(sample_prior(RateMatrixKind::Absorbing, &no_mask, key).is_err());

        let space = StateSpace::new(2, None, 1).unwrap();
        let n = 100_000;
        let ones: usize = (0..n)
            .map(|i| {
                let key = StreamKey::new(3, crate::rng::Purpose::Prior, &[i]);
                sample_prior(RateMatrixKind::Uniform, &space, key).unwrap().0[0]
            })
            .sum();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn forward_sample_behaviour() {
        let space = StateSpace::for_kind(RateMatrixKind::Absorbing, 2, 3).unwrap();
        let x0 = Sequence(vec![0, 1, 1]);
        let key = StreamKey::new(1, crate::rng::Purpose::Forward, &[0]);
        let lin = NoiseSchedule::linear(1.0);
        assert_eq!(
            forward_sample(&x0, 0.0, &lin, RateMatrixKind::Absorbing, &space, key).unwrap(),
            x0
        );
        let hot = NoiseSchedule::linear(60.0);
        assert_eq!(
            forward_sample(&x0, 1.0, &hot, RateMatrixKind::Absorbing, &space, key).unwrap(),
            Sequence(vec![2; 3])
        );

        let space = StateSpace::for_kind(RateMatrixKind::Absorbing, 2, 1).unwrap();
        let sched = NoiseSchedule::Linear {
            rate: 2f64.ln(),
            t_max: 1.0,
        };
        let n = 10_000;
        let masked = (0..n)
            .filter(|&i| {
                let key = StreamKey::new(9, crate::rng::Purpose::Forward, &[i]);
                forward_sample(&Sequence(vec![0]), 1.0, &sched, RateMatrixKind::Absorbing, &space, key)
                    .unwrap()
                    .0[0]
                    == 2
            })
            .count();
        let p = masked as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.01, "masked fraction {p}");
    }

    #[test]
    fn marginal_examples() {
        let space = StateSpace::for_kind(RateMatrixKind::Absorbing, 2, 1).unwrap();
        let dist = DataDistribution::new(
            2,
            1,
            vec![Sequence(vec![0]), Sequence(vec![1])],
            vec![0.75, 0.25],
        )
        .unwrap();
        let lin = NoiseSchedule::linear(2f64.ln());
        let kind = RateMatrixKind::Absorbing;
        let pm = exact_marginal(&dist, &Sequence(vec![2]), 1.0, &lin, kind, &space).unwrap();
        assert_abs_diff_eq!(pm, 0.5, epsilon = 1e-15);
        let p0 = exact_marginal(&dist, &Sequence(vec![0]), 0.0, &lin, kind, &space).unwrap();
        assert_eq!(p0, 0.75);
        let pm0 = exact_marginal(&dist, &Sequence(vec![2]), 0.0, &lin, kind, &space).unwrap();
        assert_eq!(pm0, 0.0);
    }

    #[test]
    fn marginals_sum_to_one() {
        let space = StateSpace::for_kind(RateMatrixKind::Absorbing, 2, 2).unwrap();
        let dist = DataDistribution::new(
            2,
            2,
            vec![Sequence(vec![0, 0]), Sequence(vec![1, 1]), Sequence(vec![0, 1])],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap();
        let sched = NoiseSchedule::default();
        for kind in [RateMatrixKind::Absorbing, RateMatrixKind::Uniform] {
            let space = if kind == RateMatrixKind::Uniform {
                StateSpace::new(2, None, 2).unwrap()
            } else {
                space.clone()
            };
            let n = space.num_states;
            let total: f64 = (0..n * n)
                .map(|c| {
                    let x = Sequence(vec![c / n, c % n]);
                    exact_marginal(&dist, &x, 0.8, &sched, kind, &space).unwrap()
                })
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }
}
