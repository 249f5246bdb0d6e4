//! Exact concrete scores `p_t(y) / p_t(x)` for single-token substitutions,
//! computed by enumerating an explicit data distribution.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ctmc::{kernel_closed_form, NoiseSchedule, RateMatrixKind, Sequence, StateSpace};
use crate::error::{Error, Result};

/// Largest support accepted by [`DataDistribution`].
pub const MAX_SUPPORT: usize = 1 << 16;

/// Refuse score computations whose enumeration exceeds this many
/// `|support| · D · N` entries.
pub const MAX_SCORE_WORK: usize = 10_000_000;

/// Finite data distribution `p_0` over sequences of a data vocabulary
/// (mask excluded).
#[derive(Debug, Clone)]
pub struct DataDistribution {
    vocab: usize,
    seq_len: usize,
    support: Vec<Sequence>,
    probs: Vec<f64>,
    lookup: HashMap<Sequence, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionDoc {
    vocab: usize,
    seq_len: usize,
    support: Vec<Vec<usize>>,
    probs: Vec<f64>,
}

impl DataDistribution {
    pub fn new(vocab: usize, seq_len: usize, support: Vec<Sequence>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::domain("data distribution needs a nonempty support"));
        }
        if support.len() != probs.len() {
            return Err(Error::Shape(format!(
                "{} support entries but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if support.len() > MAX_SUPPORT {
            return Err(Error::domain(format!(
                "support of {} sequences exceeds the limit of {MAX_SUPPORT}",
                support.len()
            )));
        }
        if vocab < 1 || seq_len < 1 {
            return Err(Error::domain("vocab and seq_len must be positive"));
        }
        let mut lookup = HashMap::with_capacity(support.len());
        for (idx, x) in support.iter().enumerate() {
            if x.len() != seq_len {
                return Err(Error::Shape(format!("support entry {idx} has length {} != {seq_len}", x.len())));
            }
            if x.tokens().iter().any(|&v| v >= vocab) {
                return Err(Error::domain(format!("support entry {idx} has a token outside [0, {vocab})")));
            }
            if lookup.insert(x.clone(), idx).is_some() {
                return Err(Error::domain(format!("duplicate support entry {:?}", x.tokens())));
            }
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self {
            vocab,
            seq_len,
            support,
            probs,
            lookup,
        })
    }

    pub fn uniform(vocab: usize, seq_len: usize, support: Vec<Sequence>) -> Result<Self> {
        let n = support.len().max(1);
        let probs = vec![1.0 / n as f64; support.len()];
        Self::new(vocab, seq_len, support, probs)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[Sequence] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sequence, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    pub fn prob(&self, x: &Sequence) -> f64 {
        self.lookup.get(x).map_or(0.0, |&i| self.probs[i])
    }

    pub fn contains(&self, x: &Sequence) -> bool {
        self.lookup.contains_key(x)
    }

    fn is_uniform(&self) -> bool {
        let p = self.probs[0];
        self.probs.iter().all(|&q| q == p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(text)?;
        Self::new(
            doc.vocab,
            doc.seq_len,
            doc.support.into_iter().map(Sequence).collect(),
            doc.probs,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DistributionDoc {
            vocab: self.vocab,
            seq_len: self.seq_len,
            support: self.support.iter().map(|s| s.0.clone()).collect(),
            probs: self.probs.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Concrete scores of one sequence: `values[i][v] = p_t(x^{i→v}) / p_t(x)`,
/// with the self-ratio `values[i][x^i]` fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    pub values: Array2<f64>,
    pub base_state: Sequence,
    pub time: f64,
}

impl ScoreField {
    pub fn get(&self, position: usize, value: usize) -> f64 {
        self.values[[position, value]]
    }
}

fn check_work(dist: &DataDistribution, space: &StateSpace) -> Result<()> {
    let work = dist.len() * space.seq_len * space.num_states;
    if work > MAX_SCORE_WORK {
        return Err(Error::domain(format!(
            "score enumeration of {work} entries exceeds the {MAX_SCORE_WORK} guardrail"
        )));
    }
    Ok(())
}

/// Concrete scores by direct enumeration over the support. Each support
/// element contributes its per-position kernel factors once; the factor of
/// position `i` is swapped for every candidate value while the others are
/// reused through prefix/suffix products.
pub fn concrete_score(
    x: &Sequence,
    t: f64,
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    kind: RateMatrixKind,
    space: &StateSpace,
) -> Result<ScoreField> {
    space.validate_sequence(x)?;
    check_work(dist, space)?;
    let n = space.num_states;
    let d = space.seq_len;
    let kernel = kernel_closed_form(kind, schedule.sigma_bar(t)?, n)?;
    let k = &kernel.matrix;
    let xt = x.tokens();

    let mut numer = Array2::<f64>::zeros((d, n));
    let mut total = 0.0;
    let mut factors = vec![0.0; d];
    let mut prefix = vec![1.0; d + 1];
    let mut suffix = vec![1.0; d + 1];
    for (x0, p) in dist.iter() {
        let mut zeros = 0;
        for (j, (&a, &b)) in x0.tokens().iter().zip(xt).enumerate() {
            factors[j] = k[[a, b]];
            if factors[j] == 0.0 {
                zeros += 1;
            }
        }
        if zeros > 1 {
            continue;
        }
        for j in 0..d {
            prefix[j + 1] = prefix[j] * factors[j];
        }
        for j in (0..d).rev() {
            suffix[j] = suffix[j + 1] * factors[j];
        }
        total += p * prefix[d];
        for i in 0..d {
            let excl = p * prefix[i] * suffix[i + 1];
            if excl == 0.0 {
                continue;
            }
            let from = x0.tokens()[i];
            for v in 0..n {
                numer[[i, v]] += excl * k[[from, v]];
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::SingularState(xt.to_vec()));
    }
    numer /= total;
    for (i, &tok) in xt.iter().enumerate() {
        numer[[i, tok]] = 1.0;
    }
    Ok(ScoreField {
        values: numer,
        base_state: x.clone(),
        time: t,
    })
}

/// Bitset index over the support used by the absorbing fast path: for each
/// `(position, value)` the set of support elements carrying that value.
#[derive(Debug, Clone)]
struct AbsorbingIndex {
    vocab: usize,
    words: usize,
    n_support: usize,
    bits: Vec<Vec<u64>>,
    probs: Vec<f64>,
    uniform_prob: Option<f64>,
    marginals: Array2<f64>,
}

impl AbsorbingIndex {
    fn build(dist: &DataDistribution) -> Self {
        let n_support = dist.len();
        let words = n_support.div_ceil(64);
        let vocab = dist.vocab();
        let mut bits = vec![vec![0u64; words]; dist.seq_len() * vocab];
        let mut marginals = Array2::<f64>::zeros((dist.seq_len(), vocab));
        for (idx, (x0, p)) in dist.iter().enumerate() {
            for (pos, &v) in x0.tokens().iter().enumerate() {
                bits[pos * vocab + v][idx / 64] |= 1 << (idx % 64);
                marginals[[pos, v]] += p;
            }
        }
        Self {
            vocab,
            words,
            n_support,
            bits,
            probs: dist.probs().to_vec(),
            uniform_prob: dist.is_uniform().then(|| dist.probs()[0]),
            marginals,
        }
    }

    fn full(&self) -> Vec<u64> {
        let mut all = vec![u64::MAX; self.words];
        let rem = self.n_support % 64;
        if rem != 0 {
            all[self.words - 1] = (1u64 << rem) - 1;
        }
        all
    }

    fn column(&self, pos: usize, v: usize) -> &[u64] {
        &self.bits[pos * self.vocab + v]
    }

    fn weight(&self, set: &[u64]) -> f64 {
        match self.uniform_prob {
            Some(p) => set.iter().map(|w| w.count_ones() as f64).sum::<f64>() * p,
            None => {
                let mut total = 0.0;
                for (wi, &w) in set.iter().enumerate() {
                    let mut w = w;
                    while w != 0 {
                        let b = w.trailing_zeros() as usize;
                        total += self.probs[wi * 64 + b];
                        w &= w - 1;
                    }
                }
                total
            }
        }
    }

    fn weight_and(&self, a: &[u64], b: &[u64], scratch: &mut Vec<u64>) -> f64 {
        scratch.clear();
        scratch.extend(a.iter().zip(b).map(|(x, y)| x & y));
        self.weight(scratch)
    }
}

fn and_into(acc: &mut [u64], other: &[u64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a &= b;
    }
}

/// Time-independent part of the absorbing score of one state.
///
/// With `W(y)` the data mass consistent with the unmasked tokens of `y`, the
/// score factorizes as a data ratio times a function of `σ̄(t)` alone:
/// masked `i → v`: `W(x^{i→v}) / W(x) · 1/(e^{σ̄}-1)`;
/// unmasked `j → mask`: `W(x^{j→mask}) / W(x) · (e^{σ̄}-1)`;
/// unmasked `j → v`: `W(x^{j→v}) / W(x)`.
#[derive(Debug, Clone)]
pub struct AbsorbingStats {
    state: Sequence,
    mask: usize,
    base_weight: f64,
    weights: Array2<f64>,
    fallback: bool,
}

/// Score of a state, prepared once and evaluated at any time.
#[derive(Debug, Clone)]
pub enum PreparedScore {
    Absorbing(AbsorbingStats),
    Generic(Sequence),
}

impl PreparedScore {
    pub fn state(&self) -> &Sequence {
        match self {
            PreparedScore::Absorbing(s) => &s.state,
            PreparedScore::Generic(x) => x,
        }
    }

    /// True when the state has zero probability and the score was replaced
    /// by the independent-token surrogate.
    pub fn is_fallback(&self) -> bool {
        matches!(self, PreparedScore::Absorbing(s) if s.fallback)
    }
}

/// Exact score model for one data distribution and forward process; stands in
/// for a trained score network.
#[derive(Debug, Clone)]
pub struct ScoreOracle {
    dist: DataDistribution,
    schedule: NoiseSchedule,
    kind: RateMatrixKind,
    space: StateSpace,
    index: Option<AbsorbingIndex>,
}

impl ScoreOracle {
    pub fn new(dist: DataDistribution, schedule: NoiseSchedule, kind: RateMatrixKind) -> Result<Self> {
        schedule.validate()?;
        let space = StateSpace::for_kind(kind, dist.vocab(), dist.seq_len())?;
        check_work(&dist, &space)?;
        let index = (kind == RateMatrixKind::Absorbing).then(|| AbsorbingIndex::build(&dist));
        Ok(Self {
            dist,
            schedule,
            kind,
            space,
            index,
        })
    }

    pub fn dist(&self) -> &DataDistribution {
        &self.dist
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn kind(&self) -> RateMatrixKind {
        self.kind
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn score(&self, x: &Sequence, t: f64) -> Result<ScoreField> {
        let prepared = self.prepare(x)?;
        self.score_prepared(&prepared, t)
    }

    /// Brute-force enumeration path, independent of the absorbing index.
    pub fn score_enumerated(&self, x: &Sequence, t: f64) -> Result<ScoreField> {
        concrete_score(x, t, &self.dist, &self.schedule, self.kind, &self.space)
    }

    pub fn prepare(&self, x: &Sequence) -> Result<PreparedScore> {
        self.space.validate_sequence(x)?;
        match &self.index {
            Some(index) => self.prepare_absorbing(index, x).map(PreparedScore::Absorbing),
            None => Ok(PreparedScore::Generic(x.clone())),
        }
    }

    /// Like [`prepare`](Self::prepare), but a zero-probability absorbing state
    /// gets the exact score of the product of per-position data marginals
    /// instead of an error. Factorized samplers can leave the support; the
    /// surrogate lets them finish decoding.
    pub fn prepare_lenient(&self, x: &Sequence) -> Result<PreparedScore> {
        match self.prepare(x) {
            Err(Error::SingularState(_)) if self.index.is_some() => {
                let index = self.index.as_ref().unwrap();
                Ok(PreparedScore::Absorbing(self.prepare_marginal(index, x)))
            }
            other => other,
        }
    }

    fn prepare_marginal(&self, index: &AbsorbingIndex, x: &Sequence) -> AbsorbingStats {
        let (d, n) = (self.space.seq_len, self.space.num_states);
        let mask = n - 1;
        let m = &index.marginals;
        let mut weights = Array2::<f64>::zeros((d, n));
        for (i, &tok) in x.tokens().iter().enumerate() {
            if tok == mask {
                for v in 0..mask {
                    weights[[i, v]] = m[[i, v]];
                }
            } else if m[[i, tok]] > 0.0 {
                let own = m[[i, tok]];
                weights[[i, mask]] = 1.0 / own;
                for v in 0..mask {
                    weights[[i, v]] = m[[i, v]] / own;
                }
            }
        }
        AbsorbingStats {
            state: x.clone(),
            mask,
            base_weight: 1.0,
            weights,
            fallback: true,
        }
    }

    fn prepare_absorbing(&self, index: &AbsorbingIndex, x: &Sequence) -> Result<AbsorbingStats> {
        let d = self.space.seq_len;
        let n = self.space.num_states;
        let mask = n - 1;
        let toks = x.tokens();
        let unmasked: Vec<usize> = (0..d).filter(|&i| toks[i] != mask).collect();

        // prefix[k] = AND of the first k unmasked columns, suffix likewise
        let mut prefix = vec![index.full()];
        for &j in &unmasked {
            let mut next = prefix.last().unwrap().clone();
            and_into(&mut next, index.column(j, toks[j]));
            prefix.push(next);
        }
        let compat = prefix.last().unwrap();
        let base_weight = index.weight(compat);
        if !(base_weight > 0.0) {
            return Err(Error::SingularState(toks.to_vec()));
        }

        let mut weights = Array2::<f64>::zeros((d, n));
        let mut scratch = Vec::with_capacity(index.words);
        for i in 0..d {
            if toks[i] == mask {
                for v in 0..mask {
                    weights[[i, v]] = index.weight_and(compat, index.column(i, v), &mut scratch);
                }
            }
        }

        let mut suffix = index.full();
        for (k, &j) in unmasked.iter().enumerate().rev() {
            let mut excl = prefix[k].clone();
            and_into(&mut excl, &suffix);
            weights[[j, mask]] = index.weight(&excl);
            for v in 0..mask {
                if v != toks[j] {
                    weights[[j, v]] = index.weight_and(&excl, index.column(j, v), &mut scratch);
                }
            }
            and_into(&mut suffix, index.column(j, toks[j]));
        }

        Ok(AbsorbingStats {
            state: x.clone(),
            mask,
            base_weight,
            weights,
            fallback: false,
        })
    }

    pub fn score_prepared(&self, prepared: &PreparedScore, t: f64) -> Result<ScoreField> {
        match prepared {
            PreparedScore::Generic(x) => self.score_enumerated(x, t),
            PreparedScore::Absorbing(stats) => {
                let sb = self.schedule.sigma_bar(t)?;
                let toks = stats.state.tokens();
                let has_mask = toks.contains(&stats.mask);
                if sb == 0.0 && has_mask {
                    return Err(Error::SingularState(toks.to_vec()));
                }
                let em1 = sb.exp_m1();
                let (d, n) = stats.weights.dim();
                let mut values = Array2::<f64>::zeros((d, n));
                for i in 0..d {
                    for v in 0..n {
                        let w = stats.weights[[i, v]] / stats.base_weight;
                        values[[i, v]] = if v == toks[i] {
                            1.0
                        } else if toks[i] == stats.mask {
                            w / em1
                        } else if v == stats.mask {
                            w * em1
                        } else {
                            w
                        };
                    }
                }
                Ok(ScoreField {
                    values,
                    base_state: stats.state.clone(),
                    time: t,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::exact_marginal;
    use approx::assert_abs_diff_eq;

    fn two_point() -> DataDistribution {
        DataDistribution::new(2, 1, vec![Sequence(vec![0]), Sequence(vec![1])], vec![0.75, 0.25]).unwrap()
    }

    #[test]
    fn distribution_validation() {
        let s = |v: Vec<usize>| Sequence(v);
        assert!(DataDistribution::new(2, 1, vec![], vec![]).is_err());
        assert!(DataDistribution::new(2, 1, vec![s(vec![0]), s(vec![0])], vec![0.5, 0.5]).is_err());
        assert!(DataDistribution::new(2, 1, vec![s(vec![0]), s(vec![1])], vec![0.5, 0.4]).is_err());
        assert!(DataDistribution::new(2, 1, vec![s(vec![2])], vec![1.0]).is_err());
        assert!(DataDistribution::new(2, 2, vec![s(vec![1])], vec![1.0]).is_err());
    }

    #[test]
    fn json_document_loads() {
        let text = r#"{"vocab": 3, "seq_len": 2, "support": [[0, 1], [2, 2]], "probs": [0.25, 0.75]}"#;
        let dist = DataDistribution::from_json(text).unwrap();
        assert_eq!(dist.len(), 2);
        assert_eq!(dist.prob(&Sequence(vec![2, 2])), 0.75);
        let back = DataDistribution::from_json(&dist.to_json().unwrap()).unwrap();
        assert_eq!(back.support(), dist.support());
        assert!(DataDistribution::from_json(r#"{"vocab": 3}"#).is_err());
    }

    #[test]
    fn absorbing_single_token_example() {
        let sched = NoiseSchedule::Linear {
            rate: 2f64.ln(),
            t_max: 1.0,
        };
        let oracle = ScoreOracle::new(two_point(), sched, RateMatrixKind::Absorbing).unwrap();
        for s in [
            oracle.score(&Sequence(vec![2]), 1.0).unwrap(),
            oracle.score_enumerated(&Sequence(vec![2]), 1.0).unwrap(),
        ] {
            assert_abs_diff_eq!(s.get(0, 0), 0.75, epsilon = 1e-14);
            assert_abs_diff_eq!(s.get(0, 1), 0.25, epsilon = 1e-14);
            assert_eq!(s.get(0, 2), 1.0);
        }
    }

    #[test]
    fn dependent_support_breaks_factorization() {
        // {(a,a): 0.5, (b,b): 0.5}: per-token marginals are uniform, so a
        // product of independent per-token scores treats both positions alike.
        let dist = DataDistribution::new(
            2,
            2,
            vec![Sequence(vec![0, 0]), Sequence(vec![1, 1])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let sched = NoiseSchedule::linear(1.0);
        let oracle = ScoreOracle::new(dist.clone(), sched, RateMatrixKind::Absorbing).unwrap();
        let x = Sequence(vec![0, 2]);
        let joint = oracle.score(&x, 0.5).unwrap();
        let marg = DataDistribution::new(2, 1, vec![Sequence(vec![0]), Sequence(vec![1])], vec![0.5, 0.5]).unwrap();
        let single = ScoreOracle::new(marg, sched, RateMatrixKind::Absorbing).unwrap();
        let indep = single.score(&Sequence(vec![2]), 0.5).unwrap();
        // the joint score knows position 1 must copy position 0
        assert!(joint.get(1, 1) == 0.0);
        assert!(indep.get(0, 1) > 0.0);
        assert!((joint.get(1, 0) - indep.get(0, 0)).abs() > 1e-3);
    }

    #[test]
    fn singular_state_is_reported() {
        let dist = DataDistribution::new(2, 2, vec![Sequence(vec![0, 0])], vec![1.0]).unwrap();
        let oracle = ScoreOracle::new(dist, NoiseSchedule::linear(1.0), RateMatrixKind::Absorbing).unwrap();
        let x = Sequence(vec![1, 2]);
        assert!(matches!(oracle.score(&x, 0.5), Err(Error::SingularState(_))));
        assert!(matches!(oracle.score_enumerated(&x, 0.5), Err(Error::SingularState(_))));
        assert!(matches!(oracle.score(&Sequence(vec![2, 2]), 0.0), Err(Error::SingularState(_))));
    }

    #[test]
    fn lenient_preparation_uses_marginal_surrogate() {
        let dist = DataDistribution::new(
            2,
            2,
            vec![Sequence(vec![0, 0]), Sequence(vec![1, 1])],
            vec![0.25, 0.75],
        )
        .unwrap();
        let oracle = ScoreOracle::new(dist, NoiseSchedule::linear(1.0), RateMatrixKind::Absorbing).unwrap();
        let ok = oracle.prepare_lenient(&Sequence(vec![0, 2])).unwrap();
        assert!(!ok.is_fallback());
        let x = Sequence(vec![0, 1]);
        assert!(oracle.prepare(&x).is_err());
        let p = oracle.prepare_lenient(&x).unwrap();
        assert!(p.is_fallback());
        let s = oracle.score_prepared(&p, 0.5).unwrap();
        let em1 = 0.5f64.exp_m1();
        assert_abs_diff_eq!(s.get(0, 1), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.get(0, 2), 4.0 * em1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.get(1, 0), 1.0 / 3.0, epsilon = 1e-12);
        let p = oracle.prepare_lenient(&Sequence(vec![1, 0])).unwrap();
        let s = oracle.score_prepared(&p, 0.5).unwrap();
        assert_abs_diff_eq!(s.get(1, 2), em1 / 0.25, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_matches_marginal_ratios() {
        let support: Vec<Sequence> = (0..6)
            .map(|c| Sequence(vec![c % 3, (c / 3) % 3, (c * 7) % 3]))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let probs: Vec<f64> = {
            let raw: Vec<f64> = (0..support.len()).map(|i| 1.0 + i as f64).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|r| r / s).collect()
        };
        let dist = DataDistribution::new(3, 3, support, probs).unwrap();
        let sched = NoiseSchedule::default();
        for kind in [RateMatrixKind::Absorbing, RateMatrixKind::Uniform] {
            let oracle = ScoreOracle::new(dist.clone(), sched, kind).unwrap();
            let space = oracle.space().clone();
            let n = space.num_states;
            for code in 0..n.pow(3) {
                let x = Sequence(vec![code % n, (code / n) % n, code / (n * n)]);
                let px = exact_marginal(&dist, &x, 0.8, &sched, kind, &space).unwrap();
                if px == 0.0 {
                    continue;
                }
                let fast = oracle.score(&x, 0.8).unwrap();
                let slow = oracle.score_enumerated(&x, 0.8).unwrap();
                for i in 0..3 {
                    for v in 0..n {
                        let expect = if v == x.0[i] {
                            1.0
                        } else {
                            exact_marginal(&dist, &x.with_token(i, v), 0.8, &sched, kind, &space).unwrap() / px
                        };
                        let tol = 1e-12 * expect.abs().max(1.0);
                        assert!((slow.get(i, v) - expect).abs() <= tol);
                        assert!((fast.get(i, v) - expect).abs() <= tol);
                    }
                }
            }
        }
    }

    #[test]
    fn guardrail_refuses_large_work() {
        let support: Vec<Sequence> = (0..4096).map(|c| Sequence(vec![c % 64, c / 64])).collect();
        let dist = DataDistribution::uniform(64, 2, support).unwrap();
        // 4096 * 2 * 65 < 1e7 passes
        assert!(ScoreOracle::new(dist, NoiseSchedule::default(), RateMatrixKind::Absorbing).is_ok());
        let support: Vec<Sequence> = (0..60_000).map(|c| Sequence(vec![c % 250, c / 250])).collect();
        let dist = DataDistribution::uniform(250, 2, support).unwrap();
        assert!(ScoreOracle::new(dist, NoiseSchedule::default(), RateMatrixKind::Uniform).is_err());
    }
}
