//! Countdown rule task and distribution metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ctmc::Sequence;
use crate::error::{Error, Result};
use crate::score::{DataDistribution, MAX_SUPPORT};

/// Default cap on the countdown support size.
pub const COUNTDOWN_LIMIT: usize = 4096;

/// Where zero tokens may appear.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPlacement {
    /// Zeros are padding anywhere; the non-zero tokens, read in order, count
    /// down by one.
    #[default]
    Anywhere,
    /// Zeros may only form a suffix.
    SuffixOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountdownSpec {
    pub seq_len: usize,
    pub vocab: usize,
    #[serde(default)]
    pub zeros: ZeroPlacement,
}

impl CountdownSpec {
    pub fn new(seq_len: usize, vocab: usize) -> Result<Self> {
        let spec = Self {
            seq_len,
            vocab,
            zeros: ZeroPlacement::Anywhere,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_zeros(self, zeros: ZeroPlacement) -> Self {
        Self { zeros, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 || self.vocab < 2 {
            return Err(Error::domain(format!(
                "countdown needs seq_len >= 2 and vocab >= 2, got {} and {}",
                self.seq_len, self.vocab
            )));
        }
        Ok(())
    }
}

/// Rule check. Tokens outside `0..vocab`, the mask included, fail.
pub fn check_countdown(x: &Sequence, spec: &CountdownSpec) -> bool {
    let toks = x.tokens();
    if toks.len() != spec.seq_len || toks.iter().any(|&v| v >= spec.vocab) {
        return false;
    }
    if spec.zeros == ZeroPlacement::SuffixOnly {
        if let Some(first_zero) = toks.iter().position(|&v| v == 0) {
            if toks[first_zero..].iter().any(|&v| v != 0) {
                return false;
            }
        }
    }
    let mut prev: Option<usize> = None;
    for &v in toks.iter().filter(|&&v| v != 0) {
        if let Some(p) = prev {
            if p != v + 1 {
                return false;
            }
        }
        prev = Some(v);
    }
    true
}

/// Every valid sequence, in lexicographic order. Built from the rule's
/// structure (a run `s, s-1, …` spread over chosen positions) rather than by
/// scanning all `V^D` sequences; each candidate is still passed through
/// [`check_countdown`].
pub fn countdown_support(spec: &CountdownSpec, limit: usize) -> Result<Vec<Sequence>> {
    spec.validate()?;
    let (d, v) = (spec.seq_len, spec.vocab);
    let count = countdown_count(spec);
    if count > limit as u128 {
        return Err(Error::domain(format!(
            "countdown D={d}, V={v} has {count} valid sequences, above the limit of {limit}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    out.push(Sequence(vec![0; d]));
    let mut positions = Vec::with_capacity(d);
    for len in 1..v.min(d + 1) {
        match spec.zeros {
            ZeroPlacement::Anywhere => for_each_subset(d, len, &mut positions, &mut |pos| {
                push_runs(pos, d, v, &mut out)
            }),
            ZeroPlacement::SuffixOnly => {
                let pos: Vec<usize> = (0..len).collect();
                push_runs(&pos, d, v, &mut out);
            }
        }
    }
    debug_assert!(out.iter().all(|x| check_countdown(x, spec)));
    if let Some(bad) = out.iter().find(|x| !check_countdown(x, spec)) {
        return Err(Error::domain(format!("generated invalid countdown {:?}", bad.tokens())));
    }
    out.sort();
    Ok(out)
}

fn push_runs(positions: &[usize], d: usize, v: usize, out: &mut Vec<Sequence>) {
    let len = positions.len();
    for start in len..v {
        let mut toks = vec![0; d];
        for (j, &p) in positions.iter().enumerate() {
            toks[p] = start - j;
        }
        out.push(Sequence(toks));
    }
}

fn for_each_subset(n: usize, k: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if buf.len() == k {
            f(buf);
            return;
        }
        for i in start..=n - (k - buf.len()) {
            buf.push(i);
            rec(i + 1, n, k, buf, f);
            buf.pop();
        }
    }
    buf.clear();
    rec(0, n, k, buf, f);
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of valid sequences.
pub fn countdown_count(spec: &CountdownSpec) -> u128 {
    let (d, v) = (spec.seq_len, spec.vocab);
    1 + (1..v.min(d + 1))
        .map(|len| {
            let placements = match spec.zeros {
                ZeroPlacement::Anywhere => binomial(d, len),
                ZeroPlacement::SuffixOnly => 1,
            };
            placements * (v - len) as u128
        })
        .sum::<u128>()
}

/// Uniform distribution over the valid sequences, capped at
/// [`COUNTDOWN_LIMIT`] support entries.
pub fn countdown_distribution(spec: &CountdownSpec) -> Result<DataDistribution> {
    countdown_distribution_with_limit(spec, COUNTDOWN_LIMIT)
}

/// As [`countdown_distribution`] with a caller-chosen cap (at most
/// [`MAX_SUPPORT`]).
pub fn countdown_distribution_with_limit(spec: &CountdownSpec, limit: usize) -> Result<DataDistribution> {
    let support = countdown_support(spec, limit.min(MAX_SUPPORT))?;
    DataDistribution::uniform(spec.vocab, spec.seq_len, support)
}

pub fn error_rate(samples: &[Sequence], spec: &CountdownSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("error rate of an empty sample"));
    }
    let bad = samples.iter().filter(|x| !check_countdown(x, spec)).count();
    Ok(bad as f64 / samples.len() as f64)
}

/// Empirical frequencies.
pub fn empirical(samples: &[Sequence]) -> HashMap<Sequence, f64> {
    let mut counts: HashMap<Sequence, f64> = HashMap::new();
    for x in samples {
        *counts.entry(x.clone()).or_default() += 1.0;
    }
    let n = samples.len() as f64;
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

/// `½ Σ |p(x) - q(x)|` over the union of both supports. Terms are summed in
/// sorted key order so the result does not depend on hash iteration.
pub fn tv_between(p: &HashMap<Sequence, f64>, q: &HashMap<Sequence, f64>) -> f64 {
    let keys: BTreeMap<&Sequence, ()> = p.keys().chain(q.keys()).map(|k| (k, ())).collect();
    let total: f64 = keys
        .keys()
        .map(|k| (p.get(*k).copied().unwrap_or(0.0) - q.get(*k).copied().unwrap_or(0.0)).abs())
        .sum();
    (0.5 * total).clamp(0.0, 1.0)
}

fn dist_map(dist: &DataDistribution) -> HashMap<Sequence, f64> {
    dist.iter().map(|(x, p)| (x.clone(), p)).collect()
}

/// Total variation between the empirical law of `samples` and `dist`;
/// samples outside the support, masked ones included, count as
/// out-of-support mass.
pub fn tv_distance(samples: &[Sequence], dist: &DataDistribution) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("total variation of an empty sample"));
    }
    Ok(tv_between(&empirical(samples), &dist_map(dist)))
}

/// `KL(p0 ‖ p̂)` with add-α smoothing of the empirical law over the support
/// plus one bucket pooling everything outside it.
pub fn smoothed_kl(samples: &[Sequence], dist: &DataDistribution, alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("KL of an empty sample"));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("smoothing alpha must be positive, got {alpha}")));
    }
    let mut counts: HashMap<&Sequence, f64> = HashMap::new();
    for x in samples {
        if dist.contains(x) {
            *counts.entry(x).or_default() += 1.0;
        }
    }
    let buckets = (dist.len() + 1) as f64;
    let denom = samples.len() as f64 + alpha * buckets;
    Ok(dist
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(x, p)| {
            let q = (counts.get(x).copied().unwrap_or(0.0) + alpha) / denom;
            p * (p / q).ln()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{categorical, Purpose, StreamKey};

    fn seq(v: &[usize]) -> Sequence {
        Sequence(v.to_vec())
    }

    /// Second checker: walks the sequence with an explicit expected value.
    fn countdown_alt(toks: &[usize], vocab: usize, suffix_only: bool) -> bool {
        let mut expect: Option<usize> = None;
        let mut seen_zero = false;
        for &t in toks {
            if t >= vocab {
                return false;
            }
            if t == 0 {
                seen_zero = true;
                continue;
            }
            if suffix_only && seen_zero {
                return false;
            }
            match expect {
                Some(e) if e != t => return false,
                _ => expect = t.checked_sub(1),
            }
            if expect == Some(0) {
                expect = Some(usize::MAX);
            }
        }
        true
    }

    fn all_sequences(d: usize, v: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..v.pow(d as u32)).map(move |mut c| {
            (0..d)
                .map(|_| {
                    let t = c % v;
                    c /= v;
                    t
                })
                .collect()
        })
    }

    #[test]
    fn rule_examples() {
        let spec = CountdownSpec::new(5, 6).unwrap();
        assert!(check_countdown(&seq(&[5, 4, 3, 0, 0]), &spec));
        assert!(!check_countdown(&seq(&[5, 3, 2, 0, 0]), &spec));
        assert!(check_countdown(&seq(&[0, 0, 0, 0, 0]), &spec));
        assert!(check_countdown(&seq(&[0, 3, 0, 2, 1]), &spec));
        assert!(!check_countdown(&seq(&[0, 3, 0, 2, 1]), &spec.with_zeros(ZeroPlacement::SuffixOnly)));
        assert!(!check_countdown(&seq(&[2, 1, 6, 0, 0]), &spec));
    }

    #[test]
    fn checkers_agree_exhaustively() {
        for zeros in [ZeroPlacement::Anywhere, ZeroPlacement::SuffixOnly] {
            let spec = CountdownSpec::new(4, 4).unwrap().with_zeros(zeros);
            for toks in all_sequences(4, 5) {
                assert_eq!(
                    check_countdown(&Sequence(toks.clone()), &spec),
                    countdown_alt(&toks, 4, zeros == ZeroPlacement::SuffixOnly),
                    "{toks:?}"
                );
            }
        }
    }

    #[test]
    fn support_matches_brute_force() {
        for (d, v) in [(2, 3), (4, 4), (6, 4), (5, 6)] {
            for zeros in [ZeroPlacement::Anywhere, ZeroPlacement::SuffixOnly] {
                let spec = CountdownSpec::new(d, v).unwrap().with_zeros(zeros);
                let brute: Vec<Sequence> = all_sequences(d, v)
                    .map(Sequence)
                    .filter(|x| check_countdown(x, &spec))
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                assert_eq!(countdown_support(&spec, MAX_SUPPORT).unwrap(), brute);
                assert_eq!(countdown_count(&spec), brute.len() as u128);
            }
        }
        let spec = CountdownSpec::new(2, 3).unwrap();
        let support = countdown_support(&spec, 100).unwrap();
        for x in [[0, 0], [2, 1], [1, 0], [2, 0], [0, 2], [0, 1]] {
            assert!(support.contains(&seq(&x)));
        }
        assert_eq!(support.len(), 6);
    }

    #[test]
    fn desk_scale_sizes() {
        assert_eq!(countdown_count(&CountdownSpec::new(6, 4).unwrap()), 69);
        let big = CountdownSpec::new(16, 8).unwrap();
        assert_eq!(countdown_count(&big), 51_473);
        assert!(countdown_distribution(&big).is_err());
        let dist = countdown_distribution_with_limit(&big, MAX_SUPPORT).unwrap();
        assert_eq!(dist.len(), 51_473);
        assert_eq!(error_rate(dist.support(), &big).unwrap(), 0.0);
        let p = dist.probs()[0];
        assert!(dist.probs().iter().all(|&q| q == p));
    }

    #[test]
    fn error_rate_counts() {
        let spec = CountdownSpec::new(3, 4).unwrap();
        let good = seq(&[3, 2, 1]);
        let bad = seq(&[3, 1, 0]);
        let masked = seq(&[4, 2, 1]);
        assert_eq!(error_rate(&[good.clone(), good.clone()], &spec).unwrap(), 0.0);
        assert_eq!(error_rate(&[bad.clone(), masked], &spec).unwrap(), 1.0);
        assert_eq!(error_rate(&[good.clone(), good.clone(), good, bad], &spec).unwrap(), 0.25);
        assert!(error_rate(&[], &spec).is_err());
    }

    #[test]
    fn tv_examples() {
        let two = DataDistribution::uniform(2, 1, vec![seq(&[0]), seq(&[1])]).unwrap();
        assert_eq!(tv_distance(&vec![seq(&[0]); 10], &two).unwrap(), 0.5);
        let other = DataDistribution::uniform(3, 1, vec![seq(&[2])]).unwrap();
        assert_eq!(tv_distance(&[seq(&[0]), seq(&[1])], &other).unwrap(), 1.0);
        assert!(tv_distance(&[], &two).is_err());

        let p = dist_map(&two);
        let q: HashMap<Sequence, f64> = [(seq(&[0]), 0.8), (seq(&[2]), 0.2)].into_iter().collect();
        assert_eq!(tv_between(&p, &q), tv_between(&q, &p));
    }

    #[test]
    fn iid_samples_have_small_tv_and_kl() {
        let support: Vec<Sequence> = (0..5).map(|v| seq(&[v])).collect();
        let dist = DataDistribution::new(5, 1, support.clone(), vec![0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
        let samples: Vec<Sequence> = (0..10_000u64)
            .map(|i| {
                let u = StreamKey::new(4, Purpose::Eval, &[i]).uniforms_at(0, 1)[0];
                support[categorical(dist.probs(), u)].clone()
            })
            .collect();
        assert!(tv_distance(&samples, &dist).unwrap() < 0.05);
        let kl = smoothed_kl(&samples, &dist, 0.5).unwrap();
        assert!((0.0..0.01).contains(&kl));
        let worse = smoothed_kl(&samples[..100], &dist, 0.5).unwrap();
        assert!(worse > kl);
    }
}
