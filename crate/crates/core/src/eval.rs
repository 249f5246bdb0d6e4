//! Per-NFE evaluation sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctmc::{sample_prior, Sequence};
use crate::distill::{alignment_loss, DistillConfig, LearnedKind, LearnedSampler};
use crate::error::{Error, Result};
use crate::par::try_map_indexed;
use crate::rng::{Purpose, StreamKey};
use crate::sampler::Sampler;
use crate::score::ScoreOracle;
use crate::tasks::{error_rate, smoothed_kl, tv_distance, CountdownSpec};

pub const CSV_HEADER: &str = "sampler,nfe,error_rate,tv,kl,loss,n,seconds";

/// Add-α smoothing used by the KL column.
pub const KL_ALPHA: f64 = 0.5;

/// Stream ids of evaluation sample `n`; shared by every sampler so they see
/// the same prior draws and uniforms.
pub fn eval_key(seed: u64, purpose: Purpose, n: usize) -> StreamKey {
    StreamKey::new(seed, purpose, &[0xE7A1, n as u64])
}

/// Terminal states of `n` independent runs of `learned`.
pub fn generate(oracle: &ScoreOracle, learned: &LearnedSampler, n: usize, seed: u64) -> Result<Vec<Sequence>> {
    let sampler = Sampler::new(oracle, learned.sampler_kind);
    try_map_indexed(n, |i| {
        let start = sample_prior(oracle.kind(), oracle.space(), eval_key(seed, Purpose::Prior, i))?;
        sampler.sample(&start, &learned.tau, &learned.phi, eval_key(seed, Purpose::Trajectory, i))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sampler: String,
    pub nfe: usize,
    pub error_rate: Option<f64>,
    pub tv: Option<f64>,
    pub kl: Option<f64>,
    pub loss: Option<f64>,
    pub n: usize,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SweepRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.sampler,
                r.nfe,
                cell(r.error_rate),
                cell(r.tv),
                cell(r.kl),
                cell(r.loss),
                r.n,
                cell(r.seconds)
            );
        }
        out
    }

    /// Long format `metric,sampler,nfe,value`, one line per present metric.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("metric,sampler,nfe,value\n");
        for r in &self.rows {
            for (name, v) in [("error_rate", r.error_rate), ("tv", r.tv), ("kl", r.kl), ("loss", r.loss)] {
                if let Some(v) = v {
                    let _ = writeln!(out, "{name},{},{},{v}", r.sampler, r.nfe);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn row(&self, sampler: &str, nfe: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.sampler == sampler && r.nfe == nfe)
    }
}

/// What to measure in a sweep.
#[derive(Debug, Clone)]
pub struct SweepOptions<'a> {
    pub nfe_list: Vec<usize>,
    pub n_eval: usize,
    /// Samples for the alignment-loss column; 0 skips it.
    pub loss_samples: usize,
    pub countdown: Option<&'a CountdownSpec>,
    pub seed: u64,
    pub timing: bool,
}

/// Display name of a sampler row.
pub fn sampler_label(learned: &LearnedSampler, vanilla: bool) -> String {
    if vanilla {
        return learned.sampler_kind.name().to_string();
    }
    match learned.kind {
        LearnedKind::Lsd => "lsd",
        LearnedKind::LsdPlus => "lsd+",
    }
    .to_string()
}

/// Evaluates the plain sampler and every supplied learned sampler at each
/// NFE. `learned(nfe)` returns the artifacts for that NFE.
pub fn nfe_sweep(
    oracle: &ScoreOracle,
    base: &DistillConfig,
    opts: &SweepOptions,
    mut learned: impl FnMut(usize) -> Result<Vec<LearnedSampler>>,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &nfe in &opts.nfe_list {
        let config = DistillConfig {
            student_steps: nfe,
            ..base.clone()
        };
        config.validate(oracle.space().seq_len, oracle.schedule().t_max())?;
        let mut entries = vec![(LearnedSampler::vanilla(&config)?, true)];
        for art in learned(nfe)? {
            if art.steps() != nfe {
                return Err(Error::Shape(format!("artifact with {} steps offered for NFE {nfe}", art.steps())));
            }
            entries.push((art, false));
        }
        for (art, vanilla) in entries {
            report.rows.push(evaluate(oracle, &config, &art, sampler_label(&art, vanilla), opts)?);
        }
    }
    Ok(report)
}

fn evaluate(
    oracle: &ScoreOracle,
    config: &DistillConfig,
    art: &LearnedSampler,
    label: String,
    opts: &SweepOptions,
) -> Result<SweepRow> {
    // no clock unless asked: wasm32 has none
    let started = opts.timing.then(Instant::now);
    let (mut err, mut tv, mut kl) = (None, None, None);
    if opts.n_eval > 0 {
        let samples = generate(oracle, art, opts.n_eval, opts.seed)?;
        err = opts.countdown.map(|spec| error_rate(&samples, spec)).transpose()?;
        tv = Some(tv_distance(&samples, oracle.dist())?);
        kl = Some(smoothed_kl(&samples, oracle.dist(), KL_ALPHA)?);
    }
    let loss = if opts.loss_samples > 0 {
        Some(alignment_loss(oracle, config, art, opts.loss_samples, opts.seed)?)
    } else {
        None
    };
    Ok(SweepRow {
        sampler: label,
        nfe: art.steps(),
        error_rate: err,
        tv,
        kl,
        loss,
        n: opts.n_eval,
        seconds: started.map(|s| s.elapsed().as_secs_f64()),
    })
}
