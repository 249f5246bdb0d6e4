//! Browser bindings: forward noising, few-step sampling and in-page
//! distillation on small countdown tasks. Each export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ddm_core::ctmc::{forward_sample, NoiseSchedule, RateMatrixKind, Sequence};
use ddm_core::distill::{lsd_plus_train, lsd_train, DistillConfig, LearnedSampler};
use ddm_core::eval::generate;
use ddm_core::rng::{Purpose, StreamKey};
use ddm_core::sampler::SamplerKind;
use ddm_core::score::ScoreOracle;
use ddm_core::tasks::{countdown_distribution, error_rate, tv_distance, CountdownSpec};
use ddm_core::{Error, Result};

/// Largest task the page accepts; keeps every call well under a second or two.
const MAX_SUPPORT_WORK: usize = 400_000;

fn parse_kind(kind: &str) -> Result<RateMatrixKind> {
    match kind {
        "absorbing" => Ok(RateMatrixKind::Absorbing),
        "uniform" => Ok(RateMatrixKind::Uniform),
        other => Err(Error::Config(format!("unknown diffusion kind {other:?}"))),
    }
}

fn parse_sampler(kind: &str) -> Result<SamplerKind> {
    match kind {
        "euler" => Ok(SamplerKind::Euler),
        "tweedie" => Ok(SamplerKind::Tweedie),
        other => Err(Error::Config(format!("unknown sampler {other:?}"))),
    }
}

fn task(seq_len: usize, vocab: usize, kind: RateMatrixKind) -> Result<(CountdownSpec, ScoreOracle)> {
    let spec = CountdownSpec::new(seq_len, vocab)?;
    let dist = countdown_distribution(&spec)?;
    if dist.len() * seq_len * (vocab + 1) > MAX_SUPPORT_WORK {
        return Err(Error::Config(format!(
            "D={seq_len}, V={vocab} is too large for the page ({} valid sequences)",
            dist.len()
        )));
    }
    Ok((spec, ScoreOracle::new(dist, NoiseSchedule::default(), kind)?))
}

#[derive(Debug, Serialize)]
pub struct NoiseFrame {
    pub t: f64,
    pub tokens: Vec<usize>,
}

/// A random valid sequence noised to several times, all from one stream.
pub fn forward_frames(seq_len: usize, vocab: usize, kind: &str, frames: usize, seed: u64) -> Result<Vec<NoiseFrame>> {
    let kind = parse_kind(kind)?;
    let (_, oracle) = task(seq_len, vocab, kind)?;
    let support = oracle.dist().support();
    let pick = StreamKey::new(seed, Purpose::Forward, &[0]).uniforms_at(0, 1)[0];
    let x0: &Sequence = &support[((pick * support.len() as f64) as usize).min(support.len() - 1)];
    let frames = frames.clamp(2, 64);
    (0..frames)
        .map(|f| {
            let t = f as f64 / (frames - 1) as f64;
            let key = StreamKey::new(seed, Purpose::Forward, &[1]);
            let x = if t == 0.0 {
                x0.clone()
            } else {
                forward_sample(x0, t, oracle.schedule(), kind, oracle.space(), key)?
            };
            Ok(NoiseFrame { t, tokens: x.0 })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SampleReport {
    pub samples: Vec<Vec<usize>>,
    pub error_rate: f64,
    pub tv: f64,
    pub support: usize,
}

pub fn sample_countdown(
    seq_len: usize,
    vocab: usize,
    kind: &str,
    sampler: &str,
    nfe: usize,
    n: usize,
    seed: u64,
) -> Result<SampleReport> {
    let (spec, oracle) = task(seq_len, vocab, parse_kind(kind)?)?;
    let config = DistillConfig {
        teacher_steps: nfe,
        student_steps: nfe,
        sampler_kind: parse_sampler(sampler)?,
        seed,
        ..DistillConfig::default()
    };
    config.validate(seq_len, oracle.schedule().t_max())?;
    let samples = generate(&oracle, &LearnedSampler::vanilla(&config)?, n, seed)?;
    Ok(SampleReport {
        error_rate: error_rate(&samples, &spec)?,
        tv: tv_distance(&samples, oracle.dist())?,
        support: oracle.dist().len(),
        samples: samples.into_iter().take(12).map(|s| s.0).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct SamplerScore {
    pub name: &'static str,
    pub error_rate: f64,
    pub tv: f64,
}

#[derive(Debug, Serialize)]
pub struct DistillReport {
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub uniform_tau: Vec<f64>,
    pub scores: Vec<SamplerScore>,
}

/// Trains LSD then LSD+ at `nfe` steps and compares all three samplers on
/// `n_eval` fresh samples.
pub fn distill_countdown(
    seq_len: usize,
    vocab: usize,
    nfe: usize,
    teacher_steps: usize,
    epochs: usize,
    n_eval: usize,
    seed: u64,
) -> Result<DistillReport> {
    let (spec, oracle) = task(seq_len, vocab, RateMatrixKind::Absorbing)?;
    let config = DistillConfig {
        teacher_steps,
        student_steps: nfe,
        n_samples: 32,
        epochs,
        schedule_epochs: epochs,
        seed,
        ..DistillConfig::default()
    };
    let (phi, _) = lsd_train(&oracle, &config)?;
    let lsd = LearnedSampler::lsd(&config, phi.clone())?;
    let (plus, _) = lsd_plus_train(&oracle, &config, &phi)?;
    let vanilla = LearnedSampler::vanilla(&config)?;
    let mut scores = Vec::new();
    for (name, art) in [("euler", &vanilla), ("lsd", &lsd), ("lsd+", &plus)] {
        let samples = generate(&oracle, art, n_eval, seed ^ 0x5A5A)?;
        scores.push(SamplerScore {
            name,
            error_rate: error_rate(&samples, &spec)?,
            tv: tv_distance(&samples, oracle.dist())?,
        });
    }
    Ok(DistillReport {
        phi: phi.values().to_vec(),
        tau: plus.tau.times().to_vec(),
        uniform_tau: vanilla.tau.times().to_vec(),
        scores,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = forwardNoise)]
pub fn forward_noise(seq_len: usize, vocab: usize, kind: &str, frames: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(forward_frames(seq_len, vocab, kind, frames, seed.into()))
}

#[wasm_bindgen(js_name = sampleCountdown)]
pub fn sample_countdown_js(
    seq_len: usize,
    vocab: usize,
    kind: &str,
    sampler: &str,
    nfe: usize,
    n: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(sample_countdown(seq_len, vocab, kind, sampler, nfe, n, seed.into()))
}

#[wasm_bindgen(js_name = distillCountdown)]
pub fn distill_countdown_js(
    seq_len: usize,
    vocab: usize,
    nfe: usize,
    teacher_steps: usize,
    epochs: usize,
    n_eval: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(distill_countdown(seq_len, vocab, nfe, teacher_steps, epochs, n_eval, seed.into()))
}
