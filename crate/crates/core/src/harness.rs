//! Run configuration and the train / sample / sweep / verify commands.
//!
//! Every command is a function of the configuration file and the seed. All
//! defaults are echoed into `resolved_config.json`, whose sha256 is the
//! provenance hash stamped on trained artifacts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctmc::{NoiseSchedule, RateMatrixKind, Sequence};
use crate::distill::{hash_json, lsd_plus_train, lsd_train, DistillConfig, LearnedKind, LearnedSampler, LossTrace};
use crate::error::{Error, Result};
use crate::eval::{generate, nfe_sweep, EvalReport, SweepOptions};
use crate::score::{DataDistribution, ScoreOracle};
use crate::tasks::{countdown_distribution_with_limit, CountdownSpec, ZeroPlacement, COUNTDOWN_LIMIT};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const ARTIFACT_FILE: &str = "learned.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_LONG: &str = "sweep_long.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Countdown,
    CustomDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[serde(default)]
    pub zeros: ZeroPlacement,
    #[serde(default = "default_support_limit")]
    pub support_limit: usize,
    /// Distribution document for `custom-distribution`, relative to the
    /// configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

fn default_support_limit() -> usize {
    COUNTDOWN_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub nfe_list: Vec<usize>,
    pub n_eval_samples: usize,
    /// Evaluation samples for the alignment-loss column; 0 leaves it empty.
    pub loss_samples: usize,
    /// Train LSD and LSD+ students for every NFE inside the sweep.
    pub train: bool,
    /// Pre-trained artifacts, relative to the configuration file.
    pub artifacts: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nfe_list: vec![8, 16, 32, 64],
            n_eval_samples: 1000,
            loss_samples: 64,
            train: false,
            artifacts: Vec::new(),
        }
    }
}

fn default_diffusion() -> RateMatrixKind {
    RateMatrixKind::Absorbing
}

fn default_learn() -> LearnedKind {
    LearnedKind::LsdPlus
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    #[serde(default = "default_diffusion")]
    pub diffusion: RateMatrixKind,
    #[serde(default)]
    pub noise: NoiseSchedule,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default = "default_learn")]
    pub learn: LearnedKind,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output")]
    pub output_dir: String,
    pub seed: u64,
}

/// A validated configuration with everything it implies.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    /// Directory that relative paths in the configuration refer to.
    pub base_dir: PathBuf,
    pub oracle: ScoreOracle,
    pub countdown: Option<CountdownSpec>,
    pub hash: String,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    /// Canonical form: compact JSON of the fully defaulted configuration.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        hash_json(self)
    }

    /// Fills defaults that depend on other fields and checks every invariant
    /// that can be checked without running anything.
    pub fn resolve(mut self, base_dir: &Path) -> Result<Resolved> {
        self.distill.seed = self.seed;
        self.noise.validate().map_err(config_err)?;
        let (dist, countdown) = match self.task.kind {
            TaskKind::Countdown => {
                let (Some(d), Some(v)) = (self.task.seq_len, self.task.vocab) else {
                    return Err(Error::Config("countdown task needs seq_len and vocab".into()));
                };
                if self.task.path.is_some() {
                    return Err(Error::Config("countdown task takes no path".into()));
                }
                let spec = CountdownSpec::new(d, v).map_err(config_err)?.with_zeros(self.task.zeros);
                let dist = countdown_distribution_with_limit(&spec, self.task.support_limit).map_err(config_err)?;
                (dist, Some(spec))
            }
            TaskKind::CustomDistribution => {
                let Some(path) = &self.task.path else {
                    return Err(Error::Config("custom-distribution task needs a path".into()));
                };
                let dist = DataDistribution::load(base_dir.join(path))
                    .map_err(|e| Error::Config(format!("distribution {path}: {e}")))?;
                self.task.seq_len = Some(dist.seq_len());
                self.task.vocab = Some(dist.vocab());
                (dist, None)
            }
        };
        let d = dist.seq_len();
        self.distill.zeta = Some(self.distill.zeta_for(d));
        self.distill.validate(d, self.noise.t_max())?;
        for &nfe in &self.eval.nfe_list {
            DistillConfig {
                student_steps: nfe,
                ..self.distill.clone()
            }
            .validate(d, self.noise.t_max())?;
        }
        let unique: BTreeSet<_> = self.eval.nfe_list.iter().collect();
        if unique.len() != self.eval.nfe_list.len() {
            return Err(Error::Config("nfe_list has duplicates".into()));
        }
        let oracle = ScoreOracle::new(dist, self.noise, self.diffusion).map_err(config_err)?;
        let hash = self.hash()?;
        Ok(Resolved {
            config: self,
            base_dir: base_dir.to_path_buf(),
            oracle,
            countdown,
            hash,
        })
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Resolved> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve(&base)
    }
}

impl Resolved {
    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output_dir)
    }

    fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_CONFIG), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }

    fn distill_for(&self, nfe: usize) -> DistillConfig {
        DistillConfig {
            student_steps: nfe,
            ..self.config.distill.clone()
        }
    }

    /// LSD, then LSD+ when requested, for a student with `nfe` steps.
    pub fn train_students(&self, nfe: usize, kind: LearnedKind) -> Result<(Vec<LearnedSampler>, LossTrace)> {
        let distill = self.distill_for(nfe);
        let (phi, mut trace) = lsd_train(&self.oracle, &distill)?;
        let mut out = vec![LearnedSampler::lsd(&distill, phi.clone())?];
        if kind == LearnedKind::LsdPlus {
            let (plus, plus_trace) = lsd_plus_train(&self.oracle, &distill, &phi)?;
            trace.rows.extend(plus_trace.rows);
            out.push(plus);
        }
        for art in &mut out {
            art.config_hash = self.hash.clone();
        }
        Ok((out, trace))
    }
}

/// Files written by `train`.
#[derive(Debug)]
pub struct TrainOutput {
    pub artifact: LearnedSampler,
    pub trace: LossTrace,
    pub dir: PathBuf,
}

pub fn cmd_train(resolved: &Resolved) -> Result<TrainOutput> {
    let dir = resolved.output_dir();
    resolved.write_resolved(&dir)?;
    let (mut arts, trace) = resolved.train_students(resolved.config.distill.student_steps, resolved.config.learn)?;
    let artifact = arts.pop().expect("at least one student");
    artifact.export(dir.join(ARTIFACT_FILE))?;
    fs::write(dir.join(TRACE_FILE), trace.to_csv())?;
    Ok(TrainOutput { artifact, trace, dir })
}

/// Final-epoch losses, one line per step.
pub fn summarize_trace(trace: &LossTrace) -> String {
    let mut out = String::new();
    for phase in ["phi", "kappa"] {
        for r in trace.final_rows(phase) {
            let _ = writeln!(out, "{phase} step {:>3}: loss {:.6} value {:.6}", r.step, r.loss, r.value);
        }
    }
    out
}

/// Loads an artifact together with the configuration it should be run
/// under: `config` if given, else `resolved_config.json` beside it.
pub fn load_artifact(artifact: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<(LearnedSampler, Resolved)> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => artifact.parent().unwrap_or(Path::new(".")).join(RESOLVED_CONFIG),
    };
    let text = fs::read_to_string(artifact).map_err(|e| Error::Config(format!("{}: {e}", artifact.display())))?;
    // the provenance hash is that of the configuration as trained, before any
    // seed override for sampling
    let trained = RunConfig::load(&config_path, None)?;
    let art = LearnedSampler::from_json(&text, Some(&trained.hash))?;
    let resolved = match seed {
        Some(_) => RunConfig::load(&config_path, seed)?,
        None => trained,
    };
    if art.steps() == 0 || resolved.oracle.schedule().t_max() < art.t_max {
        return Err(Error::Schema("artifact horizon exceeds the noise schedule".into()));
    }
    Ok((art, resolved))
}

/// Writes `n` terminal sequences as JSON lines.
pub fn cmd_sample(art: &LearnedSampler, resolved: &Resolved, n: usize, out: &Path) -> Result<()> {
    let samples = generate(&resolved.oracle, art, n, resolved.config.seed)?;
    let mut text = String::with_capacity(n * 4 * resolved.oracle.space().seq_len);
    for s in &samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, text)?;
    Ok(())
}

/// Parses a JSON-lines sample file.
pub fn read_samples(path: &Path) -> Result<Vec<Sequence>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Debug)]
pub struct SweepOutput {
    pub report: EvalReport,
    pub dir: PathBuf,
    /// Human-readable trend checks; informational only.
    pub notes: Vec<String>,
}

pub fn cmd_sweep(resolved: &Resolved, timing: bool) -> Result<SweepOutput> {
    let cfg = &resolved.config;
    let mut provided = Vec::new();
    for p in &cfg.eval.artifacts {
        let path = resolved.base_dir.join(p);
        let art = LearnedSampler::import(&path, Some(&resolved.hash))?;
        provided.push(art);
    }
    if !provided.is_empty() {
        let missing: Vec<usize> = cfg
            .eval
            .nfe_list
            .iter()
            .copied()
            .filter(|&nfe| !provided.iter().any(|a| a.steps() == nfe))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("no artifact for NFE {missing:?}")));
        }
    }
    let dir = resolved.output_dir();
    resolved.write_resolved(&dir)?;
    let opts = SweepOptions {
        nfe_list: cfg.eval.nfe_list.clone(),
        n_eval: cfg.eval.n_eval_samples,
        loss_samples: cfg.eval.loss_samples,
        countdown: resolved.countdown.as_ref(),
        seed: cfg.seed,
        timing,
    };
    let report = nfe_sweep(&resolved.oracle, &cfg.distill, &opts, |nfe| {
        let mut arts: Vec<LearnedSampler> = provided.iter().filter(|a| a.steps() == nfe).cloned().collect();
        if cfg.eval.train {
            arts.extend(resolved.train_students(nfe, cfg.learn)?.0);
        }
        Ok(arts)
    })?;
    fs::write(dir.join(SWEEP_CSV), report.to_csv())?;
    fs::write(dir.join(SWEEP_JSON), report.to_json()?)?;
    fs::write(dir.join(SWEEP_LONG), report.to_long_csv())?;
    let notes = trend_notes(&report, cfg.distill.sampler_kind.name());
    Ok(SweepOutput { report, dir, notes })
}

/// Checks the expected orderings: the plain sampler improves with NFE, and
/// learned samplers do no worse than it at equal NFE.
pub fn trend_notes(report: &EvalReport, vanilla: &str) -> Vec<String> {
    let metric = |r: &crate::eval::SweepRow| r.error_rate.or(r.tv);
    let mut notes = Vec::new();
    let mut base: Vec<_> = report.rows.iter().filter(|r| r.sampler == vanilla).collect();
    base.sort_by_key(|r| r.nfe);
    let monotone = base
        .windows(2)
        .all(|w| matches!((metric(w[0]), metric(w[1])), (Some(a), Some(b)) if b <= a));
    notes.push(format!(
        "{vanilla}: error non-increasing with NFE: {}",
        if monotone { "yes" } else { "no" }
    ));
    for r in report.rows.iter().filter(|r| r.sampler != vanilla) {
        if let (Some(b), Some(v)) = (report.row(vanilla, r.nfe).and_then(metric), metric(r)) {
            notes.push(format!(
                "{} at NFE {}: {:.4} vs {vanilla} {:.4}: {}",
                r.sampler,
                r.nfe,
                v,
                b,
                if v <= b { "no worse" } else { "worse" }
            ));
        }
    }
    notes
}

/// Re-checks an artifact's invariants and, when a resolved configuration
/// sits beside it, its provenance.
pub fn cmd_verify(artifact: &Path, config: Option<&Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(artifact).map_err(|e| Error::Config(format!("{}: {e}", artifact.display())))?;
    let config_path = match config {
        Some(p) => Some(p.to_path_buf()),
        None => {
            let p = artifact.parent().unwrap_or(Path::new(".")).join(RESOLVED_CONFIG);
            p.exists().then_some(p)
        }
    };
    let expected = match &config_path {
        Some(p) => Some(RunConfig::load(p, None)?.hash),
        None => None,
    };
    let art = LearnedSampler::from_json(&text, expected.as_deref())?;
    let mut lines = vec![
        format!("kind: {}", if art.kind == LearnedKind::Lsd { "lsd" } else { "lsd+" }),
        format!("steps: {}", art.steps()),
        format!("tau: {} -> {}", art.tau.start(), art.tau.end()),
        "invariants: ok".to_string(),
    ];
    lines.push(match (&expected, art.provenance_mismatch) {
        (None, _) => "provenance: no configuration to compare".into(),
        (Some(_), false) => "provenance: ok".into(),
        (Some(h), true) => format!("provenance: MISMATCH (artifact {}, config {h})", art.config_hash),
    });
    Ok(lines)
}

/// Process exit code for an error: 2 for bad input, 3 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Schema(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"task": {"kind": "countdown", "seq_len": 4, "vocab": 3}, "seed": 5,
            "distill": {"teacher_steps": 32, "student_steps": 4, "n_samples": 4, "epochs": 2, "schedule_epochs": 2},
            "eval": {"nfe_list": [4, 8], "n_eval_samples": 50, "loss_samples": 2}}"#
    }

    #[test]
    fn canonical_round_trip() {
        let resolved = RunConfig::parse(minimal()).unwrap().resolve(Path::new(".")).unwrap();
        let text = resolved.config.canonical_json().unwrap();
        let again = RunConfig::parse(&text).unwrap().resolve(Path::new(".")).unwrap();
        assert_eq!(again.config, resolved.config);
        assert_eq!(again.config.canonical_json().unwrap(), text);
        assert_eq!(again.hash, resolved.hash);
        assert_eq!(resolved.config.distill.seed, 5);
        assert_eq!(resolved.config.distill.zeta, Some(0));
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let missing_seed = r#"{"task": {"kind": "countdown", "seq_len": 4, "vocab": 3}}"#;
        let unknown = r#"{"task": {"kind": "countdown", "seq_len": 4, "vocab": 3}, "seed": 1, "colour": 2}"#;
        let bad_m = r#"{"task": {"kind": "countdown", "seq_len": 4, "vocab": 3}, "seed": 1, "distill": {"student_steps": 3}}"#;
        let too_big = r#"{"task": {"kind": "countdown", "seq_len": 16, "vocab": 8}, "seed": 1}"#;
        for text in [missing_seed, unknown, bad_m, too_big] {
            let err = RunConfig::parse(text).and_then(|c| c.resolve(Path::new(".")).map(|_| ()));
            let err = err.unwrap_err();
            assert_eq!(exit_code(&err), 2, "{err}");
        }
        let err = RunConfig::parse("{\n  \"seed\": 1,\n  oops\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn train_sample_verify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, minimal()).unwrap();
        let resolved = RunConfig::load(&cfg, None).unwrap();
        let out = cmd_train(&resolved).unwrap();
        let art_path = out.dir.join(ARTIFACT_FILE);
        let lines = cmd_verify(&art_path, None).unwrap();
        assert!(lines.iter().any(|l| l == "provenance: ok"));

        let (art, res) = load_artifact(&art_path, None, None).unwrap();
        assert!(!art.provenance_mismatch);
        let samples = dir.path().join("s.jsonl");
        cmd_sample(&art, &res, 20, &samples).unwrap();
        assert_eq!(read_samples(&samples).unwrap().len(), 20);
        cmd_sample(&art, &res, 0, &samples).unwrap();
        assert_eq!(fs::read_to_string(&samples).unwrap(), "");

        let other = dir.path().join("other.json");
        fs::write(&other, minimal().replace("\"seed\": 5", "\"seed\": 6")).unwrap();
        let lines = cmd_verify(&art_path, Some(&other)).unwrap();
        assert!(lines.last().unwrap().contains("MISMATCH"));
    }

    #[test]
    fn sweep_requires_artifacts_for_every_nfe() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, minimal()).unwrap();
        let out = cmd_train(&RunConfig::load(&cfg, None).unwrap()).unwrap();
        let with_art = minimal().replace(
            "\"loss_samples\": 2",
            &format!("\"loss_samples\": 2, \"artifacts\": [{:?}]", out.dir.join(ARTIFACT_FILE)),
        );
        fs::write(&cfg, with_art).unwrap();
        let err = cmd_sweep(&RunConfig::load(&cfg, None).unwrap(), false).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }
}
