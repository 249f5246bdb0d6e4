use ddm_web::{distill_countdown, forward_frames, sample_countdown};

#[test]
fn forward_frames_start_clean_and_end_masked() {
    let frames = forward_frames(4, 3, "absorbing", 5, 3).unwrap();
    assert_eq!(frames.len(), 5);
    assert_eq!(frames[0].t, 0.0);
    assert!(frames[0].tokens.iter().all(|&v| v < 3));
    // at t = 1 the geometric schedule leaves almost nothing unmasked
    assert!(frames[4].tokens.iter().filter(|&&v| v == 3).count() >= 3);
    assert_eq!(
        serde_json::to_string(&frames).unwrap(),
        serde_json::to_string(&forward_frames(4, 3, "absorbing", 5, 3).unwrap()).unwrap()
    );
}

#[test]
fn sampling_reports_are_consistent() {
    let report = sample_countdown(4, 3, "absorbing", "tweedie", 64, 400, 1).unwrap();
    assert!(report.samples.len() <= 12);
    assert!((0.0..=1.0).contains(&report.error_rate));
    assert!((0.0..=1.0).contains(&report.tv));
    assert!(report.error_rate < 0.2, "{}", report.error_rate);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(sample_countdown(4, 3, "gaussian", "euler", 8, 10, 1).is_err());
    assert!(sample_countdown(4, 3, "absorbing", "heun", 8, 10, 1).is_err());
    assert!(sample_countdown(4, 3, "absorbing", "euler", 0, 10, 1).is_err());
    assert!(forward_frames(20, 12, "uniform", 4, 1).is_err());
}

#[test]
fn distillation_returns_a_valid_schedule() {
    let report = distill_countdown(4, 3, 4, 32, 2, 200, 2).unwrap();
    assert_eq!(report.phi.len(), 4);
    assert_eq!(report.tau.len(), 5);
    assert!(report.tau.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(report.tau.first(), report.uniform_tau.first());
    assert_eq!(report.scores.len(), 3);
}

#[test]
fn page_defaults_run() {
    assert!(forward_frames(8, 4, "uniform", 8, 1).is_ok());
    assert!(sample_countdown(8, 4, "absorbing", "euler", 8, 2000, 1).is_ok());
    let r = distill_countdown(6, 4, 4, 64, 10, 2000, 1).unwrap();
    assert!(r.phi.iter().all(|p| p.is_finite() && *p > 0.0));
}
