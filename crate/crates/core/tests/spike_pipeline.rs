//! End-to-end checks of the spike process simulator: the pre-event state
//! signature, the event ordering, suppression, mitigation, recovery, and
//! the control runs.

use adamlab_core::monitor::{AlarmKind, Mitigation, MonitorConfig};
use adamlab_core::spike::*;
use adamlab_core::stats::{Histogram, ModalityClass};

#[test]
fn default_scenario_signature_and_ordering() {
    let mut scenario = SpikeScenario::default();
    scenario.record_samples = true;
    let t_star = scenario.rare_event.unwrap().step;
    let tl = run_spike_scenario(&scenario, 42).unwrap();
    assert!(tl.diverged_at.is_none());

    // pre-event state signature over the late pre-event window
    for r in tl.records.iter().filter(|r| r.step >= 200 && r.step < t_star) {
        assert_eq!(
            r.update_early.class,
            ModalityClass::SpikedAtZero,
            "u at t={}",
            r.step
        );
        assert_eq!(
            r.ratio_early.class,
            ModalityClass::Bimodal,
            "r at t={}",
            r.step
        );
    }

    // ordering: sustained bimodal ratio strictly before the event, the
    // norm explosion at the event step, the loss rise strictly after
    let (bi_start, bi_len) = tl.sustained_bimodal_run(t_star).unwrap();
    assert!(bi_start < t_star, "bimodal from {bi_start}");
    assert!(bi_len >= scenario.arm_window);
    assert_eq!(tl.norm_explosion_step(), Some(t_star));
    let onset = tl.spike_onset(t_star, 2.0).unwrap();
    assert!(onset > t_star, "loss onset {onset} not after the explosion");
    assert!(onset <= t_star + 20, "loss onset {onset} too late");

    // the event fired armed and the explosion resolves
    assert!(matches!(
        tl.events.first(),
        Some(EventMarker::RareEvent { armed: true, .. })
    ));
    let recovery = tl.recovery_step(t_star, 0.1).unwrap();
    assert!(recovery <= t_star + 200, "recovery at {recovery}");

    // within ten steps of the event the update and ratio distributions
    // collapse onto each other
    let within = tl
        .records
        .iter()
        .find(|r| r.step == t_star + 10)
        .unwrap()
        .samples
        .as_ref()
        .unwrap();
    let sup = Histogram::sup_distance(&within.0, &within.1, 101);
    assert!(sup < 0.1, "u/r histogram sup distance {sup}");

    // stage labels traverse the process
    let stages: Vec<Stage> = tl.records.iter().map(|r| r.stage).collect();
    assert!(stages.contains(&Stage::SpikedUpdates));
    assert!(stages.contains(&Stage::CorrelatedGradients));
    assert!(stages.contains(&Stage::BimodalRatio));
    assert!(stages.contains(&Stage::RareEventHit) || stages.contains(&Stage::Explosion));
    assert!(stages.contains(&Stage::Recovered));
}

#[test]
fn removing_the_event_removes_the_spike() {
    let scenario = SpikeScenario::default();
    let with = run_spike_scenario(&scenario, 7).unwrap();
    let without = run_spike_scenario(&scenario.clone().without_event(), 7).unwrap();
    let base = without.baseline_loss(300, 50);
    assert!(
        without.peak_loss() <= 2.0 * base,
        "no-event run peaked at {} over baseline {base}",
        without.peak_loss()
    );
    assert!(with.peak_loss_from(300) > 3.0 * base);

    // the suppressed run keeps the spiked-update signature throughout
    let spiked = without
        .records
        .iter()
        .filter(|r| r.step >= 10)
        .filter(|r| r.update_early.class == ModalityClass::SpikedAtZero)
        .count();
    let total = without.records.iter().filter(|r| r.step >= 10).count();
    assert!(
        spiked as f64 / total as f64 > 0.99,
        "{spiked}/{total} spiked"
    );

    // identical prefixes before the event, same seed
    for (a, b) in with.records.iter().zip(without.records.iter()) {
        if a.step >= 300 {
            break;
        }
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "step {}", a.step);
    }
}

#[test]
fn healthy_scenario_stays_stage_one() {
    let tl = run_spike_scenario(&SpikeScenario::healthy(), 3).unwrap();
    assert!(tl.diverged_at.is_none());
    for r in tl.records.iter().filter(|r| r.step >= 80) {
        assert_eq!(r.stage, Stage::Healthy, "stage at t={}", r.step);
        assert_eq!(r.update_early.class, ModalityClass::Unimodal, "t={}", r.step);
        assert_eq!(r.ratio_early.class, ModalityClass::Unimodal, "t={}", r.step);
    }
}

#[test]
fn runs_are_deterministic() {
    let scenario = SpikeScenario::default();
    let a = run_spike_scenario(&scenario, 5).unwrap();
    let b = run_spike_scenario(&scenario, 5).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(b.records.iter()) {
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        assert_eq!(ra.stage, rb.stage);
        assert_eq!(ra.update_early.class, rb.update_early.class);
    }
}

#[test]
fn monitor_detects_before_the_loss_spike_and_mitigation_halves_it() {
    let scenario = SpikeScenario::default();
    let seed = 11;
    let plain = run_spike_scenario(&scenario, seed).unwrap();
    let onset = plain.spike_onset(300, 2.0).unwrap();

    let watch = run_spike_scenario_monitored(&scenario, MonitorConfig::default(), seed).unwrap();
    let first_alarm = watch
        .alarms
        .iter()
        .find(|a| a.kind == AlarmKind::ImpendingSpike)
        .map(|a| a.step)
        .unwrap();
    assert!(
        first_alarm < onset,
        "alarm at {first_alarm}, loss spike at {onset}"
    );
    assert!(first_alarm < 300);

    let mitigated = run_spike_scenario_monitored(
        &scenario,
        MonitorConfig {
            mitigation: Mitigation::ReinitState,
            ..MonitorConfig::default()
        },
        seed,
    )
    .unwrap();
    assert!(mitigated.mitigations.iter().any(|m| m.applied));
    // the event arrives at a freshly reset state and stays unarmed
    assert!(matches!(
        mitigated.timeline.events.first(),
        Some(EventMarker::RareEvent { armed: false, .. })
    ));
    let ratio = mitigated.timeline.peak_loss_from(300) / plain.peak_loss_from(300);
    assert!(ratio < 0.5, "mitigated/unmitigated peak ratio {ratio}");
}

#[test]
fn zero_guard_prevents_the_zero_spike_signature() {
    let mut scenario = SpikeScenario::default();
    scenario.params = scenario.params.zero_guard();
    let tl = run_spike_scenario(&scenario, 42).unwrap();
    // scale-free updates: no spiked-at-zero classification anywhere in the
    // pre-event process (the first few steps are atomic mixtures of one or
    // two draws and are skipped)
    for r in tl.records.iter().filter(|r| r.step >= 10 && r.step <= 300) {
        assert_ne!(
            r.update_early.class,
            ModalityClass::SpikedAtZero,
            "zero-guard update spiked at t={}",
            r.step
        );
    }
}

#[test]
fn healthy_run_raises_no_monitor_alarms() {
    let run =
        run_spike_scenario_monitored(&SpikeScenario::healthy(), MonitorConfig::default(), 13)
            .unwrap();
    let impending = run
        .alarms
        .iter()
        .filter(|a| a.kind == AlarmKind::ImpendingSpike)
        .count();
    assert_eq!(impending, 0);
}
