use adamlab_core::monitor::*;
use adamlab_core::spike::*;

fn main() {
    let scenario = SpikeScenario::default();
    for seed in [42u64, 7, 11, 23, 99] {
        let plain = run_spike_scenario(&scenario, seed).unwrap();
        let mon = MonitorConfig { mitigation: Mitigation::ReinitState, ..MonitorConfig::default() };
        let mit = run_spike_scenario_monitored(&scenario, mon, seed).unwrap();
        let noev = run_spike_scenario(&scenario.clone().without_event(), seed).unwrap();
        let base = plain.baseline_loss(300, 50);
        println!(
            "seed {seed}: peak={:.2} ({:.1}x) mitpeak={:.2} ratio={:.2} | noev max/base={:.2} rec={:?} onset={:?}",
            plain.peak_loss_from(300),
            plain.peak_loss_from(300) / base,
            mit.timeline.peak_loss_from(300),
            mit.timeline.peak_loss_from(300) / plain.peak_loss_from(300),
            noev.peak_loss() / noev.baseline_loss(300, 50),
            plain.recovery_step(300, 0.1),
            plain.spike_onset(300, 2.0),
        );
    }
}
