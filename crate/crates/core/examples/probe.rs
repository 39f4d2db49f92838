//! Scratch probe for tuning fixture dynamics (not part of the test suite).

use epidiff::calibration::weekly_aggregate;
use epidiff::epi_model::{run, DiseaseParams, PhiSchedule, SimMode};
use epidiff::interventions::PolicySet;
use epidiff::population::{build_contact_graph, generate_synthetic, PopulationSpec};

fn main() {
    let spec = PopulationSpec {
        n_agents: 5000,
        vaccination_coverage_by_age: [0.5; 7],
        ..Default::default()
    };
    let pop = generate_synthetic(&spec, 77).unwrap();
    let graph = build_contact_graph(&pop);
    let args: Vec<String> = std::env::args().collect();
    let r: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.004);
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4e-3);
    let weeks: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);

    let truth = DiseaseParams {
        beta,
        phi: PhiSchedule::Constant(2e-4),
        theta_ei: 9.0,
        theta_ir: 16.0,
        gamma_shape: 2.4,
        gamma_scale: 5.0,
        r_scale: r,
        psi1: 0.7,
        psi2: 0.5,
        ..Default::default()
    };
    let t = run(&pop, &graph, &truth, &PolicySet::default(), weeks * 7, 400, SimMode::Hard).unwrap();
    let w = weekly_aggregate(&t);
    println!("truth weekly {w:?}  total {}", t.cumulative_infections());

    if let Some(lr) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        use epidiff::calibration::{calibrate, CalibrationConfig, ObservationSeries};
        let momentum: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.9);
        let use_modulator = args.get(6).map(|s| s != "plain").unwrap_or(true);
        let observed = ObservationSeries::new(0, w.clone(), "synthetic").unwrap();
        let config = CalibrationConfig {
            iterations: 100,
            learning_rate: lr,
            momentum,
            use_modulator,
            ..Default::default()
        };
        let started = std::time::Instant::now();
        let fit = calibrate(
            &pop,
            &graph,
            &observed,
            &PolicySet::default(),
            &DiseaseParams::default(),
            &config,
            909,
        )
        .unwrap();
        let init = fit.loss_history[0];
        let best = fit.loss_history[fit.best_iteration];
        println!(
            "lr {lr} momentum {momentum} modulator {use_modulator}: loss {init:.4} -> {best:.4} ({:.1}%) at iter {} in {:.0}s",
            100.0 * best / init,
            fit.best_iteration,
            started.elapsed().as_secs_f64()
        );
        println!("  fitted weekly {:?}", fit.simulated_weekly.iter().map(|v| v.round()).collect::<Vec<_>>());
        println!("  beta trajectory tail {:?}", &fit.beta_trajectory[90..]);
        println!(
            "  loss every 10: {:?}",
            fit.loss_history.iter().step_by(10).map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
}
