//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use qsmooth::filter::{filter_step_innovations, run_filter, run_filter_from, FilterState, StepMap};
use qsmooth::model::{ExperimentSpec, InterventionSpec, OpenSystemModel};
use qsmooth::oracle::{
    build_global_state, check_commutation, exact_conditional, exact_conditional_state, kraus_filter, DiscreteModel,
};
use qsmooth::qlinalg::{pauli, random, trace_distance, CMatrix};
use qsmooth::smoother::{
    backward_effect_step_euler, effect_trajectory, retrodict_multi, retrodict_multi_with, retrodict_single,
    retrodict_single_with,
};
use qsmooth::trajectory::{simulate, simulate_ensemble, MeasurementRecord, SimulationOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn qubit_spec(h: CMatrix<f64>, l: CMatrix<f64>, horizon: f64, dt: f64, seed: u64) -> ExperimentSpec<f64> {
    ExperimentSpec {
        model: OpenSystemModel::ideal(h, vec![l]),
        horizon,
        dt,
        interventions: vec![],
        initial_state: pauli::plus_state(),
        seed,
    }
}

fn cnot_probe(tau: f64) -> InterventionSpec<f64> {
    InterventionSpec::computational_basis(tau, CMatrix::basis_projector(2, 0), pauli::cnot())
}

fn random_discrete_spec(rng: &mut ChaCha8Rng, steps: usize, taus: &[f64]) -> ExperimentSpec<f64> {
    let dt = 0.1;
    let mut s = qubit_spec(random::hermitian(2, rng), random::matrix(2, rng), steps as f64 * dt, dt, 0);
    s.initial_state = random::density(2, rng);
    for &tau in taus {
        s.interventions.push(InterventionSpec::computational_basis(
            tau,
            random::density(2, rng),
            random::unitary(4, rng),
        ));
    }
    s
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    match limit {
        Some(limit) => {
            out.detail += &format!("; {:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs());
            out.pass &= elapsed <= limit;
        }
        None => out.detail += &format!("; {:.2} s", elapsed.as_secs_f64()),
    }
    out
}

/// Kraus filter against exact conditioning, every record up to six steps.
fn oracle_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut records = 0usize;
    for steps in 1..=6 {
        for variant in 0..3 {
            let spec = match variant {
                0 => random_discrete_spec(&mut rng, steps, &[]),
                _ => {
                    let tau = 0.1 * ((steps / 2) as f64);
                    let mut s = random_discrete_spec(&mut rng, steps, &[]);
                    if tau > 0.0 && tau < s.horizon {
                        s.interventions.push(InterventionSpec::computational_basis(
                            tau,
                            random::density(2, &mut rng),
                            random::unitary(4, &mut rng),
                        ));
                    }
                    s
                }
            };
            let dm = DiscreteModel::from_spec(&spec).unwrap();
            let global = build_global_state(&dm).unwrap();
            let patterns: Vec<Vec<Option<usize>>> = if spec.interventions.is_empty() {
                vec![vec![]]
            } else {
                vec![vec![None], vec![Some(0)], vec![Some(1)]]
            };
            for pattern in patterns {
                for record in dm.all_records(&pattern) {
                    let exact = match exact_conditional_state(&dm, &global, &record) {
                        Ok(x) => x,
                        Err(_) => continue,
                    };
                    let filtered = kraus_filter(&dm, &record).unwrap();
                    worst = worst.max(trace_distance(&filtered, &exact).unwrap());
                    records += 1;
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12 && records > 0,
        detail: format!("max trace distance {worst:.2e} over {records} records (threshold 1e-12)"),
    }
}

/// Heisenberg-picture record and probe observables commute.
fn non_demolition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let spec = random_discrete_spec(&mut rng, 4, &[0.2]);
        let dm = DiscreteModel::from_spec(&spec).unwrap();
        worst = worst.max(check_commutation(&dm).unwrap().max());
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("max commutator norm {worst:.2e} over 10 models (threshold 1e-10)"),
    }
}

/// Retrodiction on collision-model records against exact Bayes.
fn retrodiction_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut instances: Vec<ExperimentSpec<f64>> = Vec::new();
    let mut cnot = qubit_spec(CMatrix::zeros(2, 2), pauli::z(), 0.4, 0.1, 0);
    cnot.interventions.push(cnot_probe(0.2));
    instances.push(cnot);
    let mut cnot2 = qubit_spec(pauli::x::<f64>().scale_real(0.5), pauli::z(), 0.6, 0.1, 0);
    cnot2.interventions.push(cnot_probe(0.2));
    cnot2.interventions.push(cnot_probe(0.4));
    instances.push(cnot2);
    for steps in 4..=6 {
        instances.push(random_discrete_spec(&mut rng, steps, &[0.2]));
        instances.push(random_discrete_spec(&mut rng, steps, &[0.1, 0.3]));
    }
    let mut worst = 0.0f64;
    let mut tables = 0usize;
    for spec in &instances {
        let dm = DiscreteModel::from_spec(spec).unwrap();
        let global = build_global_state(&dm).unwrap();
        let (steps, _) = spec.intervention_steps();
        let concealed = vec![None; spec.interventions.len()];
        for record in dm.all_records(&concealed) {
            let exact = match exact_conditional(&dm, &global, &record) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let kernel = dm.kernel(&record).unwrap();
            let multi = retrodict_multi_with(&kernel, spec, &concealed, &spec.initial_state).unwrap();
            for (a, b) in multi.probabilities.iter().zip(&exact) {
                worst = worst.max((a - b).abs());
            }
            if spec.interventions.len() == 1 {
                let (single, _) =
                    retrodict_single_with(&kernel, &spec.interventions[0], steps[0], &spec.initial_state).unwrap();
                for (a, b) in single.iter().zip(&exact) {
                    worst = worst.max((a - b).abs());
                }
            }
            tables += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("max deviation {worst:.2e} over {tables} records (threshold 1e-10)"),
    }
}

fn shared_records(spec: &ExperimentSpec<f64>, count: usize) -> Vec<MeasurementRecord<f64>> {
    let opts = SimulationOptions {
        store_states: false,
        reveal_outcomes: false,
    };
    simulate_ensemble(spec, count, opts).into_iter().map(|r| r.unwrap().record).collect()
}

/// Normalized linear filter against the nonlinear filter.
fn filter_zakai_equivalence() -> Outcome {
    let spec = qubit_spec(CMatrix::zeros(2, 2), pauli::lower(), 1.0, 1e-3, 404);
    let map = StepMap::new(&spec.model, spec.dt).unwrap();
    let mut worst = 0.0f64;
    let mut euler_gap = 0.0f64;
    for record in shared_records(&spec, 20) {
        let filtered = run_filter(&record, &spec, &[]).unwrap();
        let mut z = FilterState::unnormalized(spec.initial_state.clone(), 0.0);
        let mut euler = FilterState::normalized(spec.initial_state.clone(), 0.0);
        for i in 0..record.n_steps() {
            z = qsmooth::filter::zakai_step_with(&z, record.step(i), &map).unwrap();
            euler = filter_step_innovations(&euler, record.step(i), &spec.model, spec.dt).unwrap();
        }
        let last = &filtered.last().unwrap().rho;
        worst = worst.max(trace_distance(last, &z.normalized_rho()).unwrap());
        euler_gap = euler_gap.max(trace_distance(last, &euler.rho).unwrap());
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!(
            "max trace distance {worst:.2e} over 20 records (threshold 1e-6); literal innovations Euler form differs by up to {euler_gap:.2e}"
        ),
    }
}

/// Backward effects against products of forward propagators.
fn forward_backward_consistency() -> Outcome {
    let spec = qubit_spec(pauli::x::<f64>().scale_real(0.5), pauli::lower(), 1.0, 1e-3, 505);
    let map = StepMap::new(&spec.model, spec.dt).unwrap();
    let mut worst = 0.0f64;
    let mut euler_worst = 0.0f64;
    for record in shared_records(&spec, 20) {
        let n = record.n_steps();
        let traj = effect_trajectory(&record, &spec.model).unwrap();
        let mut f = CMatrix::identity(2);
        let mut euler = CMatrix::identity(2);
        for i in (0..n).rev() {
            f = f.matmul(&map.kraus(record.step(i)).unwrap());
            euler = backward_effect_step_euler(&euler, record.step(i), &spec.model, spec.dt).unwrap();
            let ff = f.adjoint_matmul(&f);
            let e = traj.effects[i].scale_real(traj.log_scales[i].exp());
            worst = worst.max((&e - &ff).frobenius_norm());
            euler_worst = euler_worst.max((&euler - &ff).frobenius_norm());
        }
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!(
            "max Frobenius deviation {worst:.2e} over 20 records (threshold 1e-4); plain Euler backward step deviates by up to {euler_worst:.2e}"
        ),
    }
}

/// Table normalization, probe decoupling and the single/multi reduction.
fn normalization_and_decoupling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut sum_defect = 0.0f64;
    let mut reduction = 0.0f64;
    for trial in 0..10 {
        let mut spec = qubit_spec(
            random::hermitian(2, &mut rng),
            random::matrix(2, &mut rng).scale_real(0.7),
            0.5,
            1e-3,
            trial,
        );
        spec.initial_state = random::density(2, &mut rng);
        spec.interventions.push(InterventionSpec::computational_basis(
            0.2,
            random::density(2, &mut rng),
            random::unitary(4, &mut rng),
        ));
        let record = shared_records(&spec, 1).pop().unwrap();
        let single = retrodict_single(&record, &spec).unwrap();
        let multi = retrodict_multi(&record, &spec).unwrap();
        for r in [&single, &multi] {
            sum_defect = sum_defect.max((r.probabilities.iter().sum::<f64>() - 1.0).abs());
        }
        for (a, b) in single.probabilities.iter().zip(&multi.probabilities) {
            reduction = reduction.max((a - b).abs());
        }
        spec.interventions.push(InterventionSpec::computational_basis(
            0.4,
            random::density(2, &mut rng),
            random::unitary(4, &mut rng),
        ));
        let joint = retrodict_multi(&shared_records(&spec, 1).pop().unwrap(), &spec).unwrap();
        sum_defect = sum_defect.max((joint.probabilities.iter().sum::<f64>() - 1.0).abs());
    }

    let mut spec = qubit_spec(pauli::x(), pauli::z(), 0.5, 1e-3, 7);
    let probe = CMatrix::diag(&[0.35, 0.65]);
    spec.interventions.push(InterventionSpec::computational_basis(0.25, probe.clone(), CMatrix::identity(4)));
    let born = [0.35, 0.65];
    let mut decoupled = 0.0f64;
    let mut spread = 0.0f64;
    let mut first: Option<Vec<f64>> = None;
    for record in shared_records(&spec, 10) {
        let p = retrodict_single(&record, &spec).unwrap().probabilities;
        for (a, b) in p.iter().zip(born) {
            decoupled = decoupled.max((a - b).abs());
        }
        if let Some(f) = &first {
            for (a, b) in p.iter().zip(f) {
                spread = spread.max((a - b).abs());
            }
        }
        first.get_or_insert(p);
    }
    let ulp = 4.0 * f64::EPSILON;
    Outcome {
        pass: sum_defect <= 1e-10 && reduction <= 1e-10 && decoupled <= ulp && spread <= ulp,
        detail: format!(
            "sum defect {sum_defect:.2e}, single/multi gap {reduction:.2e} (thresholds 1e-10); decoupled probe: Born weight error {decoupled:.1e}, spread across 10 records {spread:.1e} (threshold 4 ulp = {ulp:.1e})"
        ),
    }
}

/// Future record sharpens the estimate of a concealed outcome.
fn information_gain() -> Outcome {
    let mut spec = qubit_spec(CMatrix::zeros(2, 2), pauli::z(), 2.0, 1e-3, 707);
    spec.interventions.push(cnot_probe(1.0));
    let opts = SimulationOptions {
        store_states: false,
        reveal_outcomes: false,
    };
    let diffs: Vec<f64> = simulate_ensemble(&spec, 500, opts)
        .into_iter()
        .map(|t| {
            let t = t.unwrap();
            let truth = &t.hidden_outcomes[0].label;
            let m = spec.interventions[0].outcome_index(truth).unwrap();
            let retro = retrodict_single(&t.record, &spec).unwrap().probabilities[m];
            let filtered = qsmooth::smoother::filtered_predictor(&t.record, &spec, 0, &[]).unwrap()[m];
            (-filtered.ln()) - (-retro.ln())
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Outcome {
        pass: mean >= 2.0 * se,
        detail: format!("mean NLL gain {mean:.4} nats, 2 SE = {:.4} (500 trajectories)", 2.0 * se),
    }
}

/// Collision-model filter converges to the diffusive filter as dt → 0.
fn continuum_convergence() -> Outcome {
    let horizon = 1.0;
    let dts = [1e-2, 1e-3, 1e-4];
    let samples = 40;
    let mut errors = Vec::new();
    for (j, &dt) in dts.iter().enumerate() {
        let spec = qubit_spec(pauli::x::<f64>().scale_real(0.5), pauli::lower(), horizon, dt, 0);
        let dm = DiscreteModel::from_spec(&spec).unwrap();
        let map = StepMap::new(&spec.model, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(808 + j as u64);
        let mut total = 0.0;
        for _ in 0..samples {
            let record = dm.sample_record(&mut rng).unwrap();
            let exact = kraus_filter(&dm, &record).unwrap();
            let continuous = dm.to_measurement_record(&record).unwrap();
            let mut state = FilterState::normalized(spec.initial_state.clone(), 0.0);
            for i in 0..continuous.n_steps() {
                state = qsmooth::filter::filter_step_with(&state, continuous.step(i), &map).unwrap();
            }
            total += trace_distance(&exact, &state.rho).unwrap();
        }
        errors.push(total / samples as f64);
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Outcome {
        pass: slope >= 0.5,
        detail: format!(
            "mean trace distances {:.2e}, {:.2e}, {:.2e}; fitted order {slope:.2} (threshold 0.5)",
            errors[0], errors[1], errors[2]
        ),
    }
}

/// Wrongly initialized filter forgets its initial state.
fn wrong_initialization() -> Outcome {
    let spec = qubit_spec(CMatrix::zeros(2, 2), pauli::z(), 10.0, 1e-3, 909);
    let mut wrong = pauli::minus_state::<f64>().scale_real(0.99);
    wrong.add_scaled_real(0.005, &CMatrix::identity(2));
    let opts = SimulationOptions {
        store_states: true,
        reveal_outcomes: false,
    };
    let trajectories = 200;
    let close = (0..trajectories as u64)
        .filter(|&i| {
            let t = simulate(&spec, i, opts).unwrap();
            let states = run_filter_from(&t.record, &spec, &[], wrong.clone()).unwrap();
            trace_distance(&states.last().unwrap().rho, t.final_state().unwrap()).unwrap() < 0.05
        })
        .count();
    let fraction = close as f64 / trajectories as f64;
    Outcome {
        pass: fraction >= 0.9,
        detail: format!("{close}/{trajectories} trajectories within 0.05 at T = 10 (threshold 90%)"),
    }
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("1 oracle exactness", Some(10), oracle_exactness),
        ("2 non-demolition", Some(30), non_demolition),
        ("3 retrodiction exactness", Some(60), retrodiction_exactness),
        ("4 filter/Zakai equivalence", None, filter_zakai_equivalence),
        ("5 forward-backward consistency", None, forward_backward_consistency),
        ("6 normalization and decoupling", None, normalization_and_decoupling),
        ("7 information gain", Some(300), information_gain),
        ("8 continuum convergence", None, continuum_convergence),
        ("9 wrong initialization", None, wrong_initialization),
    ];
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let out = timed(limit.map(Duration::from_secs), run);
        if !out.pass {
            failures += 1;
        }
        println!("[{}] {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
