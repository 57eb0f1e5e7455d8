//! Acceptance gate: ten end-to-end checks covering the solver, the
//! regularization layer, the diagnostics, and the command-line front end.
//! Each check prints one `[ACCEPTANCE] criterion NN ...: PASS|FAIL` line
//! directly to stdout (bypassing test capture) and then asserts.

use mfglab_cli::config::{build_initial_measure, InitialConfig};
use mfglab_core::coefficients::probes::SamplerSpec;
use mfglab_core::coefficients::{CoefficientSet, FamilyRegistry, Regime};
use mfglab_core::diagnostics::propagation_check;
use mfglab_core::dynamics::{common_noise_wrap, simulate_mckean, MeasureFlow};
use mfglab_core::lq::{oracle_field, riccati_solve, LqParams};
use mfglab_core::measures::{
    entropy_kde, fisher_kde, silverman_bandwidth, wasserstein2, EmpiricalMeasure, W2Method,
};
use mfglab_core::rng::stream_rng;
use mfglab_core::solver::harness::{
    measure_stability_harness, predicted_w_exponent, stability_harness,
};
use mfglab_core::solver::picard::{picard_solve, picard_solve_with_init};
use mfglab_core::solver::{DecouplingField, PicardOptions, SolverScenario, StencilSpec};
use mfglab_core::yosida::convergence_sweep;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::sync::{Arc, OnceLock};

/// Prints the per-criterion verdict straight to the real stdout so the
/// line is visible in captured test runs too.
fn announce(number: u32, what: &str, pass: bool) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[ACCEPTANCE] criterion {number:02} {what}: {verdict}").unwrap();
    out.flush().unwrap();
}

fn gate(number: u32, what: &str, pass: bool, detail: String) {
    announce(number, what, pass);
    assert!(pass, "criterion {number:02} failed: {detail}");
}

fn lq_coefficients(params: &LqParams, dim: usize) -> CoefficientSet {
    let mut p = BTreeMap::new();
    p.insert("p".to_string(), params.p);
    p.insert("p_bar".to_string(), params.p_bar);
    p.insert("q".to_string(), params.q);
    p.insert("q_bar".to_string(), params.q_bar);
    FamilyRegistry::with_builtins()
        .build("lq", &p, dim)
        .expect("lq family")
}

fn gaussian_start(mean: f64, std: f64, n_atoms: usize, seed: u64) -> EmpiricalMeasure {
    build_initial_measure(
        &InitialConfig::Gaussian {
            mean: vec![mean],
            std,
            n_atoms,
        },
        1,
        seed,
    )
    .expect("initial measure")
}

struct BenchProblem {
    cs: CoefficientSet,
    scenario: SolverScenario,
    options: PicardOptions,
    params: LqParams,
    field: DecouplingField,
}

/// Reference problem shared by several criteria: a one-dimensional
/// monotone problem with genuine mean-field coupling, `10^4` particles,
/// and `10^3` replicas per node.
fn bench_problem() -> &'static BenchProblem {
    static CELL: OnceLock<BenchProblem> = OnceLock::new();
    CELL.get_or_init(|| {
        let params = LqParams {
            p: 1.0,
            p_bar: 0.25,
            q: 1.0,
            q_bar: 0.25,
            horizon: 1.0,
        };
        let cs = lq_coefficients(&params, 1);
        let scenario = SolverScenario {
            dim: 1,
            horizon: params.horizon,
            dt: 1e-2,
            n_particles: 10_000,
            n_replicas: 1_000,
            sigma_x: 1e-5,
            stencil: StencilSpec {
                center: vec![1.0],
                half_width: 5.0,
                points_per_axis: 13,
            },
            flow_offsets: vec![vec![0.0]],
            mu0: gaussian_start(2.0, 0.5, 10_000, 424_242),
            seed: 424_242,
        };
        let options = PicardOptions {
            tol: 1e-3,
            max_iter: 30,
        };
        let field = picard_solve(&cs, &scenario, &options).expect("reference solve");
        assert!(field.converged, "reference solve must converge");
        BenchProblem {
            cs,
            scenario,
            options,
            params,
            field,
        }
    })
}

/// Largest absolute difference between table values and the closed form
/// `a(t) x + b(t) mean`, over every node of every flow.
fn sup_table_error(field: &DecouplingField, params: &LqParams) -> f64 {
    let dt_fine = (field.times[1] - field.times[0]) / 10.0;
    let path = riccati_solve(params, dt_fine).expect("closed form");
    let mut worst = 0.0f64;
    for flow in &field.flows {
        for (k, &t) in field.times.iter().enumerate() {
            let (a, b) = path.eval(t);
            for j in 0..field.stencil_points.len() {
                for c in 0..field.dim {
                    let oracle = a * field.stencil_points[j][c] + b * flow.mean[k][c];
                    worst = worst.max((flow.values[k][j][c] - oracle).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn criterion_01_closed_form_tables_and_refinement() {
    let base = bench_problem();
    let err_base = sup_table_error(&base.field, &base.params);

    // Halve the step and quadruple the particles; warm-start from the
    // coarse table (the fixed point does not depend on the start).
    let refined_scenario = SolverScenario {
        dt: 5e-3,
        n_particles: 40_000,
        mu0: gaussian_start(2.0, 0.5, 40_000, 424_242),
        ..base.scenario.clone()
    };
    let refined = picard_solve_with_init(&base.cs, &refined_scenario, &base.options, &base.field)
        .expect("refined solve");
    assert!(refined.converged, "refined solve must converge");
    let err_refined = sup_table_error(&refined, &base.params);

    let pass = err_base <= 5e-2 && err_refined < err_base;
    gate(
        1,
        "solved tables match the closed form and refine under dt/2, 4N",
        pass,
        format!("base error {err_base:.3e}, refined error {err_refined:.3e}"),
    );
}

#[test]
fn criterion_02_resolvent_lipschitz_levels() {
    let cs = FamilyRegistry::with_builtins()
        .build("cubic_clipped", &BTreeMap::new(), 1)
        .unwrap();
    let epsilons = [1.0, 0.5, 0.25];
    let rows = convergence_sweep(
        cs.w0.clone(),
        1,
        &epsilons,
        None,
        64,
        1_000,
        8,
        3.0,
        20_260_817,
    )
    .expect("sweep");

    let lipschitz_ok = rows
        .iter()
        .all(|r| r.lipschitz_quotient <= 1.0 / r.epsilon + 1e-6);
    let decreasing = rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error);
    let pass = lipschitz_ok && decreasing;
    gate(
        2,
        "regularized maps are 1/eps-Lipschitz with decreasing approximation error",
        pass,
        format!("rows: {rows:?}"),
    );
}

#[test]
fn criterion_03_regularized_growth_envelope() {
    let cs = FamilyRegistry::with_builtins()
        .build("cubic_clipped", &BTreeMap::new(), 1)
        .unwrap();
    let c = cs.growth_constant;
    // Levels strictly below 1 / (2 c); 1250 clouds x 8 atoms = 10^4 samples.
    let epsilons = [1.0 / (4.0 * c), 1.0 / (8.0 * c)];
    let rows = convergence_sweep(
        cs.w0.clone(),
        1,
        &epsilons,
        Some(c),
        1_250,
        8,
        8,
        15.0,
        30_170_816,
    )
    .expect("sweep");

    let pass = rows
        .iter()
        .all(|r| r.growth_ratio <= (1.0 + c) / (1.0 - c * r.epsilon) + 1e-9);
    gate(
        3,
        "regularized growth stays inside the certified envelope",
        pass,
        format!("growth constant {c}, rows: {rows:?}"),
    );
}

#[test]
fn criterion_04_monotonicity_propagation_and_violation_witness() {
    let base = bench_problem();
    let sampler = SamplerSpec::standard(1, 16);
    let good = propagation_check(&base.field, &base.field.times, &sampler, 1_000, 7_001)
        .expect("propagation scan");

    // Antitone terminal data: the pair functional must dip negative, and
    // the exact terminal row pins the worst time at zero horizon-to-go.
    let anti_params = LqParams {
        p: -1.0,
        p_bar: 0.0,
        q: 2.0,
        q_bar: 0.0,
        horizon: 0.4,
    };
    let anti_cs = lq_coefficients(&anti_params, 1);
    let anti_scenario = SolverScenario {
        dim: 1,
        horizon: anti_params.horizon,
        dt: 0.02,
        n_particles: 500,
        n_replicas: 50,
        sigma_x: 1e-5,
        stencil: StencilSpec {
            center: vec![0.0],
            half_width: 3.0,
            points_per_axis: 9,
        },
        flow_offsets: vec![vec![0.0]],
        mu0: gaussian_start(0.0, 1.0, 500, 7_002),
        seed: 7_002,
    };
    let anti_options = PicardOptions {
        tol: 2e-2,
        max_iter: 20,
    };
    let anti_field = picard_solve(&anti_cs, &anti_scenario, &anti_options).expect("antitone solve");
    assert!(anti_field.converged);
    let bad = propagation_check(&anti_field, &anti_field.times, &sampler, 200, 7_003)
        .expect("violation scan");

    let pass = good.passed
        && !bad.passed
        && bad.min_value < 0.0
        && bad.argmin_time == 0.0
        && bad.argmin_pair < 200;
    gate(
        4,
        "monotone data propagates nonnegative pair quotients; antitone data fails at the terminal time with a witness",
        pass,
        format!("good min {:.3e} (tol {:.3e}), bad min {:.3e} at t={} pair {}",
            good.min_value, good.tolerance_used, bad.min_value, bad.argmin_time, bad.argmin_pair),
    );
}

#[test]
fn criterion_05_stability_exponents() {
    // Noise-free dynamics resolve the fixed point far below the smallest
    // perturbation, so the log-log fit sees the pure response.
    let params = LqParams {
        p: 1.0,
        p_bar: 0.25,
        q: 1.0,
        q_bar: 0.25,
        horizon: 0.5,
    };
    let cs = lq_coefficients(&params, 1);
    let scenario = SolverScenario {
        dim: 1,
        horizon: params.horizon,
        dt: 0.02,
        n_particles: 2_000,
        n_replicas: 1,
        sigma_x: 0.0,
        stencil: StencilSpec {
            center: vec![1.0],
            half_width: 2.5,
            points_per_axis: 9,
        },
        flow_offsets: vec![vec![0.0]],
        mu0: gaussian_start(2.0, 0.5, 2_000, 5_001),
        seed: 5_001,
    };
    let options = PicardOptions {
        tol: 1e-8,
        max_iter: 60,
    };
    let deltas = [1e-1, 1e-2, 1e-3];
    let measure = measure_stability_harness(&cs, &scenario, &deltas, &options).expect("measure");
    let terminal = stability_harness(&cs, &scenario, &deltas, &options).expect("terminal");
    let fitted_measure = measure.fitted_w_exponent.expect("measure fit");
    let fitted_terminal = terminal.fitted_w_exponent.expect("terminal fit");

    // The prediction table is exact as formulas in the regularity level.
    let mut table_ok = true;
    for g in [0.25, 0.5, 0.75, 1.0] {
        table_ok &= predicted_w_exponent(&Regime::StrongInX { alpha: 1.0 }, g)
            == Some(g / (2.0 - g));
        table_ok &= predicted_w_exponent(&Regime::StrongInW { alpha: 1.0 }, g)
            == Some(g * g / (2.0 - g * g));
    }

    let pass = (fitted_measure - 1.0).abs() <= 0.2
        && (fitted_terminal - 1.0).abs() <= 0.2
        && table_ok;
    gate(
        5,
        "field response to data perturbations fits exponent 1.0 +/- 0.2; prediction table exact",
        pass,
        format!("measure fit {fitted_measure:.4}, terminal fit {fitted_terminal:.4}, table_ok {table_ok}"),
    );
}

/// Paired-particle L2 distance between two times of one flow.
fn paired_l2(flow: &MeasureFlow, s: usize, t: usize) -> f64 {
    let ms = flow.at(s);
    let mt = flow.at(t);
    let mut acc = 0.0;
    for ((xs, xt), &w) in ms.points().iter().zip(mt.points()).zip(ms.weights()) {
        let mut sq = 0.0;
        for (a, b) in xs.iter().zip(xt) {
            let d = a - b;
            sq += d * d;
        }
        acc += w * sq;
    }
    acc.sqrt()
}

#[test]
fn criterion_06_moment_envelope_and_time_continuity() {
    let params = LqParams {
        p: 1.0,
        p_bar: 0.25,
        q: 1.0,
        q_bar: 0.25,
        horizon: 0.5,
    };
    let cs = lq_coefficients(&params, 1);
    let oracle = oracle_field(&params, 1e-3).expect("oracle field");
    let sigma_x = 0.5;

    let run = |dt: f64, n: usize, seed: u64| -> (f64, f64, f64) {
        let mu0 = gaussian_start(2.0, 0.5, n, seed);
        let e2_start = mu0.moment(2.0);
        let flow = simulate_mckean(
            &cs,
            &oracle,
            &mu0,
            params.horizon,
            dt,
            n,
            sigma_x,
            seed,
        )
        .expect("flow");
        let steps = flow.steps();
        let sup_e2 = (0..=steps)
            .map(|k| flow.at(k).moment(2.0))
            .fold(0.0f64, f64::max);
        let envelope = sup_e2 / (1.0 + e2_start);
        let mut ratio = 0.0f64;
        for s in 0..steps {
            for t in (s + 1)..=steps {
                let lag = (t - s) as f64 * dt;
                ratio = ratio.max(paired_l2(&flow, s, t) / lag.sqrt());
            }
        }
        (envelope, ratio, sup_e2)
    };

    let (c_coarse, ratio_coarse, sup_e2) = run(0.02, 2_000, 6_001);
    let (c_fine, ratio_fine, _) = run(0.01, 4_000, 6_002);

    // Drift bound sup_t (|a| + |b|) from the closed form; increments obey
    // |X_t - X_s| <= sqrt(t-s) (sqrt(T) c_ab sup ||X|| + sqrt(2 sigma)),
    // with 10% slack for the empirical norm of the summed noise.
    let path = riccati_solve(&params, 1e-3).expect("closed form");
    let c_ab = (0..=500)
        .map(|k| {
            let (a, b) = path.eval(k as f64 * 1e-3);
            a.abs() + b.abs()
        })
        .fold(0.0f64, f64::max);
    let bound = params.horizon.sqrt() * c_ab * sup_e2.sqrt() + (2.0 * sigma_x).sqrt() * 1.1;

    let stable = (c_coarse - c_fine).abs() <= 0.1 * c_coarse;
    let continuous = ratio_coarse <= bound && ratio_fine <= bound;
    let pass = stable && continuous;
    gate(
        6,
        "second moments stay in a stable envelope and increments scale like sqrt(t-s)",
        pass,
        format!(
            "envelope coarse {c_coarse:.4} fine {c_fine:.4}, ratios {ratio_coarse:.4}/{ratio_fine:.4} vs bound {bound:.4}"
        ),
    );
}

#[test]
fn criterion_07_shifted_variable_wrap_consistency() {
    let params = LqParams {
        p: 1.0,
        p_bar: 0.25,
        q: 1.0,
        q_bar: 0.25,
        horizon: 1.0,
    };
    let dt = 0.01;
    let path = riccati_solve(&params, dt).expect("closed form");
    let wrapped = common_noise_wrap(Arc::new(oracle_field(&params, dt).expect("oracle")));

    let uniform = EmpiricalMeasure::uniform(vec![vec![0.3], vec![1.7], vec![-0.4], vec![2.2]])
        .unwrap();
    let weighted = EmpiricalMeasure::new(
        vec![vec![-1.0], vec![0.5], vec![2.0]],
        vec![0.2, 0.5, 0.3],
    )
    .unwrap();

    let mut worst = 0.0f64;
    for mu in [&uniform, &weighted] {
        let mean = mu.mean()[0];
        for k in [0usize, 1, 7, 25, 50, 100] {
            let t = k as f64 * dt;
            let (a, b) = path.eval(t);
            for x in [-2.0, 0.0, 1.3, 4.0] {
                for theta in [-1.0, 0.0, 0.6, 2.5] {
                    let got = wrapped
                        .eval(t, &[x], &[theta], mu)
                        .expect("wrap evaluation");
                    let want = a * (x + theta) + b * (mean + theta);
                    worst = worst.max((got[0] - want).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-8;
    gate(
        7,
        "shifted-variable wrap agrees with the directly shifted closed form",
        pass,
        format!("worst node error {worst:.3e}"),
    );
}

#[test]
fn criterion_08_entropy_and_fisher_estimators() {
    let mut rng = stream_rng(2_026, &[0x51]);
    let standard: Vec<Vec<f64>> = (0..10_000)
        .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
        .collect();
    let mu = EmpiricalMeasure::uniform(standard).unwrap();
    let h = silverman_bandwidth(&mu);
    let entropy = entropy_kde(&mu, h).expect("entropy");
    let fisher = fisher_kde(&mu, h).expect("fisher");

    // For a standard Gaussian the integral of mu log mu is
    // -(1/2) log(2 pi e) and the score has unit second moment.
    let entropy_target = -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let entropy_ok = (entropy - entropy_target).abs() <= 0.1;
    let fisher_ok = (fisher - 1.0).abs() <= 0.2;

    // Lower bound: entropy >= -pi E2 on a battery of measures.
    let mut battery: Vec<EmpiricalMeasure> = Vec::new();
    battery.push(mu.clone());
    let mut rng2 = stream_rng(2_026, &[0x52]);
    battery.push(
        EmpiricalMeasure::uniform(
            (0..1_000)
                .map(|_| vec![2.0 + 0.25 * rng2.sample::<f64, _>(StandardNormal)])
                .collect(),
        )
        .unwrap(),
    );
    battery.push(
        EmpiricalMeasure::uniform(
            (0..1_000)
                .map(|_| vec![3.0 * rng2.sample::<f64, _>(StandardNormal)])
                .collect(),
        )
        .unwrap(),
    );
    battery.push(
        EmpiricalMeasure::uniform((0..200).map(|i| vec![-3.0 + 6.0 * i as f64 / 199.0]).collect())
            .unwrap(),
    );
    battery.push(
        EmpiricalMeasure::uniform(
            (0..1_000)
                .map(|i| {
                    let lobe = if i % 2 == 0 { -3.0 } else { 3.0 };
                    vec![lobe + 0.5 * rng2.sample::<f64, _>(StandardNormal)]
                })
                .collect(),
        )
        .unwrap(),
    );
    let mut bound_ok = true;
    let mut worst_margin = f64::INFINITY;
    for m in &battery {
        let e = entropy_kde(m, silverman_bandwidth(m)).expect("battery entropy");
        let floor = -std::f64::consts::PI * m.moment(2.0);
        worst_margin = worst_margin.min(e - floor);
        bound_ok &= e >= floor;
    }

    let pass = entropy_ok && fisher_ok && bound_ok;
    gate(
        8,
        "entropy and Fisher estimators reproduce Gaussian values and respect the moment floor",
        pass,
        format!(
            "entropy {entropy:.4} (target {entropy_target:.4}), fisher {fisher:.4}, worst floor margin {worst_margin:.3}"
        ),
    );
}

#[test]
fn criterion_09_assignment_equals_permutation_enumeration() {
    fn brute_force(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        let n = mu.len();
        // Same cost entries and same accumulation order as the assignment
        // tier, so the optimal values agree bitwise.
        let cost: Vec<Vec<f64>> = mu
            .points()
            .iter()
            .map(|x| {
                nu.points()
                    .iter()
                    .map(|y| {
                        x.iter()
                            .zip(y)
                            .map(|(a, b)| {
                                let d = a - b;
                                d * d
                            })
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let w = 1.0 / n as f64;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p: &[usize]| {
            let mut acc = 0.0;
            for (i, &j) in p.iter().enumerate() {
                acc += w * cost[i][j];
            }
            if acc < best {
                best = acc;
            }
        });
        best.max(0.0).sqrt()
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    let mut rng = stream_rng(909, &[0x99]);
    let mut mismatches = 0usize;
    for trial in 0..100u64 {
        let n = 2 + (trial as usize % 7);
        let d = 2 + (trial as usize % 2);
        let cloud = |rng: &mut rand_chacha::ChaCha8Rng| {
            EmpiricalMeasure::uniform(
                (0..n)
                    .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let a = cloud(&mut rng);
        let b = cloud(&mut rng);
        let solved = wasserstein2(&a, &b).expect("transport");
        assert!(solved.exact);
        assert_eq!(solved.method, W2Method::Assignment);
        if solved.distance != brute_force(&a, &b) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    gate(
        9,
        "assignment transport equals permutation enumeration on 100 random clouds",
        pass,
        format!("{mismatches} mismatching trials"),
    );
}

const DETERMINISM_CONFIG: &str = r#"
[problem]
family = "lq"
dim = 1

[problem.params]
p = 1.0
p_bar = 0.25
q = 1.0
q_bar = 0.25

[initial]
kind = "gaussian"
mean = [2.0]
std = 0.5
n_atoms = 300

[solver]
horizon = 0.3
dt = 0.03
n_particles = 300
n_replicas = 60
sigma_x = 1e-5
seed = 10
tol = 5e-3
max_iter = 12
stencil_center = [1.0]
stencil_half_width = 3.0
points_per_axis = 7

[diagnostics]
propagation_pairs = 12
propagation_cloud = 8
"#;

#[test]
fn criterion_10_command_outputs_reproduce_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("problem.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let argv: Vec<String> = std::iter::once("mfglab".to_string())
            .chain(args.iter().map(|s| s.to_string()))
            .collect();
        assert_eq!(mfglab_cli::run_with_args(&argv), 0, "command {args:?}");
    };
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    // Every command, twice, with different worker counts.
    run(&["solve", "--config", &cfg, "--out", &out("s1"), "--threads", "1"]);
    run(&["solve", "--config", &cfg, "--out", &out("s2"), "--threads", "3"]);
    run(&["oracle-compare", "--config", &cfg, "--out", &out("o1"), "--threads", "2"]);
    run(&["oracle-compare", "--config", &cfg, "--out", &out("o2"), "--threads", "1"]);
    run(&["verify-estimates", "--config", &cfg, "--out", &out("s1"), "--deltas", "0.1,0.01", "--threads", "2"]);
    for f in ["estimates.json", "estimates_terminal.csv", "estimates_measure.csv"] {
        std::fs::rename(dir.path().join("s1").join(f), dir.path().join(format!("a_{f}"))).unwrap();
    }
    run(&["verify-estimates", "--config", &cfg, "--out", &out("s1"), "--deltas", "0.1,0.01", "--threads", "1"]);
    run(&["regularize", "--family", "cubic_clipped", "--epsilons", "0.5,0.25", "--skip-growth", "--pairs", "64", "--eval-clouds", "16", "--cloud-size", "8", "--out", &out("r1"), "--threads", "1"]);
    run(&["regularize", "--family", "cubic_clipped", "--epsilons", "0.5,0.25", "--skip-growth", "--pairs", "64", "--eval-clouds", "16", "--cloud-size", "8", "--out", &out("r2"), "--threads", "3"]);
    run(&["probe-monotonicity", "--config", &cfg, "--out", &out("p1"), "--pairs", "64", "--threads", "2"]);
    run(&["probe-monotonicity", "--config", &cfg, "--out", &out("p2"), "--pairs", "64", "--threads", "1"]);

    let read = |rel: &str| std::fs::read(dir.path().join(rel)).unwrap();
    let mut diffs: Vec<&str> = Vec::new();
    for (left, right) in [
        ("s1/flow_0.csv", "s2/flow_0.csv"),
        ("s1/flow_meta_0.csv", "s2/flow_meta_0.csv"),
        ("s1/history.csv", "s2/history.csv"),
        ("s1/manifest.json", "s2/manifest.json"),
        ("s1/propagation_report.json", "s2/propagation_report.json"),
        ("o1/comparison.csv", "o2/comparison.csv"),
        ("o1/report.json", "o2/report.json"),
        ("o1/riccati.csv", "o2/riccati.csv"),
        ("o1/flow_0.csv", "o2/flow_0.csv"),
        ("a_estimates.json", "s1/estimates.json"),
        ("a_estimates_terminal.csv", "s1/estimates_terminal.csv"),
        ("a_estimates_measure.csv", "s1/estimates_measure.csv"),
        ("r1/sweep.csv", "r2/sweep.csv"),
        ("r1/certificates.json", "r2/certificates.json"),
        ("p1/probes.json", "p2/probes.json"),
    ] {
        if read(left) != read(right) {
            diffs.push(left);
        }
    }
    let pass = diffs.is_empty();
    gate(
        10,
        "every command's outputs are bitwise identical across re-runs and thread counts",
        pass,
        format!("differing outputs: {diffs:?}"),
    );
}
