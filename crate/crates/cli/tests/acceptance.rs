//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raff_core::datagen::{generate, generate_circle, uniform_grid, write_instance};
use raff_core::linalg::norm2;
use raff_core::metrics::{adjustment_error, aggregate, score_detection};
use raff_core::voting::{similarity_tolerance, vote_and_select, Elimination, PBest, SimilarityMatrix};
use raff_core::{
    lovo_gradient, raff_fit, select_active, solve, solve_traced, sp_value,
    Acceptance, BuiltinModel, Dataset, LovoProblem, Model, Observation, Protocol, SolverOutcome,
    SolverParams, Status, VotingParams,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Central difference with a cube-root step, independent of the library's.
fn fd_gradient(model: &dyn Model, x: &[f64], t: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = f64::EPSILON.cbrt() * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let up = model.eval(&probe, t).unwrap();
            probe[j] = x[j] - h;
            let down = model.eval(&probe, t).unwrap();
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_point(model: BuiltinModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match model {
        BuiltinModel::Linear => (vec![u(-10.0, 10.0), u(-10.0, 10.0)], vec![u(-10.0, 10.0)]),
        BuiltinModel::Cubic => ((0..4).map(|_| u(-10.0, 10.0)).collect(), vec![u(-10.0, 10.0)]),
        BuiltinModel::Exponential => {
            (vec![u(-10.0, 10.0), u(-10.0, 10.0), u(-0.5, 0.5)], vec![u(-10.0, 10.0)])
        }
        BuiltinModel::Logistic => (
            vec![u(-10.0, 10.0), u(-10.0, 10.0), u(-1.0, 1.0), u(-3.0, 3.0)],
            vec![u(-5.0, 5.0)],
        ),
        BuiltinModel::Circle => (
            vec![u(-10.0, 10.0), u(-10.0, 10.0), u(0.1, 5.0)],
            vec![u(-10.0, 10.0), u(-10.0, 10.0)],
        ),
    }
}

fn gradients() -> Outcome {
    let mut worst = 0.0_f64;
    for model in BuiltinModel::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + model as u64);
        for _ in 0..100 {
            let (x, t) = random_point(model, &mut rng);
            let mut row = vec![0.0; model.n_params()];
            model.jac_row(&x, &t, &mut row).unwrap();
            for (a, b) in row.iter().zip(fd_gradient(&model, &x, &t)) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    check(worst <= 1e-5, format!("max relative deviation {worst:.2e} (limit 1e-5)"))
}

/// Smallest half sum of squares over every `p`-subset, by enumeration.
fn brute_force_sp(residuals: &[f64], p: usize) -> f64 {
    let r = residuals.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << r) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let s: f64 = (0..r)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| 0.5 * residuals[i] * residuals[i])
            .sum();
        best = best.min(s);
    }
    best
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for k in 0..50 {
        let model = if k % 2 == 0 { BuiltinModel::Linear } else { BuiltinModel::Cubic };
        let r = rng.random_range(1..=6);
        let pairs: Vec<(f64, f64)> =
            (0..r).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-20.0..20.0))).collect();
        let data = Dataset::from_pairs(&pairs).unwrap();
        for p in 1..=r {
            let problem = LovoProblem::new(&data, &model, p).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-5.0..5.0)).collect();
                let residuals: Vec<f64> =
                    pairs.iter().map(|&(t, y)| y - model.eval(&x, &[t]).unwrap()).collect();
                let expected = brute_force_sp(&residuals, p);
                let got = sp_value(&problem, &x).unwrap();
                worst = worst.max((got - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
                cases += 1;
            }
        }
    }
    check(worst <= 1e-12, format!("{cases} evaluations, max relative error {worst:.2e} (limit 1e-12)"))
}

fn noiseless(model: BuiltinModel, r: usize) -> Dataset {
    let x = model.reference_solution();
    let obs = uniform_grid(r)
        .into_iter()
        .map(|t| Observation::scalar(t, model.eval(&x, &[t]).unwrap()))
        .collect();
    Dataset::new(obs).unwrap()
}

fn solver_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut lines = Vec::new();
    let mut ok = true;
    for (model, limit) in [
        (BuiltinModel::Linear, 1e-6),
        (BuiltinModel::Cubic, 1e-6),
        (BuiltinModel::Exponential, 1e-3),
        (BuiltinModel::Logistic, 1e-3),
    ] {
        let data = noiseless(model, 30);
        let problem = LovoProblem::new(&data, &model, 30).unwrap();
        let x0: Vec<f64> = model
            .reference_solution()
            .iter()
            .map(|v| v * if rng.random::<bool>() { 1.1 } else { 0.9 })
            .collect();
        let out = solve(&problem, &x0, &SolverParams::default());
        let err = data
            .iter()
            .map(|o| (model.eval(&out.x, &o.t).unwrap() - o.y).abs())
            .fold(0.0, f64::max);
        let pass = out.status == Status::Converged
            && out.grad_norm <= 1e-4
            && out.iterations <= 400
            && err <= limit;
        ok &= pass;
        lines.push(format!(
            "{model}: {} in {} iters, grad {:.1e}, max error {err:.1e}",
            out.status.as_str(),
            out.iterations,
            out.grad_norm
        ));
    }
    check(ok, lines.join("; "))
}

fn decrease_invariant() -> Outcome {
    let mut accepted = [0usize; 2];
    let mut violations = Vec::new();
    for (mode, acceptance) in [Acceptance::SimpleDecrease, Acceptance::RhoTest { mu: 0.1 }]
        .into_iter()
        .enumerate()
    {
        let params = SolverParams {
            acceptance,
            ..SolverParams::default()
        };
        for model in [BuiltinModel::Linear, BuiltinModel::Cubic, BuiltinModel::Logistic] {
            for seed in 0..10 {
                let inst = generate(model, 20, 17, seed, Protocol::UniformOutliers).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for p in [10, 17, 20] {
                    let problem = LovoProblem::new(&inst.dataset, &model, p).unwrap();
                    let x0: Vec<f64> =
                        (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    solve_traced(&problem, &x0, &params, |e| {
                        if !e.accepted {
                            return;
                        }
                        accepted[mode] += 1;
                        let bad = match acceptance {
                            Acceptance::SimpleDecrease => !(e.trial_sp < e.sp),
                            Acceptance::RhoTest { mu } => !(e.rho.is_some_and(|r| r >= mu)),
                        };
                        if bad {
                            violations.push(format!("{model} seed {seed} p {p} iter {}", e.iteration));
                        }
                    });
                }
            }
        }
    }
    check(
        violations.is_empty() && accepted.iter().all(|&a| a > 0),
        format!(
            "{} simple-decrease and {} ratio-test accepted steps, {} violations {:?}",
            accepted[0],
            accepted[1],
            violations.len(),
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn rho_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = BuiltinModel::Cubic;
    let truth = [0.5, -1.0, 2.0, 1.0];
    let pairs: Vec<(f64, f64)> = (0..20)
        .map(|i| {
            let t = -1.0 + 2.0 * i as f64 / 19.0;
            (t, model.eval(&truth, &[t]).unwrap() + rng.random_range(-0.1..0.1))
        })
        .collect();
    let data = Dataset::from_pairs(&pairs).unwrap();
    let problem = LovoProblem::new(&data, &model, 16).unwrap();
    let x: Vec<f64> = truth.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    let active = select_active(&problem, &x).unwrap();
    let grad = lovo_gradient(&problem, &x, &active).unwrap();
    let gamma = 1e8 * norm2(&grad).powi(2);
    let jac = raff_core::active_jacobian(&problem, &x, &active).unwrap();
    let d = raff_core::solver::lm_direction(&jac, &active.active_residuals(), gamma).unwrap();
    let rho = raff_core::solver::rho(&problem, &x, &d, &active, gamma).unwrap();
    check((rho - 2.0).abs() <= 0.1, format!("rho = {rho:.6} at lambda = 1e8"))
}

fn detection_rate(model: BuiltinModel, r: usize, p: usize, protocol: Protocol, seeds: u64, starts: usize) -> f64 {
    let scores: Vec<_> = (0..seeds)
        .map(|seed| {
            let inst = generate(model, r, p, seed, protocol).unwrap();
            let params = VotingParams {
                n_starts: starts,
                base_seed: seed,
                ..VotingParams::default()
            };
            let report = raff_fit(&inst.dataset, &model, &params).unwrap();
            let declared: BTreeSet<usize> = report.outlier_indices.iter().copied().collect();
            score_detection(&declared, &inst.outlier_set)
        })
        .collect();
    aggregate(&scores).fr
}

fn small_tables() -> Outcome {
    let lin = detection_rate(BuiltinModel::Linear, 10, 9, Protocol::UniformOutliers, 100, 10);
    let cub = detection_rate(BuiltinModel::Cubic, 10, 9, Protocol::UniformOutliers, 100, 10);
    check(
        lin >= 0.75 && cub >= 0.70,
        format!("linear FR {lin:.3} (need 0.75), cubic FR {cub:.3} (need 0.70)"),
    )
}

fn clustered_table() -> Outcome {
    let fr = detection_rate(BuiltinModel::Linear, 100, 90, Protocol::ClusteredOutliers, 50, 100);
    check(fr >= 0.85, format!("clustered linear FR {fr:.3} (need 0.85)"))
}

fn circle_robustness() -> Outcome {
    let model = BuiltinModel::Circle;
    let r = 100;
    let mut ok = true;
    let mut parts = Vec::new();
    for ratio in [10, 20, 30, 40] {
        let p = r - r * ratio / 100;
        let mut wins = 0;
        for seed in 0..20 {
            let inst = generate_circle(Protocol::CircleBorder, r, p, seed).unwrap();
            let params = VotingParams {
                n_starts: 10,
                base_seed: seed,
                ..VotingParams::default()
            };
            let raff = raff_fit(&inst.dataset, &model, &params).unwrap();
            let ls_params = VotingParams {
                p_min: Some(r),
                p_max: Some(r),
                ..params
            };
            let ls = raff_fit(&inst.dataset, &model, &ls_params).unwrap();
            let err = |x: &[f64]| adjustment_error(&model, x, &inst.dataset, &inst.outlier_set).unwrap();
            if err(&raff.x_star) <= err(&ls.x_star) {
                wins += 1;
            }
        }
        ok &= wins as f64 >= 0.9 * 20.0;
        parts.push(format!("{ratio}%: {wins}/20"));
    }
    check(ok, format!("raff not worse than least squares: {}", parts.join(", ")))
}

fn fit_json(data: &std::path::Path, threads: usize) -> serde_json::Value {
    let out = Command::new(env!("CARGO_BIN_EXE_raff"))
        .args(["fit", "--starts", "20", "--seed", "42", "--threads", &threads.to_string(), "--data"])
        .arg(data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("wall_time_seconds");
    obj.remove("threads");
    v
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    for (model, r, p) in [(BuiltinModel::Logistic, 10, 9), (BuiltinModel::Cubic, 40, 34)] {
        let path = dir.path().join(format!("{model}.csv"));
        write_instance(&generate(model, r, p, 13, Protocol::UniformOutliers).unwrap(), &path).unwrap();
        same &= fit_json(&path, 1) == fit_json(&path, 4);
    }
    check(same, format!("reports for 1 and 4 threads {}", if same { "identical" } else { "differ" }))
}

fn worked_vote() -> Outcome {
    let m = SimilarityMatrix::from_lower(2, 3, &[1.0, 2.0, 3.0]);
    let eps = similarity_tolerance(&m).unwrap();
    let outcomes: Vec<PBest> = (2..=4)
        .map(|p| PBest {
            p,
            outcome: SolverOutcome {
                x: vec![p as f64],
                status: Status::Converged,
                iterations: 0,
                sp: 0.0,
                grad_norm: 0.0,
                active_indices: (0..p).collect(),
            },
            converged: true,
        })
        .collect();
    let report = vote_and_select(&m, &[Elimination::None; 3], &outcomes, eps, 4);
    check(
        (eps - 5.0 / 3.0).abs() <= 1e-15 && report.votes == [2, 2, 1] && report.chosen_p == 3,
        format!("epsilon {eps}, votes {:?}, chosen p {}", report.votes, report.chosen_p),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradients),
        ("objective matches brute force", oracle_equivalence),
        ("solver recovery on noiseless data", solver_recovery),
        ("accepted steps decrease", decrease_invariant),
        ("reduction ratio tends to 2", rho_limit),
        ("detection on small instances", small_tables),
        ("detection with clustered outliers", clustered_table),
        ("circle robustness", circle_robustness),
        ("determinism across thread counts", determinism),
        ("worked voting example", worked_vote),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name} ({secs:.1}s): {detail}", k + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
