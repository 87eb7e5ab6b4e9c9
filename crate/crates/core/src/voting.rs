//! Multistart voting over the number of trusted points.
//!
//! For every `p` in `[p_min, p_max]` the solver is run from several random
//! starting points and the best converged solution is kept. Solutions that
//! cannot be global minimizers are discarded, pairwise distances between the
//! remaining ones are computed, and each `p` collects one vote per solution
//! lying within the similarity tolerance. The most voted `p` wins, ties going
//! to the larger `p`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::lovo::LovoProblem;
use crate::model::{Dataset, Model};
use crate::parallel::{map_indexed, Execution};
use crate::solver::{solve, SolverOutcome, SolverParams};

/// Distribution of multistart initial points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSampler {
    /// Independent standard normal coordinates.
    #[default]
    StandardNormal,
    /// Uniform in a box. Bounds of length 1 apply to every coordinate.
    UserBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl StartSampler {
    fn validate(&self, n: usize) -> Result<()> {
        if let StartSampler::UserBox { lower, upper } = self {
            let ok_len = |v: &Vec<f64>| v.len() == 1 || v.len() == n;
            if !ok_len(lower) || !ok_len(upper) {
                return Err(Error::InvalidParams(format!(
                    "start box bounds must have length 1 or {n}"
                )));
            }
            for j in 0..n {
                let (lo, hi) = (bound(lower, j), bound(upper, j));
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "start box coordinate {j}: [{lo}, {hi}] is not a finite interval"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            StartSampler::StandardNormal => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            StartSampler::UserBox { lower, upper } => (0..n)
                .map(|j| {
                    let (lo, hi) = (bound(lower, j), bound(upper, j));
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect(),
        }
    }
}

fn bound(v: &[f64], j: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingParams {
    /// Defaults to `ceil(r / 2)`.
    pub p_min: Option<usize>,
    /// Defaults to `r`.
    pub p_max: Option<usize>,
    pub n_starts: usize,
    pub base_seed: u64,
    pub sampler: StartSampler,
    pub solver: SolverParams,
    pub epsilon_override: Option<f64>,
    pub execution: Execution,
}

impl Default for VotingParams {
    fn default() -> Self {
        Self {
            p_min: None,
            p_max: None,
            n_starts: 1,
            base_seed: 0,
            sampler: StartSampler::StandardNormal,
            solver: SolverParams::default(),
            epsilon_override: None,
            execution: Execution::Parallel,
        }
    }
}

impl VotingParams {
    /// Concrete `[p_min, p_max]` for a dataset of `r` points.
    pub fn p_range(&self, r: usize) -> Result<(usize, usize)> {
        let p_min = self.p_min.unwrap_or(r.div_ceil(2));
        let p_max = self.p_max.unwrap_or(r);
        if p_min == 0 || p_min > p_max || p_max > r {
            return Err(Error::InvalidParams(format!(
                "need 1 <= p_min <= p_max <= r, got p_min={p_min} p_max={p_max} r={r}"
            )));
        }
        Ok((p_min, p_max))
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidParams("n_starts must be at least 1".into()));
        }
        if let Some(eps) = self.epsilon_override {
            if !(eps > 0.0) {
                return Err(Error::InvalidParams("epsilon override must be positive".into()));
            }
        }
        self.sampler.validate(n)?;
        self.solver.validate()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `start`-th run for trusted-point count `p`.
pub fn task_seed(base_seed: u64, p: usize, start: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ p as u64) ^ start as u64)
}

/// Best multistart solution for one value of `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PBest {
    pub p: usize,
    /// Best converged run, or the best run overall when none converged.
    pub outcome: SolverOutcome,
    /// Whether any run converged.
    pub converged: bool,
}

fn better(candidate: &SolverOutcome, current: &SolverOutcome) -> bool {
    match (candidate.sp.is_finite(), current.sp.is_finite()) {
        (true, true) => candidate.sp < current.sp,
        (c, k) => c && !k,
    }
}

fn multistart(problem: &LovoProblem<'_>, params: &VotingParams) -> PBest {
    let n = problem.n_params();
    let mut best_conv: Option<SolverOutcome> = None;
    let mut best_any: Option<SolverOutcome> = None;
    for s in 0..params.n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(params.base_seed, problem.p(), s));
        let x0 = params.sampler.sample(n, &mut rng);
        let out = solve(problem, &x0, &params.solver);
        if out.converged() && best_conv.as_ref().is_none_or(|b| better(&out, b)) {
            best_conv = Some(out.clone());
        }
        if best_any.as_ref().is_none_or(|b| better(&out, b)) {
            best_any = Some(out);
        }
    }
    let converged = best_conv.is_some();
    PBest {
        p: problem.p(),
        outcome: best_conv.or(best_any).expect("n_starts >= 1"),
        converged,
    }
}

/// Run the multistart solver for every `p` in the configured range.
pub fn best_per_p(dataset: &Dataset, model: &dyn Model, params: &VotingParams) -> Result<Vec<PBest>> {
    let (p_min, p_max) = params.p_range(dataset.len())?;
    params.validate(model.n_params())?;
    let base = LovoProblem::new(dataset, model, p_max)?;
    let results = map_indexed(p_max - p_min + 1, params.execution, |k| {
        let problem = base.with_p(p_min + k).expect("p within validated range");
        multistart(&problem, params)
    });
    Ok(results)
}

/// Why a value of `p` was excluded from voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elimination {
    None,
    /// A larger `p` reached a smaller objective.
    Dominated,
    /// The largest `p` fits fewer than half of the points better than the
    /// best smaller `p`.
    PmaxRule,
    /// No run converged.
    Failed,
}

impl Elimination {
    pub fn is_eliminated(self) -> bool {
        self != Elimination::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Elimination::None => "none",
            Elimination::Dominated => "dominated",
            Elimination::PmaxRule => "pmax_rule",
            Elimination::Failed => "failed",
        }
    }
}

/// Mark solutions that cannot be global minimizers. `outcomes` must be
/// ordered by ascending `p`.
pub fn preprocess(outcomes: &[PBest], dataset: &Dataset, model: &dyn Model) -> Vec<Elimination> {
    let mut marks: Vec<Elimination> = outcomes
        .iter()
        .map(|b| if b.converged { Elimination::None } else { Elimination::Failed })
        .collect();
    let valid: Vec<usize> = (0..outcomes.len()).filter(|&k| outcomes[k].converged).collect();

    for &q in &valid {
        let sq = outcomes[q].outcome.sp;
        if valid.iter().any(|&p| p > q && sq > outcomes[p].outcome.sp) {
            marks[q] = Elimination::Dominated;
        }
    }

    let last = outcomes.len().saturating_sub(1);
    if outcomes.len() >= 2 && marks[last] == Elimination::None {
        let best_smaller = (0..last)
            .filter(|&k| marks[k] == Elimination::None)
            .min_by(|&a, &b| outcomes[a].outcome.sp.total_cmp(&outcomes[b].outcome.sp));
        if let Some(k) = best_smaller {
            let xs = &outcomes[k].outcome.x;
            let xm = &outcomes[last].outcome.x;
            if outcomes[k].outcome.sp < outcomes[last].outcome.sp {
                let closer = dataset
                    .iter()
                    .filter(|o| match (model.eval(xs, &o.t), model.eval(xm, &o.t)) {
                        (Ok(a), Ok(b)) => (o.y - a).abs() < (o.y - b).abs(),
                        _ => false,
                    })
                    .count();
                if 2 * closer >= dataset.len() {
                    marks[last] = Elimination::PmaxRule;
                }
            }
        }
    }
    marks
}

/// Pairwise distances between per-`p` solutions; eliminated entries are
/// infinite along their whole row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    p_min: usize,
    size: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn build(outcomes: &[PBest], marks: &[Elimination]) -> Self {
        let size = outcomes.len();
        let p_min = outcomes.first().map_or(0, |b| b.p);
        let mut data = vec![f64::INFINITY; size * size];
        for a in 0..size {
            if marks[a].is_eliminated() {
                continue;
            }
            for b in 0..size {
                if marks[b].is_eliminated() {
                    continue;
                }
                let diff: Vec<f64> = outcomes[a]
                    .outcome
                    .x
                    .iter()
                    .zip(&outcomes[b].outcome.x)
                    .map(|(u, v)| u - v)
                    .collect();
                data[a * size + b] = norm2(&diff);
            }
        }
        Self { p_min, size, data }
    }

    /// Build from explicit rows, with `p` ranging from `p_min`.
    pub fn from_rows(p_min: usize, rows: &[Vec<f64>]) -> Self {
        let size = rows.len();
        assert!(rows.iter().all(|r| r.len() == size), "matrix must be square");
        Self {
            p_min,
            size,
            data: rows.concat(),
        }
    }

    /// Build a symmetric matrix with zero diagonal from strict lower-triangle
    /// entries listed row by row: `M[1][0], M[2][0], M[2][1], ...`.
    pub fn from_lower(p_min: usize, size: usize, lower: &[f64]) -> Self {
        assert_eq!(lower.len(), size * size.saturating_sub(1) / 2);
        let mut data = vec![0.0; size * size];
        let mut it = lower.iter();
        for a in 1..size {
            for b in 0..a {
                let v = *it.next().expect("length checked");
                data[a * size + b] = v;
                data[b * size + a] = v;
            }
        }
        Self { p_min, size, data }
    }

    pub fn p_min(&self) -> usize {
        self.p_min
    }

    pub fn p_max(&self) -> usize {
        self.p_min + self.size - 1
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry for trusted-point counts `p` and `q`.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.data[(p - self.p_min) * self.size + (q - self.p_min)]
    }

    fn at(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }

    fn finite_lower(&self) -> impl Iterator<Item = f64> + '_ {
        (1..self.size)
            .flat_map(move |a| (0..a).map(move |b| self.at(a, b)))
            .filter(|v| v.is_finite())
    }
}

/// Automatic similarity tolerance
/// `min(M) + avg(M) / (1 + sqrt(p_max))` over finite strict-lower entries.
pub fn similarity_tolerance(m: &SimilarityMatrix) -> Result<f64> {
    let (mut min, mut sum, mut count) = (f64::INFINITY, 0.0, 0usize);
    for v in m.finite_lower() {
        min = min.min(v);
        sum += v;
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedTolerance);
    }
    let avg = sum / count as f64;
    Ok(min + avg / (1.0 + (m.p_max() as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPReport {
    pub p: usize,
    pub outcome: SolverOutcome,
    pub eliminated: bool,
    pub elimination_reason: Elimination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub chosen_p: usize,
    pub x_star: Vec<f64>,
    /// Objective value of the chosen solution.
    pub sp: f64,
    /// Observations outside the chosen trusted set, ascending, 0-based.
    pub outlier_indices: Vec<usize>,
    /// Tolerance used for voting; `None` when it was undefined.
    pub epsilon_used: Option<f64>,
    /// Votes per `p`, starting at `p_min`.
    pub votes: Vec<usize>,
    pub per_p: Vec<PerPReport>,
    pub p_min: usize,
    pub p_max: usize,
    /// Set when no `p` survived and the `p_max` solution was returned as is.
    pub degraded: bool,
    pub wall_time_seconds: f64,
}

/// Count votes and pick the winning `p`.
pub fn vote_and_select(
    m: &SimilarityMatrix,
    marks: &[Elimination],
    outcomes: &[PBest],
    epsilon: f64,
    r: usize,
) -> FitReport {
    let size = m.size();
    let votes: Vec<usize> = (0..size)
        .map(|a| (0..size).filter(|&b| m.at(a, b) < epsilon).count())
        .collect();
    let winner = (0..size)
        .filter(|&k| !marks[k].is_eliminated())
        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(a.cmp(&b)));
    let (k, degraded) = match winner {
        Some(k) => (k, false),
        None => (size - 1, true),
    };
    let chosen = &outcomes[k].outcome;
    let mut trusted = vec![false; r];
    for &i in &chosen.active_indices {
        trusted[i] = true;
    }
    let outlier_indices = if chosen.active_indices.is_empty() {
        Vec::new()
    } else {
        (0..r).filter(|&i| !trusted[i]).collect()
    };
    FitReport {
        chosen_p: outcomes[k].p,
        x_star: chosen.x.clone(),
        sp: chosen.sp,
        outlier_indices,
        epsilon_used: Some(epsilon),
        votes,
        per_p: outcomes
            .iter()
            .zip(marks)
            .map(|(b, &mark)| PerPReport {
                p: b.p,
                outcome: b.outcome.clone(),
                eliminated: mark.is_eliminated(),
                elimination_reason: mark,
            })
            .collect(),
        p_min: m.p_min(),
        p_max: m.p_max(),
        degraded,
        wall_time_seconds: 0.0,
    }
}

/// Fit `model` to `dataset`, estimating the number of trusted points.
pub fn raff_fit(dataset: &Dataset, model: &dyn Model, params: &VotingParams) -> Result<FitReport> {
    let start = Instant::now();
    let outcomes = best_per_p(dataset, model, params)?;
    let marks = preprocess(&outcomes, dataset, model);
    let m = SimilarityMatrix::build(&outcomes, &marks);
    let epsilon = match params.epsilon_override {
        Some(eps) => Some(eps),
        None => match similarity_tolerance(&m) {
            // Identical solutions give a zero tolerance; keep self-votes alive.
            Ok(eps) => Some(eps.max(f64::MIN_POSITIVE)),
            Err(Error::UndefinedTolerance) => None,
            Err(e) => return Err(e),
        },
    };
    let mut report = vote_and_select(
        &m,
        &marks,
        &outcomes,
        epsilon.unwrap_or(f64::MIN_POSITIVE),
        dataset.len(),
    );
    report.epsilon_used = epsilon;
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
