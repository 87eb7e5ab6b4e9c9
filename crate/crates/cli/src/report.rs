//! JSON form of a fit. Non-finite numbers are written as `null`.

use raff_core::FitReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJson {
    pub model: String,
    /// Number of model parameters.
    pub n: usize,
    pub r: usize,
    pub p_chosen: usize,
    pub x: Vec<Option<f64>>,
    pub sp: Option<f64>,
    pub outlier_indices: Vec<usize>,
    pub epsilon_used: Option<f64>,
    pub votes: Vec<usize>,
    pub per_p: Vec<PerPJson>,
    pub degraded: bool,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPJson {
    pub p: usize,
    pub x: Vec<Option<f64>>,
    pub sp: Option<f64>,
    pub status: String,
    pub grad_norm: Option<f64>,
    pub iters: usize,
    pub eliminated: bool,
    pub reason: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl FitJson {
    /// Fitted parameters, if all are finite.
    pub fn params(&self) -> Option<Vec<f64>> {
        self.x.iter().copied().collect()
    }

    pub fn new(model: &str, r: usize, report: &FitReport, seed: u64, threads: usize) -> Self {
        FitJson {
            model: model.to_string(),
            n: report.x_star.len(),
            r,
            p_chosen: report.chosen_p,
            x: report.x_star.iter().map(|&v| finite(v)).collect(),
            sp: finite(report.sp),
            outlier_indices: report.outlier_indices.clone(),
            epsilon_used: report.epsilon_used,
            votes: report.votes.clone(),
            per_p: report
                .per_p
                .iter()
                .map(|pp| PerPJson {
                    p: pp.p,
                    x: pp.outcome.x.iter().map(|&v| finite(v)).collect(),
                    sp: finite(pp.outcome.sp),
                    status: pp.outcome.status.as_str().to_string(),
                    grad_norm: finite(pp.outcome.grad_norm),
                    iters: pp.outcome.iterations,
                    eliminated: pp.eliminated,
                    reason: pp.elimination_reason.as_str().to_string(),
                })
                .collect(),
            degraded: report.degraded,
            seed,
            threads,
            wall_time_seconds: report.wall_time_seconds,
        }
    }
}
