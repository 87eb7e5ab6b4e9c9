//! Lower order-value objective: the sum of the `p` smallest squared
//! residuals and its gradient on the selected index set.

use std::cmp::Ordering;

use crate::error::{Error, EvalError, Result};
use crate::linalg::Matrix;
use crate::model::{residual, residual_jac_row, Dataset, Model};

/// A dataset, a model and the number of trusted points `p`.
#[derive(Clone, Copy)]
pub struct LovoProblem<'a> {
    dataset: &'a Dataset,
    model: &'a dyn Model,
    p: usize,
}

impl<'a> LovoProblem<'a> {
    pub fn new(dataset: &'a Dataset, model: &'a dyn Model, p: usize) -> Result<Self> {
        let r = dataset.len();
        if r == 0 {
            return Err(Error::InvalidProblem("dataset is empty".into()));
        }
        if p == 0 || p > r {
            return Err(Error::InvalidProblem(format!(
                "trusted-point count p={p} outside 1..={r}"
            )));
        }
        if dataset.t_dim() != model.t_dim() {
            return Err(Error::InvalidProblem(format!(
                "model '{}' expects t-dimension {}, dataset has {}",
                model.name(),
                model.t_dim(),
                dataset.t_dim()
            )));
        }
        Ok(Self { dataset, model, p })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn model(&self) -> &'a dyn Model {
        self.model
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.dataset.len()
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    /// Same data and model with a different `p`.
    pub fn with_p(&self, p: usize) -> Result<Self> {
        Self::new(self.dataset, self.model, p)
    }

    /// All residuals `F_i(x) = y_i - phi(x, t_i)`.
    pub fn residuals(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        self.dataset
            .iter()
            .enumerate()
            .map(|(i, o)| residual(self.model, o, x).map_err(|e| e.at(i)))
            .collect()
    }
}

impl std::fmt::Debug for LovoProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LovoProblem")
            .field("model", &self.model.name())
            .field("r", &self.r())
            .field("p", &self.p)
            .finish()
    }
}

/// The `p` observations with smallest `F_i^2 / 2` at some point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Selected observation indices in ascending order.
    pub indices: Vec<usize>,
    /// Sum of `F_i^2 / 2` over `indices`.
    pub sp_value: f64,
    /// All `r` residuals at the evaluation point.
    pub residuals: Vec<f64>,
}

impl ActiveSet {
    /// Residuals of the selected observations, in index order.
    pub fn active_residuals(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| self.residuals[i]).collect()
    }
}

fn by_size_then_index(halfsq: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| halfsq[a].total_cmp(&halfsq[b]).then(a.cmp(&b))
}

/// Evaluate all residuals and keep the `p` smallest squared ones. Ties are
/// broken by ascending observation index.
pub fn select_active(problem: &LovoProblem<'_>, x: &[f64]) -> std::result::Result<ActiveSet, EvalError> {
    let residuals = problem.residuals(x)?;
    let halfsq: Vec<f64> = residuals.iter().map(|f| 0.5 * f * f).collect();
    let p = problem.p;
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    if p < order.len() {
        order.select_nth_unstable_by(p - 1, by_size_then_index(&halfsq));
        order.truncate(p);
    }
    order.sort_unstable();
    let sp_value = order.iter().map(|&i| halfsq[i]).sum();
    Ok(ActiveSet {
        indices: order,
        sp_value,
        residuals,
    })
}

/// `S_p(x)`.
pub fn sp_value(problem: &LovoProblem<'_>, x: &[f64]) -> std::result::Result<f64, EvalError> {
    select_active(problem, x).map(|a| a.sp_value)
}

/// Gradient `J^T F` of the objective restricted to `active`.
pub fn lovo_gradient(
    problem: &LovoProblem<'_>,
    x: &[f64],
    active: &ActiveSet,
) -> std::result::Result<Vec<f64>, EvalError> {
    let n = problem.n_params();
    let mut grad = vec![0.0; n];
    let mut row = vec![0.0; n];
    for &i in &active.indices {
        residual_jac_row(problem.model, problem.dataset.get(i), x, &mut row).map_err(|e| e.at(i))?;
        let f = active.residuals[i];
        for (g, &a) in grad.iter_mut().zip(&row) {
            *g += a * f;
        }
    }
    Ok(grad)
}

/// `p x n` Jacobian of the active residuals, rows in ascending index order.
pub fn active_jacobian(
    problem: &LovoProblem<'_>,
    x: &[f64],
    active: &ActiveSet,
) -> std::result::Result<Matrix, EvalError> {
    let mut jac = Matrix::zeros(active.indices.len(), problem.n_params());
    for (k, &i) in active.indices.iter().enumerate() {
        residual_jac_row(problem.model, problem.dataset.get(i), x, jac.row_mut(k))
            .map_err(|e| e.at(i))?;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BuiltinModel, FnModel};

    fn line() -> Dataset {
        Dataset::from_pairs(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap()
    }

    /// Model returning `y` itself so residuals are chosen directly.
    fn fixed_halfsq(values: &[f64]) -> (Dataset, FnModel) {
        let pairs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &r)| (i as f64, (2.0 * r).sqrt()))
            .collect();
        (Dataset::from_pairs(&pairs).unwrap(), FnModel::new("zero", 1, 1, |_, _| 0.0))
    }

    #[test]
    fn selects_smallest() {
        let (d, m) = fixed_halfsq(&[0.5, 0.1, 0.9]);
        let pr = LovoProblem::new(&d, &m, 2).unwrap();
        let a = select_active(&pr, &[0.0]).unwrap();
        assert_eq!(a.indices, vec![0, 1]);
        assert!((a.sp_value - 0.6).abs() < 1e-15);
        let all = select_active(&pr.with_p(3).unwrap(), &[0.0]).unwrap();
        assert!((all.sp_value - 1.5).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_index() {
        let (d, m) = fixed_halfsq(&[1.0, 1.0, 1.0]);
        let pr = LovoProblem::new(&d, &m, 2).unwrap();
        assert_eq!(select_active(&pr, &[0.0]).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn sp_examples() {
        let d = line();
        let lin = BuiltinModel::Linear;
        let pr = LovoProblem::new(&d, &lin, 3).unwrap();
        assert_eq!(sp_value(&pr, &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sp_value(&pr.with_p(2).unwrap(), &[0.0, 0.0]).unwrap(), 17.0);
    }

    #[test]
    fn gradient_examples() {
        let d = Dataset::from_pairs(&[(1.0, 2.0)]).unwrap();
        let lin = BuiltinModel::Linear;
        let pr = LovoProblem::new(&d, &lin, 1).unwrap();
        let a = select_active(&pr, &[0.0, 0.0]).unwrap();
        assert_eq!(lovo_gradient(&pr, &[0.0, 0.0], &a).unwrap(), vec![-2.0, -2.0]);
        let j = active_jacobian(&pr, &[0.0, 0.0], &a).unwrap();
        assert_eq!((j.rows(), j.cols()), (1, 2));
        assert_eq!(j.row(0), &[-1.0, -1.0]);

        let d = line();
        let pr = LovoProblem::new(&d, &lin, 3).unwrap();
        let a = select_active(&pr, &[2.0, 1.0]).unwrap();
        assert_eq!(lovo_gradient(&pr, &[2.0, 1.0], &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn jacobian_rows_follow_active_order() {
        let d = Dataset::from_pairs(&[(1.0, 0.0), (2.0, 0.0), (3.0, 100.0)]).unwrap();
        let lin = BuiltinModel::Linear;
        let pr = LovoProblem::new(&d, &lin, 2).unwrap();
        let x = [0.5, 0.25];
        let a = select_active(&pr, &x).unwrap();
        assert_eq!(a.indices, vec![0, 1]);
        let j = active_jacobian(&pr, &x, &a).unwrap();
        assert_eq!(j.row(0), &[-1.0, -1.0]);
        assert_eq!(j.row(1), &[-2.0, -1.0]);
        assert_eq!(j.tr_mul_vec(&a.active_residuals()), lovo_gradient(&pr, &x, &a).unwrap());
    }

    #[test]
    fn invalid_problems() {
        let d = line();
        let lin = BuiltinModel::Linear;
        assert!(LovoProblem::new(&d, &lin, 0).is_err());
        assert!(LovoProblem::new(&d, &lin, 4).is_err());
        assert!(LovoProblem::new(&d, &BuiltinModel::Circle, 2).is_err());
        let empty = Dataset::default();
        assert!(LovoProblem::new(&empty, &lin, 1).is_err());
    }

    #[test]
    fn evaluation_error_carries_index() {
        let d = Dataset::from_pairs(&[(1.0, 0.0), (-800.0, 0.0)]).unwrap();
        let e = BuiltinModel::Exponential;
        let pr = LovoProblem::new(&d, &e, 1).unwrap();
        let err = select_active(&pr, &[0.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(err.index(), Some(1));
    }
}
