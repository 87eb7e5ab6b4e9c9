//! Parametric models `phi(x, t)` and the observations they are fitted to.
//!
//! A model maps a parameter vector `x` (length `n`) and an independent
//! variable `t` (length `m`) to a scalar. The independent variable is always
//! a slice, so one-dimensional curves receive length-1 vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};

/// Largest exponent argument accepted before reporting overflow.
pub const EXP_ARG_LIMIT: f64 = 709.0;

/// A single measurement `(t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(t: Vec<f64>, y: f64) -> Self {
        Self { t, y }
    }

    /// Convenience constructor for one-dimensional `t`.
    pub fn scalar(t: f64, y: f64) -> Self {
        Self { t: vec![t], y }
    }
}

/// An ordered collection of observations sharing one `t` dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    obs: Vec<Observation>,
}

impl Dataset {
    /// Build a dataset, checking that every value is finite and every `t`
    /// has the same dimension.
    pub fn new(obs: Vec<Observation>) -> Result<Self> {
        if let Some(first) = obs.first() {
            let m = first.t.len();
            if m == 0 {
                return Err(Error::InvalidProblem("observation with empty t".into()));
            }
            for (i, o) in obs.iter().enumerate() {
                if o.t.len() != m {
                    return Err(Error::InvalidProblem(format!(
                        "observation {i} has t-dimension {} (expected {m})",
                        o.t.len()
                    )));
                }
                if !o.y.is_finite() || o.t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidProblem(format!(
                        "observation {i} has a non-finite component"
                    )));
                }
            }
        }
        Ok(Self { obs })
    }

    /// Build a one-dimensional dataset from `(t, y)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(t, y)| Observation::scalar(t, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Dimension of the independent variable (0 for an empty dataset).
    pub fn t_dim(&self) -> usize {
        self.obs.first().map_or(0, |o| o.t.len())
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.obs[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.obs.iter()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.obs.iter()
    }
}

/// A model `phi(x, t)` with parameter gradient.
///
/// Implementors only need [`Model::eval`]; the default [`Model::jac_row`]
/// falls back to central finite differences.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// Number of parameters `n`.
    fn n_params(&self) -> usize;

    /// Dimension `m` of the independent variable.
    fn t_dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: &[f64]) -> std::result::Result<f64, EvalError>;

    /// Gradient of `phi` with respect to `x`, written into `out` (length `n`).
    fn jac_row(
        &self,
        x: &[f64],
        t: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        central_difference(self, x, t, out)
    }
}

/// Central-difference gradient with step `cbrt(eps) * max(1, |x_j|)`.
pub fn central_difference<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    t: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), EvalError> {
    let base = f64::EPSILON.cbrt();
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = base * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let fp = model.eval(&probe, t)?;
        probe[j] = x[j] - h;
        let fm = model.eval(&probe, t)?;
        probe[j] = x[j];
        out[j] = (fp - fm) / (2.0 * h);
    }
    Ok(())
}

fn guarded_exp(arg: f64) -> std::result::Result<f64, EvalError> {
    if arg.abs() > EXP_ARG_LIMIT || arg.is_nan() {
        return Err(EvalError::Overflow {
            arg,
            limit: EXP_ARG_LIMIT,
        });
    }
    Ok(arg.exp())
}

/// The built-in models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinModel {
    /// `x1 t + x2`
    Linear,
    /// `x1 t^3 + x2 t^2 + x3 t + x4`
    Cubic,
    /// `x1 + x2 exp(-x3 t)`
    #[serde(rename = "expon")]
    Exponential,
    /// `x1 + x2 / (1 + exp(-x3 t + x4))`
    Logistic,
    /// `(t1 - x1)^2 + (t2 - x2)^2 - x3^2`
    Circle,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 5] = [
        BuiltinModel::Linear,
        BuiltinModel::Cubic,
        BuiltinModel::Exponential,
        BuiltinModel::Logistic,
        BuiltinModel::Circle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinModel::Linear => "linear",
            BuiltinModel::Cubic => "cubic",
            BuiltinModel::Exponential => "expon",
            BuiltinModel::Logistic => "logistic",
            BuiltinModel::Circle => "circle",
        }
    }

    /// Parameters used to generate synthetic instances.
    pub fn reference_solution(self) -> Vec<f64> {
        match self {
            BuiltinModel::Linear => vec![-200.0, 1000.0],
            BuiltinModel::Cubic => vec![0.5, -20.0, 300.0, 1000.0],
            BuiltinModel::Exponential => vec![5000.0, 4000.0, 0.2],
            BuiltinModel::Logistic => vec![6000.0, -5000.0, -0.2, -3.7],
            BuiltinModel::Circle => vec![-10.0, 30.0, 2.0],
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BuiltinModel::Linear),
            "cubic" => Ok(BuiltinModel::Cubic),
            "expon" | "exponential" => Ok(BuiltinModel::Exponential),
            "logistic" => Ok(BuiltinModel::Logistic),
            "circle" => Ok(BuiltinModel::Circle),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

/// Look up a built-in model by name.
pub fn builtin_model(name: &str) -> Result<BuiltinModel> {
    name.parse()
}

impl Model for BuiltinModel {
    fn name(&self) -> &str {
        self.as_str()
    }

    fn n_params(&self) -> usize {
        match self {
            BuiltinModel::Linear => 2,
            BuiltinModel::Cubic | BuiltinModel::Logistic => 4,
            BuiltinModel::Exponential | BuiltinModel::Circle => 3,
        }
    }

    fn t_dim(&self) -> usize {
        match self {
            BuiltinModel::Circle => 2,
            _ => 1,
        }
    }

    fn eval(&self, x: &[f64], t: &[f64]) -> std::result::Result<f64, EvalError> {
        let v = match self {
            BuiltinModel::Linear => x[0] * t[0] + x[1],
            BuiltinModel::Cubic => {
                let s = t[0];
                ((x[0] * s + x[1]) * s + x[2]) * s + x[3]
            }
            BuiltinModel::Exponential => x[0] + x[1] * guarded_exp(-x[2] * t[0])?,
            BuiltinModel::Logistic => x[0] + x[1] / (1.0 + guarded_exp(-x[2] * t[0] + x[3])?),
            BuiltinModel::Circle => {
                let a = t[0] - x[0];
                let b = t[1] - x[1];
                a * a + b * b - x[2] * x[2]
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { index: 0, value: v })
        }
    }

    fn jac_row(
        &self,
        x: &[f64],
        t: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        match self {
            BuiltinModel::Linear => {
                out[0] = t[0];
                out[1] = 1.0;
            }
            BuiltinModel::Cubic => {
                let s = t[0];
                out[0] = s * s * s;
                out[1] = s * s;
                out[2] = s;
                out[3] = 1.0;
            }
            BuiltinModel::Exponential => {
                let e = guarded_exp(-x[2] * t[0])?;
                out[0] = 1.0;
                out[1] = e;
                out[2] = -x[1] * t[0] * e;
            }
            BuiltinModel::Logistic => {
                let e = guarded_exp(-x[2] * t[0] + x[3])?;
                let d = 1.0 + e;
                let q = x[1] * e / (d * d);
                out[0] = 1.0;
                out[1] = 1.0 / d;
                out[2] = q * t[0];
                out[3] = -q;
            }
            BuiltinModel::Circle => {
                out[0] = -2.0 * (t[0] - x[0]);
                out[1] = -2.0 * (t[1] - x[1]);
                out[2] = -2.0 * x[2];
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EvalError::NonFinite {
                index: 0,
                value: f64::NAN,
            })
        }
    }
}

type EvalFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A user-supplied model given only by its evaluation function; the
/// gradient is computed by central differences.
pub struct FnModel {
    name: String,
    n: usize,
    m: usize,
    f: Box<EvalFn>,
}

impl FnModel {
    pub fn new<F>(name: impl Into<String>, n: usize, m: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            n,
            m,
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl Model for FnModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_params(&self) -> usize {
        self.n
    }

    fn t_dim(&self) -> usize {
        self.m
    }

    fn eval(&self, x: &[f64], t: &[f64]) -> std::result::Result<f64, EvalError> {
        let v = (self.f)(x, t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { index: 0, value: v })
        }
    }
}

/// Residual `F(x) = y - phi(x, t)`.
pub fn residual<M: Model + ?Sized>(
    model: &M,
    obs: &Observation,
    x: &[f64],
) -> std::result::Result<f64, EvalError> {
    let phi = model.eval(x, &obs.t)?;
    let f = obs.y - phi;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(EvalError::NonFinite { index: 0, value: f })
    }
}

/// Row of the residual Jacobian, `dF/dx = -grad phi`, written into `out`.
pub fn residual_jac_row<M: Model + ?Sized>(
    model: &M,
    obs: &Observation,
    x: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), EvalError> {
    model.jac_row(x, &obs.t, out)?;
    for v in out.iter_mut() {
        *v = -*v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_and_dimensions() {
        let dims: Vec<_> = ["linear", "cubic", "expon", "logistic", "circle"]
            .iter()
            .map(|n| {
                let m = builtin_model(n).unwrap();
                (m.n_params(), m.t_dim())
            })
            .collect();
        assert_eq!(dims, vec![(2, 1), (4, 1), (3, 1), (4, 1), (3, 2)]);
        let err = builtin_model("quartic").unwrap_err();
        assert!(err.to_string().contains("unknown model"));
    }

    #[test]
    fn builtin_values() {
        let lin = BuiltinModel::Linear;
        assert_eq!(lin.eval(&[-200.0, 1000.0], &[1.0]).unwrap(), 800.0);
        let circ = BuiltinModel::Circle;
        assert_eq!(circ.eval(&[0.0, 0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        // 6000 - 5000 / (1 + exp(-3.7)), reference from 30-digit arithmetic.
        let log = BuiltinModel::Logistic;
        let v = log.eval(&[6000.0, -5000.0, -0.2, -3.7], &[0.0]).unwrap();
        assert!((v - 1120.635107088346).abs() < 1e-9, "{v}");
    }

    #[test]
    fn residual_examples() {
        let lin = BuiltinModel::Linear;
        assert_eq!(residual(&lin, &Observation::scalar(1.0, 2.0), &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(
            residual(&lin, &Observation::scalar(1.0, 800.0), &[-200.0, 1000.0]).unwrap(),
            0.0
        );
        let cubic = BuiltinModel::Cubic;
        assert_eq!(
            residual(&cubic, &Observation::scalar(2.0, 0.0), &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            -8.0
        );
    }

    #[test]
    fn residual_rows() {
        let mut row = [0.0; 2];
        residual_jac_row(&BuiltinModel::Linear, &Observation::scalar(1.0, 5.0), &[3.0, -7.0], &mut row)
            .unwrap();
        assert_eq!(row, [-1.0, -1.0]);
        let mut row = [0.0; 3];
        residual_jac_row(
            &BuiltinModel::Circle,
            &Observation::new(vec![1.0, 0.0], 0.0),
            &[0.0, 0.0, 1.0],
            &mut row,
        )
        .unwrap();
        assert_eq!(row, [2.0, 0.0, 2.0]);
    }

    #[test]
    fn overflow_is_an_error() {
        let e = BuiltinModel::Exponential.eval(&[0.0, 1.0, -100.0], &[10.0]);
        assert!(matches!(e, Err(EvalError::Overflow { .. })));
        let mut row = [0.0; 4];
        let e = BuiltinModel::Logistic.jac_row(&[0.0, 1.0, 0.0, 800.0], &[1.0], &mut row);
        assert!(matches!(e, Err(EvalError::Overflow { .. })));
        // Large negative arguments in the logistic saturate harmlessly.
        assert!(BuiltinModel::Logistic.eval(&[1.0, 1.0, 0.0, -700.0], &[1.0]).is_ok());
    }

    #[test]
    fn fn_model_uses_finite_differences() {
        let m = FnModel::new("quad", 2, 1, |x, t| x[0] * t[0] * t[0] + x[1].sin());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let t = [rng.random_range(-10.0..10.0)];
            let mut fd = [0.0; 2];
            m.jac_row(&x, &t, &mut fd).unwrap();
            let exact = [t[0] * t[0], x[1].cos()];
            for j in 0..2 {
                assert!((fd[j] - exact[j]).abs() <= 1e-5 * exact[j].abs().max(1.0));
            }
        }
        assert!(m.eval(&[f64::INFINITY, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::from_pairs(&[(1.0, f64::NAN)]).is_err());
        let mixed = vec![Observation::scalar(1.0, 1.0), Observation::new(vec![1.0, 2.0], 0.0)];
        assert!(Dataset::new(mixed).is_err());
        let d = Dataset::from_pairs(&[(1.0, 2.0), (2.0, 3.0)]).unwrap();
        assert_eq!((d.len(), d.t_dim()), (2, 1));
    }
}
