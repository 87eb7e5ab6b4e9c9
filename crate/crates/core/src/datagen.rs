//! Synthetic instances with planted outliers, and the text format used to
//! store them.
//!
//! Curve instances place `r` points uniformly on `t in [1, 30]`, perturb every
//! value with Gaussian noise and scale the noise of the outliers by
//! `7 s xi'`, where `xi'` is uniform on `[1, 2]` and the sign `s` is shared by
//! all outliers of an instance. Circle instances sample points on the circle
//! of center `(-10, 30)` and radius 2.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuiltinModel, Dataset, Model, Observation};

/// Interval of `t` for curve instances.
pub const T_RANGE: (f64, f64) = (1.0, 30.0);
/// Interval of `t` holding clustered outliers.
pub const CLUSTER_RANGE: (f64, f64) = (5.0, 10.0);
pub const CIRCLE_CENTER: (f64, f64) = (-10.0, 30.0);
pub const CIRCLE_RADIUS: f64 = 2.0;

const HEADER_TAG: &str = "# raff-instance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Outliers drawn uniformly among all indices.
    #[serde(rename = "uniform")]
    UniformOutliers,
    /// Outliers drawn among the points with `t` in [`CLUSTER_RANGE`].
    #[serde(rename = "cluster")]
    ClusteredOutliers,
    /// Every point on the circle; outliers get much larger noise.
    CircleBorder,
    /// Inliers on the circle, outliers uniform in the surrounding square.
    #[serde(rename = "circle-uniform")]
    CircleUniformSquare,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::UniformOutliers => "uniform",
            Protocol::ClusteredOutliers => "cluster",
            Protocol::CircleBorder => "circle-border",
            Protocol::CircleUniformSquare => "circle-uniform",
        }
    }

    pub fn is_circle(self) -> bool {
        matches!(self, Protocol::CircleBorder | Protocol::CircleUniformSquare)
    }

    fn default_for(model: BuiltinModel) -> Self {
        if model == BuiltinModel::Circle {
            Protocol::CircleBorder
        } else {
            Protocol::UniformOutliers
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Protocol::UniformOutliers),
            "cluster" | "clustered" => Ok(Protocol::ClusteredOutliers),
            "circle-border" => Ok(Protocol::CircleBorder),
            "circle-uniform" => Ok(Protocol::CircleUniformSquare),
            other => Err(Error::Generation(format!("unknown protocol '{other}'"))),
        }
    }
}

/// What the outlier factor `7·s·ξ′` multiplies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OutlierScale {
    /// The point's own normal draw `ξ`, so small draws give small deviations.
    #[default]
    Draw,
    /// The noise level `σ`, so every outlier sits `7σ` to `14σ` off the curve on side `s`.
    Sigma,
}

impl OutlierScale {
    pub fn as_str(self) -> &'static str {
        match self {
            OutlierScale::Draw => "draw",
            OutlierScale::Sigma => "sigma",
        }
    }
}

impl fmt::Display for OutlierScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutlierScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "draw" => Ok(OutlierScale::Draw),
            "sigma" => Ok(OutlierScale::Sigma),
            other => Err(Error::Generation(format!("unknown outlier scale '{other}'"))),
        }
    }
}

/// Noise magnitudes. Every `sigma` is a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub curve_sigma: f64,
    pub outlier_factor: f64,
    pub outlier_scale: OutlierScale,
    pub circle_inlier_sigma: f64,
    pub circle_outlier_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            curve_sigma: 200.0,
            outlier_factor: 7.0,
            outlier_scale: OutlierScale::Draw,
            circle_inlier_sigma: 0.1,
            circle_outlier_sigma: 2.0,
        }
    }
}

/// Random draws behind one curve observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub xi: f64,
    /// Uniform `[1, 2]` factor, outliers only.
    pub xi_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub dataset: Dataset,
    pub x_star: Vec<f64>,
    pub outlier_set: BTreeSet<usize>,
    pub model: BuiltinModel,
    pub seed: u64,
    pub protocol: Protocol,
    /// Per-observation draws of curve instances; empty otherwise and after
    /// reading from a file.
    pub draws: Vec<NoiseDraw>,
}

impl SyntheticInstance {
    pub fn r(&self) -> usize {
        self.dataset.len()
    }

    /// Number of inliers.
    pub fn p(&self) -> usize {
        self.r() - self.outlier_set.len()
    }
}

/// Uniformly spaced `t` values on [`T_RANGE`].
pub fn uniform_grid(r: usize) -> Vec<f64> {
    let (lo, hi) = T_RANGE;
    if r == 1 {
        return vec![lo];
    }
    (0..r)
        .map(|i| lo + i as f64 * (hi - lo) / (r - 1) as f64)
        .collect()
}

fn check_counts(r: usize, p: usize) -> Result<()> {
    if r == 0 || p == 0 || p > r {
        return Err(Error::Generation(format!("need 1 <= p <= r, got r={r} p={p}")));
    }
    Ok(())
}

/// Generate an instance with the default noise.
pub fn generate(
    model: BuiltinModel,
    r: usize,
    p: usize,
    seed: u64,
    protocol: Protocol,
) -> Result<SyntheticInstance> {
    generate_with(model, r, p, seed, protocol, &NoiseConfig::default())
}

pub fn generate_with(
    model: BuiltinModel,
    r: usize,
    p: usize,
    seed: u64,
    protocol: Protocol,
    noise: &NoiseConfig,
) -> Result<SyntheticInstance> {
    if protocol.is_circle() {
        if model != BuiltinModel::Circle {
            return Err(Error::Generation(format!(
                "protocol '{protocol}' requires the circle model"
            )));
        }
        return generate_circle_with(protocol, r, p, seed, noise);
    }
    if model == BuiltinModel::Circle {
        return Err(Error::Generation(format!(
            "protocol '{protocol}' is for curve models, not circle"
        )));
    }
    check_counts(r, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = uniform_grid(r);
    let n_out = r - p;

    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let outlier_set: BTreeSet<usize> = match protocol {
        Protocol::UniformOutliers => index::sample(&mut rng, r, n_out).into_iter().collect(),
        Protocol::ClusteredOutliers => {
            let (lo, hi) = CLUSTER_RANGE;
            let pool: Vec<usize> = (0..r).filter(|&i| ts[i] >= lo && ts[i] <= hi).collect();
            if pool.len() < n_out {
                return Err(Error::Generation(format!(
                    "only {} points have t in [{lo}, {hi}], cannot place {n_out} clustered outliers",
                    pool.len()
                )));
            }
            index::sample(&mut rng, pool.len(), n_out)
                .into_iter()
                .map(|k| pool[k])
                .collect()
        }
        Protocol::CircleBorder | Protocol::CircleUniformSquare => unreachable!(),
    };

    let x_star = model.reference_solution();
    let normal = Normal::new(0.0, noise.curve_sigma)
        .map_err(|e| Error::Generation(format!("bad noise level: {e}")))?;
    let mut obs = Vec::with_capacity(r);
    let mut draws = Vec::with_capacity(r);
    for (i, &t) in ts.iter().enumerate() {
        let phi = model.eval(&x_star, &[t])?;
        let xi = normal.sample(&mut rng);
        let (y, xi_prime) = if outlier_set.contains(&i) {
            let xp = rng.random_range(1.0..=2.0);
            let base = match noise.outlier_scale {
                OutlierScale::Draw => xi,
                OutlierScale::Sigma => noise.curve_sigma,
            };
            (phi + noise.outlier_factor * sign * xp * base, Some(xp))
        } else {
            (phi + xi, None)
        };
        obs.push(Observation::scalar(t, y));
        draws.push(NoiseDraw { xi, xi_prime });
    }
    Ok(SyntheticInstance {
        dataset: Dataset::new(obs)?,
        x_star,
        outlier_set,
        model,
        seed,
        protocol,
        draws,
    })
}

/// Generate a circle instance with the default noise.
/// Dispatch to [`generate_with`] or [`generate_circle_with`] by protocol.
pub fn synthesize(
    model: BuiltinModel,
    r: usize,
    p: usize,
    seed: u64,
    protocol: Protocol,
    noise: &NoiseConfig,
) -> Result<SyntheticInstance> {
    match (protocol.is_circle(), model) {
        (true, BuiltinModel::Circle) => generate_circle_with(protocol, r, p, seed, noise),
        (true, _) => Err(Error::Generation(format!("'{protocol}' needs the circle model"))),
        (false, _) => generate_with(model, r, p, seed, protocol, noise),
    }
}

pub fn generate_circle(protocol: Protocol, r: usize, p: usize, seed: u64) -> Result<SyntheticInstance> {
    generate_circle_with(protocol, r, p, seed, &NoiseConfig::default())
}

pub fn generate_circle_with(
    protocol: Protocol,
    r: usize,
    p: usize,
    seed: u64,
    noise: &NoiseConfig,
) -> Result<SyntheticInstance> {
    if !protocol.is_circle() {
        return Err(Error::Generation(format!("'{protocol}' is not a circle protocol")));
    }
    check_counts(r, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outlier_set: BTreeSet<usize> = index::sample(&mut rng, r, r - p).into_iter().collect();
    let gauss = |sigma: f64| {
        Normal::new(0.0, sigma).map_err(|e| Error::Generation(format!("bad noise level: {e}")))
    };
    let inlier_noise = gauss(noise.circle_inlier_sigma)?;
    let outlier_noise = gauss(noise.circle_outlier_sigma)?;
    let (cx, cy) = CIRCLE_CENTER;
    let half = 2.0 * CIRCLE_RADIUS;

    let mut obs = Vec::with_capacity(r);
    for i in 0..r {
        let is_outlier = outlier_set.contains(&i);
        let t = if is_outlier && protocol == Protocol::CircleUniformSquare {
            vec![
                rng.random_range(cx - half..=cx + half),
                rng.random_range(cy - half..=cy + half),
            ]
        } else {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = if is_outlier { &outlier_noise } else { &inlier_noise };
            vec![
                cx + CIRCLE_RADIUS * theta.cos() + dist.sample(&mut rng),
                cy + CIRCLE_RADIUS * theta.sin() + dist.sample(&mut rng),
            ]
        };
        obs.push(Observation::new(t, 0.0));
    }
    Ok(SyntheticInstance {
        dataset: Dataset::new(obs)?,
        x_star: BuiltinModel::Circle.reference_solution(),
        outlier_set,
        model: BuiltinModel::Circle,
        seed,
        protocol,
        draws: Vec::new(),
    })
}

/// Contents of a data file.
#[derive(Debug, Clone, PartialEq)]
pub enum DataFile {
    /// A generated instance with ground truth.
    Instance(SyntheticInstance),
    /// Observations only.
    Plain(Dataset),
}

impl DataFile {
    pub fn dataset(&self) -> &Dataset {
        match self {
            DataFile::Instance(inst) => &inst.dataset,
            DataFile::Plain(d) => d,
        }
    }

    pub fn instance(&self) -> Option<&SyntheticInstance> {
        match self {
            DataFile::Instance(inst) => Some(inst),
            DataFile::Plain(_) => None,
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Render an instance in the `raff-instance v1` text format.
pub fn format_instance(inst: &SyntheticInstance) -> String {
    let model = inst.model;
    let mut out = String::new();
    writeln!(
        out,
        "{HEADER_TAG} v1 model={} n={} m={} r={} p={} seed={} xstar={} protocol={}",
        model,
        model.n_params(),
        model.t_dim(),
        inst.r(),
        inst.p(),
        inst.seed,
        join(&inst.x_star),
        inst.protocol
    )
    .expect("writing to a String");
    for (i, o) in inst.dataset.iter().enumerate() {
        let flag = u8::from(inst.outlier_set.contains(&i));
        writeln!(out, "{},{},{}", join(&o.t), o.y, flag).expect("writing to a String");
    }
    out
}

pub fn write_instance(inst: &SyntheticInstance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_instance(inst))?;
    Ok(())
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<DataFile> {
    parse_data(&std::fs::read_to_string(path)?)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("invalid number '{tok}'")))
        })
        .collect()
}

/// Parse either an instance file or a plain `t_1,...,t_m,y` dataset.
pub fn parse_data(text: &str) -> Result<DataFile> {
    let first = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty());
    match first {
        Some((idx, line)) if line.trim_start().starts_with(HEADER_TAG) => {
            parse_instance(text, idx, line.trim())
        }
        _ => parse_plain(text).map(DataFile::Plain),
    }
}

fn parse_plain(text: &str) -> Result<Dataset> {
    let mut width = None;
    let mut obs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = parse_row(line_no, line)?;
        if vals.len() < 2 {
            return Err(parse_err(line_no, "expected at least two columns (t, y)"));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {w} columns, found {}", vals.len()),
                ))
            }
            _ => {}
        }
        let (t, y) = vals.split_at(vals.len() - 1);
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite value"));
        }
        obs.push(Observation::new(t.to_vec(), y[0]));
    }
    if obs.is_empty() {
        return Err(parse_err(0, "no observations"));
    }
    Dataset::new(obs)
}

fn parse_instance(text: &str, header_idx: usize, header: &str) -> Result<DataFile> {
    let hl = header_idx + 1;
    let mut tokens = header[HEADER_TAG.len()..].split_whitespace();
    match tokens.next() {
        Some("v1") => {}
        other => {
            return Err(parse_err(
                hl,
                format!("unsupported instance version {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut fields = std::collections::HashMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(hl, format!("malformed header field '{tok}'")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| parse_err(hl, format!("missing header field '{k}'")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| parse_err(hl, format!("header field '{k}' is not an integer")))
    };
    let model: BuiltinModel = get("model")?
        .parse()
        .map_err(|e: Error| parse_err(hl, e.to_string()))?;
    let (n, m, r, p, seed) = (int("n")?, int("m")?, int("r")?, int("p")?, int("seed")?);
    let (n, m, r, p) = (n as usize, m as usize, r as usize, p as usize);
    if n != model.n_params() || m != model.t_dim() {
        return Err(parse_err(
            hl,
            format!("n={n} m={m} do not match model '{model}'"),
        ));
    }
    let x_star = parse_row(hl, get("xstar")?)?;
    if x_star.len() != n {
        return Err(parse_err(hl, format!("xstar has {} values, expected {n}", x_star.len())));
    }
    let protocol = match fields.get("protocol") {
        Some(s) => s.parse().map_err(|e: Error| parse_err(hl, e.to_string()))?,
        None => Protocol::default_for(model),
    };

    let mut obs = Vec::with_capacity(r);
    let mut outlier_set = BTreeSet::new();
    for (idx, line) in text.lines().enumerate().skip(header_idx + 1) {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = parse_row(line_no, line)?;
        if vals.len() != m + 2 {
            return Err(parse_err(
                line_no,
                format!("expected {} columns, found {}", m + 2, vals.len()),
            ));
        }
        let flag = vals[m + 1];
        if flag == 1.0 {
            outlier_set.insert(obs.len());
        } else if flag != 0.0 {
            return Err(parse_err(line_no, format!("outlier flag must be 0 or 1, got {flag}")));
        }
        if vals[..=m].iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite value"));
        }
        obs.push(Observation::new(vals[..m].to_vec(), vals[m]));
    }
    if obs.len() != r {
        return Err(parse_err(hl, format!("header says r={r}, found {} rows", obs.len())));
    }
    if r - outlier_set.len() != p {
        return Err(parse_err(
            hl,
            format!("header says p={p}, found {} flagged outliers", outlier_set.len()),
        ));
    }
    Ok(DataFile::Instance(SyntheticInstance {
        dataset: Dataset::new(obs)?,
        x_star,
        outlier_set,
        model,
        seed,
        protocol,
        draws: Vec::new(),
    }))
}
