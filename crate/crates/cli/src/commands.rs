use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use raff_core::datagen::{read_instance, synthesize, write_instance, DataFile, NoiseConfig, SyntheticInstance};
use raff_core::metrics::{adjustment_error, aggregate, relative_errors, score_detection, InstanceScore};
use raff_core::parallel::{available_threads, with_threads};
use raff_core::voting::StartSampler;
use raff_core::{builtin_model, raff_fit, BuiltinModel, Dataset, FitReport, Model, Protocol, VotingParams};

use crate::args::{BenchArgs, CurveArgs, EvaluateArgs, FitArgs, GenerateArgs, InstanceArgs, SolveArgs};
use crate::failure::{CmdResult, Failure};
use crate::report::FitJson;

fn emit(text: &str, out: Option<&Path>) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::from(e).context(format!("writing {}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> CmdResult<DataFile> {
    read_instance(path).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))
}

fn load_report(path: &Path) -> CmdResult<FitJson> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: not a fit report: {e}", path.display())))
}

fn default_protocol(model: BuiltinModel) -> Protocol {
    if model == BuiltinModel::Circle {
        Protocol::CircleBorder
    } else {
        Protocol::UniformOutliers
    }
}

fn make_instance(args: &InstanceArgs, p: usize, seed: u64) -> CmdResult<SyntheticInstance> {
    let protocol = args.protocol.unwrap_or_else(|| default_protocol(args.model));
    let noise = NoiseConfig {
        outlier_scale: args.outlier_scale,
        ..NoiseConfig::default()
    };
    Ok(synthesize(args.model, args.r, p, seed, protocol, &noise)?)
}

fn threads(solve: &SolveArgs) -> CmdResult<usize> {
    match solve.threads {
        Some(0) => Err(Failure::usage("--threads must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(available_threads()),
    }
}

fn voting_params(solve: &SolveArgs, seed: u64) -> VotingParams {
    let sampler = match &solve.start_box {
        Some(b) => StartSampler::UserBox {
            lower: b.lower.clone(),
            upper: b.upper.clone(),
        },
        None => StartSampler::StandardNormal,
    };
    VotingParams {
        p_min: solve.pmin,
        p_max: solve.pmax,
        n_starts: solve.starts,
        base_seed: seed,
        sampler,
        epsilon_override: solve.epsilon,
        ..VotingParams::default()
    }
}

fn fit_dataset(dataset: &Dataset, model: &dyn Model, params: &VotingParams) -> CmdResult<FitReport> {
    let report = raff_fit(dataset, model, params)?;
    if report.degraded {
        log::warn!("no trusted-point count survived preprocessing; returning the p_max fit");
    }
    Ok(report)
}

pub fn generate(args: &GenerateArgs) -> CmdResult {
    let p = args.instance.p.ok_or_else(|| Failure::usage("--p is required"))?;
    let inst = make_instance(&args.instance, p, args.seed)?;
    write_instance(&inst, &args.out)
        .map_err(|e| Failure::from(e).context(format!("writing {}", args.out.display())))?;
    println!("{}: {} points, {} outliers", args.out.display(), inst.r(), inst.outlier_set.len());
    Ok(())
}

pub fn fit(args: &FitArgs) -> CmdResult {
    let file = load(&args.data)?;
    let model = match (args.model, file.instance()) {
        (Some(m), _) => m,
        (None, Some(inst)) => inst.model,
        (None, None) => return Err(Failure::usage("--model is required for plain datasets")),
    };
    let dataset = file.dataset();
    let threads = threads(&args.solve)?;
    let params = voting_params(&args.solve, args.seed);
    let report = with_threads(threads, || fit_dataset(dataset, &model, &params))?;
    log::info!(
        "p={} with {} outliers in {:.3}s",
        report.chosen_p,
        report.outlier_indices.len(),
        report.wall_time_seconds
    );
    let json = FitJson::new(model.as_str(), dataset.len(), &report, args.seed, threads);
    let mut text = serde_json::to_string_pretty(&json).expect("report serializes");
    text.push('\n');
    emit(&text, args.out.as_deref())
}

const STATS_HEADER: &str = "FR,ER,TP,FP,Avg";

fn score_report(report: &FitJson, file: &DataFile, path: &Path) -> CmdResult<InstanceScore> {
    let inst = file
        .instance()
        .ok_or_else(|| Failure::data(format!("{}: no ground truth", path.display())))?;
    if report.r != inst.r() {
        return Err(Failure::data(format!(
            "report covers {} observations but {} has {}",
            report.r,
            path.display(),
            inst.r()
        )));
    }
    let declared: BTreeSet<usize> = report.outlier_indices.iter().copied().collect();
    Ok(score_detection(&declared, &inst.outlier_set))
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let report = load_report(&args.report)?;
    let file = load(&args.data)?;
    let s = aggregate(&[score_report(&report, &file, &args.data)?]);
    println!("{STATS_HEADER}");
    println!("{},{},{},{},{}", s.fr, s.er, s.tp, s.fp, s.avg_declared);
    Ok(())
}

pub fn bench(args: &BenchArgs) -> CmdResult {
    if args.instances == 0 {
        return Err(Failure::usage("--instances must be at least 1"));
    }
    let threads = threads(&args.solve)?;
    with_threads(threads, || {
        if args.ratios.is_empty() {
            bench_detection(args)
        } else {
            bench_sweep(args)
        }
    })
}

fn bench_detection(args: &BenchArgs) -> CmdResult {
    let p = args
        .instance
        .p
        .ok_or_else(|| Failure::usage("--p is required unless --ratios is given"))?;
    let model = args.instance.model;
    let mut scores = Vec::with_capacity(args.instances);
    let mut time = 0.0;
    let mut rows = String::from("seed,p_chosen,tp,fp,declared,all_found,exact,seconds\n");
    for k in 0..args.instances as u64 {
        let seed = args.seed + k;
        let inst = make_instance(&args.instance, p, seed)?;
        let report = fit_dataset(&inst.dataset, &model, &voting_params(&args.solve, seed))?;
        let declared: BTreeSet<usize> = report.outlier_indices.iter().copied().collect();
        let s = score_detection(&declared, &inst.outlier_set);
        writeln!(
            rows,
            "{seed},{},{},{},{},{},{},{}",
            report.chosen_p,
            s.tp,
            s.fp,
            s.declared,
            u8::from(s.all_found),
            u8::from(s.exact),
            report.wall_time_seconds
        )
        .expect("writing to a String");
        log::info!("seed {seed}: p={} tp={} fp={}", report.chosen_p, s.tp, s.fp);
        time += report.wall_time_seconds;
        scores.push(s);
    }
    if let Some(path) = &args.csv {
        emit(&rows, Some(path))?;
    }
    let s = aggregate(&scores);
    println!("{STATS_HEADER},Time");
    println!(
        "{:.3},{:.3},{:.2},{:.2},{:.2},{:.4}",
        s.fr,
        s.er,
        s.tp,
        s.fp,
        s.avg_declared,
        time / scores.len() as f64
    );
    Ok(())
}

fn bench_sweep(args: &BenchArgs) -> CmdResult {
    let model = args.instance.model;
    let r = args.instance.r;
    let mut rows = String::from("ratio,seed,raff_error,ls_error\n");
    println!("ratio,raff,ls,raff_not_worse");
    for &ratio in &args.ratios {
        if ratio >= 100 {
            return Err(Failure::usage(format!("outlier ratio {ratio}% must be below 100")));
        }
        let p = r - r * ratio as usize / 100;
        let mut rel = [0.0; 2];
        let mut not_worse = 0usize;
        for k in 0..args.instances as u64 {
            let seed = args.seed + k;
            let inst = make_instance(&args.instance, p, seed)?;
            let params = voting_params(&args.solve, seed);
            let raff = fit_dataset(&inst.dataset, &model, &params)?;
            let ls_params = VotingParams {
                p_min: Some(r),
                p_max: Some(r),
                ..params
            };
            let ls = fit_dataset(&inst.dataset, &model, &ls_params)?;
            let err = |x: &[f64]| adjustment_error(&model, x, &inst.dataset, &inst.outlier_set);
            let errors: BTreeMap<&str, f64> =
                [("raff", err(&raff.x_star)), ("ls", err(&ls.x_star))]
                    .into_iter()
                    .map(|(k, e)| (k, e.unwrap_or(f64::INFINITY)))
                    .collect();
            writeln!(rows, "{ratio},{seed},{},{}", errors["raff"], errors["ls"])
                .expect("writing to a String");
            let relative = relative_errors(&errors);
            rel[0] += relative["raff"];
            rel[1] += relative["ls"];
            not_worse += usize::from(errors["raff"] <= errors["ls"]);
        }
        let n = args.instances as f64;
        println!("{ratio},{:.4},{:.4},{:.3}", rel[0] / n, rel[1] / n, not_worse as f64 / n);
    }
    if let Some(path) = &args.csv {
        emit(&rows, Some(path))?;
    }
    Ok(())
}

pub fn curve(args: &CurveArgs) -> CmdResult {
    if args.samples < 2 {
        return Err(Failure::usage("--samples must be at least 2"));
    }
    let report = load_report(&args.report)?;
    let model = builtin_model(&report.model)?;
    let x = report
        .params()
        .ok_or_else(|| Failure::data("report has non-finite parameters"))?;
    if x.len() != model.n_params() {
        return Err(Failure::data(format!(
            "{} takes {} parameters, report has {}",
            report.model,
            model.n_params(),
            x.len()
        )));
    }
    let n = args.samples;
    let mut text = String::new();
    if model == BuiltinModel::Circle {
        text.push_str("t1,t2\n");
        for k in 0..n {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            let (a, b) = (x[0] + x[2].abs() * theta.cos(), x[1] + x[2].abs() * theta.sin());
            writeln!(text, "{a},{b}").expect("writing to a String");
        }
    } else {
        let (lo, hi) = args.range;
        text.push_str("t,y\n");
        for k in 0..n {
            let t = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let y = model.eval(&x, &[t]).map_err(raff_core::Error::from)?;
            writeln!(text, "{t},{y}").expect("writing to a String");
        }
    }
    emit(&text, args.out.as_deref())
}
