use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fastfm::bench::{fit_line, median_by_rank, rank_sweep, timings_csv, BenchSolver};
use fastfm::mcmc::{mcmc_fit_predict_with, GibbsHooks};
use fastfm::model::predict_parallel;
use fastfm::probit::{ln_normal_cdf, ln_sigmoid, normal_cdf, sigmoid};
use fastfm::sgd::parse_pairs_csv;
use fastfm::{
    als_fit, als_fit_classification, bpr_fit, load_model, predict, save_model, sgd_fit, FitReport,
    FmError, FmParams, LabeledData, LibsvmOptions, RankingPairs, SolverConfig, SparseRowMatrix,
    Task,
};
use serde_json::json;

use crate::{
    BenchSolverArg, BenchmarkArgs, CliError, FitArgs, ModelArgs, PredictArgs, SolverArg, TaskArg,
};

fn input_error(path: &Path, source: FmError) -> CliError {
    CliError::Input {
        path: path.display().to_string(),
        source,
    }
}

fn read_libsvm(path: &Path, one_based: bool) -> Result<LabeledData, CliError> {
    let file = File::open(path).map_err(|e| input_error(path, e.into()))?;
    let opts = LibsvmOptions {
        one_based,
        n_cols: None,
    };
    fastfm::parse_libsvm(BufReader::new(file), &opts).map_err(|e| input_error(path, e))
}

/// Pads `x` to `p` columns; wider data is an error naming the file.
fn align(x: SparseRowMatrix, p: usize, path: &Path) -> Result<SparseRowMatrix, CliError> {
    if x.n_cols() > p {
        return Err(input_error(
            path,
            FmError::Dimension(format!(
                "feature index {} is outside the model's {p} features",
                x.n_cols() - 1
            )),
        ));
    }
    x.with_n_cols(p).map_err(|e| input_error(path, e))
}

fn read_model(path: &Path) -> Result<FmParams, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_error(path, e.into()))?;
    load_model(&text).map_err(|e| input_error(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| input_error(path, e.into()))
}

fn write_predictions(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| input_error(path, e.into()))?;
    let mut out = BufWriter::new(file);
    for v in values {
        writeln!(out, "{}", decimal(*v)).map_err(|e| input_error(path, e.into()))?;
    }
    out.flush().map_err(|e| input_error(path, e.into()))
}

/// Shortest round-trip digits in positional notation, always with a point.
fn decimal(v: f64) -> String {
    let s = v.to_string();
    if v.is_finite() && !s.contains('.') {
        s + ".0"
    } else {
        s
    }
}

/// Worker count for prediction from `FASTFM_THREADS`, default 1.
fn threads() -> Result<usize, CliError> {
    match std::env::var("FASTFM_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "FASTFM_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn predict_rows(
    params: &FmParams,
    x: &SparseRowMatrix,
    threads: usize,
) -> fastfm::Result<Vec<f64>> {
    if threads > 1 {
        predict_parallel(params, x, threads)
    } else {
        predict(params, x)
    }
}

fn solver_config(m: &ModelArgs, task: Task) -> SolverConfig {
    SolverConfig {
        rank: m.rank,
        n_iter: m.n_iter,
        init_std: m.init_std,
        l2_reg_w: m.l2_reg_w.unwrap_or(m.l2_reg),
        l2_reg_v: m.l2_reg_v.unwrap_or(m.l2_reg),
        l2_reg_w0: 0.0,
        step_size: m.step_size,
        seed: m.seed,
        task,
        fit_intercept: !m.no_intercept,
    }
}

fn check_fit_flags(args: &FitArgs) -> Result<(), CliError> {
    let usage = |msg: &str| Err(CliError::Usage(msg.into()));
    match (args.task, args.solver) {
        (TaskArg::Rank, SolverArg::Als | SolverArg::Mcmc) => {
            return usage("--task rank requires --solver sgd")
        }
        (TaskArg::Rank, SolverArg::Sgd) if args.pairs.is_none() => {
            return usage("--task rank requires --pairs")
        }
        (TaskArg::R | TaskArg::C, _) if args.pairs.is_some() => {
            return usage("--pairs is only used with --task rank")
        }
        (_, SolverArg::Mcmc) if args.test.is_none() => {
            return usage("--solver mcmc requires --test")
        }
        (_, SolverArg::Mcmc) if args.model_out.is_some() => {
            return usage("--model-out is not available for --solver mcmc")
        }
        (_, SolverArg::Als | SolverArg::Sgd) if args.trace_out.is_some() => {
            return usage("--trace-out is only written by --solver mcmc")
        }
        _ => {}
    }
    Ok(())
}

fn rmse(y_hat: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    (y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
        .sqrt()
}

fn mean_neg_log(y_hat: &[f64], y: &[f64], ln_link: fn(f64) -> f64) -> f64 {
    let n = y.len().max(1) as f64;
    -y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| ln_link(a * b))
        .sum::<f64>()
        / n
}

fn mean_ln_sigmoid(y_hat: &[f64], pairs: &RankingPairs) -> f64 {
    let n = pairs.len().max(1) as f64;
    pairs
        .as_slice()
        .iter()
        .map(|&(a, b)| ln_sigmoid(y_hat[a] - y_hat[b]))
        .sum::<f64>()
        / n
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    check_fit_flags(args)?;
    let threads = threads()?;
    let one_based = args.model.one_based;
    let warm = args.warm_start.as_deref().map(read_model).transpose()?;
    if let Some(w) = &warm {
        if w.rank() != args.model.rank {
            return Err(CliError::Usage(format!(
                "--warm-start model has rank {}, but --rank is {}",
                w.rank(),
                args.model.rank
            )));
        }
    }

    let mut train = read_libsvm(&args.train, one_based)?;
    let p = train
        .x
        .n_cols()
        .max(warm.as_ref().map_or(0, FmParams::n_features));
    train.x = align(train.x, p, &args.train)?;
    let test = match &args.test {
        Some(path) => Some(align(read_libsvm(path, one_based)?.x, p, path)?),
        None => None,
    };

    let task = match args.task {
        TaskArg::R => Task::Regression,
        TaskArg::C => Task::Classification,
        TaskArg::Rank => Task::Ranking,
    };
    let config = solver_config(&args.model, task);
    let pred_rows = test.as_ref().unwrap_or(&train.x);

    let (params, report, predictions, metric) = match args.solver {
        SolverArg::Mcmc => {
            let x_test = test.as_ref().expect("checked above");
            let hooks = GibbsHooks::default();
            let out = match &warm {
                None => mcmc_fit_predict_with(&train, x_test, &config, None, &hooks)?,
                Some(w) => {
                    let init = SolverConfig {
                        n_iter: 0,
                        ..config.clone()
                    };
                    let mut state =
                        mcmc_fit_predict_with(&train, x_test, &init, None, &hooks)?.state;
                    state.set_params(w.clone(), &train)?;
                    mcmc_fit_predict_with(&train, x_test, &config, Some(state), &hooks)?
                }
            };
            if let Some(path) = &args.trace_out {
                write_file(path, &out.state.traces().to_csv())?;
            }
            let last = predict(out.state.params(), &train.x)?;
            let metric = match task {
                Task::Classification => (
                    "train_logloss",
                    mean_neg_log(&last, &train.y, ln_normal_cdf),
                ),
                _ => ("train_rmse", rmse(&last, &train.y)),
            };
            (None, out.report, out.y_pred, metric)
        }
        SolverArg::Als | SolverArg::Sgd => {
            let (params, report) = match (args.solver, task) {
                (SolverArg::Als, Task::Classification) => {
                    let f = als_fit_classification(&train, &config, warm.as_ref())?;
                    (f.params, f.report)
                }
                (SolverArg::Als, _) => {
                    let f = als_fit(&train, &config, warm.as_ref())?;
                    (f.params, f.report)
                }
                (_, Task::Ranking) => {
                    let path = args.pairs.as_deref().expect("checked above");
                    let file = File::open(path).map_err(|e| input_error(path, e.into()))?;
                    let pairs = parse_pairs_csv(BufReader::new(file), train.n_rows())
                        .map_err(|e| input_error(path, e))?;
                    let f = bpr_fit(&train.x, &pairs, &config, warm.as_ref())?;
                    let y_hat = predict(&f.params, &train.x)?;
                    let metric = ("mean_lnsig", mean_ln_sigmoid(&y_hat, &pairs));
                    let preds = predict_rows(&f.params, pred_rows, threads)?;
                    return finish(args, Some(f.params), f.report, preds, metric);
                }
                _ => {
                    let f = sgd_fit(&train, &config, warm.as_ref())?;
                    (f.params, f.report)
                }
            };
            let y_hat = predict(&params, &train.x)?;
            let (link, ln_link): (fn(f64) -> f64, fn(f64) -> f64) = match args.solver {
                SolverArg::Als => (normal_cdf, ln_normal_cdf),
                _ => (sigmoid, ln_sigmoid),
            };
            let mut preds = predict_rows(&params, pred_rows, threads)?;
            let metric = if task == Task::Classification {
                preds.iter_mut().for_each(|t| *t = link(*t));
                ("train_logloss", mean_neg_log(&y_hat, &train.y, ln_link))
            } else {
                ("train_rmse", rmse(&y_hat, &train.y))
            };
            (Some(params), report, preds, metric)
        }
    };
    finish(args, params, report, predictions, metric)
}

fn finish(
    args: &FitArgs,
    params: Option<FmParams>,
    report: FitReport,
    predictions: Vec<f64>,
    (metric_name, metric): (&str, f64),
) -> Result<(), CliError> {
    if let (Some(path), Some(params)) = (&args.model_out, &params) {
        write_file(path, &save_model(params))?;
    }
    if let Some(path) = &args.pred_out {
        write_predictions(path, &predictions)?;
    }
    let task = match args.task {
        TaskArg::R => "r",
        TaskArg::C => "c",
        TaskArg::Rank => "rank",
    };
    let solver = match args.solver {
        SolverArg::Als => "als",
        SolverArg::Mcmc => "mcmc",
        SolverArg::Sgd => "sgd",
    };
    let mut summary = json!({
        "task": task,
        "solver": solver,
        "n_iter": report.n_iter_done,
        "wall_time_s": report.wall_time.as_secs_f64(),
    });
    summary[metric_name] = json!(metric);
    println!("{summary}");
    Ok(())
}

pub fn predict_cmd(args: &PredictArgs) -> Result<(), CliError> {
    let threads = threads()?;
    let params = read_model(&args.model)?;
    let p = params.n_features();
    let data = read_libsvm(&args.data, args.one_based)?;
    let x = if args.clip_features && data.x.n_cols() > p {
        data.x.clip_columns(p)
    } else {
        align(data.x, p, &args.data)?
    };
    let mut y = predict_rows(&params, &x, threads)?;
    if args.proba {
        y.iter_mut().for_each(|t| *t = normal_cdf(*t));
    }
    write_predictions(&args.pred_out, &y)
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    if args.ranks.is_empty() || args.repeats == 0 {
        return Err(CliError::Usage(
            "--ranks and --repeats must be non-empty".into(),
        ));
    }
    let one_based = args.model.one_based;
    let train = read_libsvm(&args.train, one_based)?;
    let p = train.x.n_cols();
    let x_test = match &args.test {
        Some(path) => align(read_libsvm(path, one_based)?.x, p, path)?,
        None => SparseRowMatrix::empty(0, p),
    };
    let solver = match args.solver {
        BenchSolverArg::Als => BenchSolver::Als,
        BenchSolverArg::Mcmc => BenchSolver::Mcmc,
    };
    let config = solver_config(&args.model, Task::Regression);
    let timings = rank_sweep(solver, &train, &x_test, &config, &args.ranks, args.repeats)?;
    write_file(&args.out, &timings_csv(&timings))?;

    let medians = median_by_rank(&timings);
    let (xs, ys): (Vec<f64>, Vec<f64>) = medians.iter().map(|&(r, s)| (r as f64, s)).unzip();
    let r_squared = (xs.len() >= 2).then(|| fit_line(&xs, &ys).r_squared);
    let summary = json!({
        "solver": solver.name(),
        "n_iter": args.model.n_iter,
        "repeats": args.repeats,
        "ranks": xs.iter().map(|&r| r as usize).collect::<Vec<_>>(),
        "median_seconds": ys,
        "r_squared": r_squared,
    });
    println!("{summary}");
    Ok(())
}
