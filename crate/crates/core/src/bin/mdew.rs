use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mdew::data::{self, DEFAULT_MISSING_TOKENS};
use mdew::ensemble::{Method, PredictionContext};
use mdew::error::{Error, Result};
use mdew::imputers::{impute_dataset, ImputerSpec};
use mdew::metrics::{self, ScoredSet};
use mdew::missingness::{ampute, AmputeParams, Mechanism};
use mdew::runner::{self, ExperimentConfig, GridConfig, PoolConfig};
use mdew::{rng, Matrix};

#[derive(Parser)]
#[command(name = "mdew", version, about = "Missingness-aware dynamic ensemble weighting")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Input {
    /// Headered CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Name of the binary target column.
    #[arg(long)]
    target: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mdew,
    Uma,
}

#[derive(Subcommand)]
enum Command {
    /// Run one cross-validated experiment.
    Run(Overrides),
    /// Run every dataset × mechanism experiment of a grid config and rank them.
    Grid(Overrides),
    /// Mask a complete CSV with a synthetic missingness mechanism.
    Ampute {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        mechanism: MechanismArg,
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        #[arg(long, default_value_t = 0.3)]
        column_fraction: f64,
        #[arg(long, default_value_t = 3.0 / 7.0)]
        cause_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the amputation plan and the masked ground truth as JSON.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Fill missing cells with one of: mean, knn, ridge-iter, rf-iter, gbm-iter.
    Impute {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        imputer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics from a predictions CSV.
    Metrics {
        /// Either long format (row_id, target, probability, method) or the
        /// predictions.csv written by `run`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Calibration bins per method.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Fit a pool and its error matrix on a CSV and save the prediction context.
    Fit {
        #[command(flatten)]
        input: Input,
        /// Pool settings as a TOML file with the same keys as a config's [pool] section.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        stage2_fraction: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a CSV with a saved prediction context.
    Predict {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Target column to drop from the input, if present.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_enum, default_value = "mdew")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn tokens() -> Vec<&'static str> {
    DEFAULT_MISSING_TOKENS.to_vec()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: cannot configure {j} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(o) => {
            let mut cfg = ExperimentConfig::load(&o.config)?;
            if let Some(seed) = o.seed {
                cfg.seed = seed;
            }
            if let Some(out) = o.out {
                cfg.out = Some(out);
            }
            let dir = cfg.out.clone().unwrap_or_else(|| Path::new("out").join(cfg.name()));
            let report = runner::run_experiment(&cfg)?;
            runner::emit_report(&report, &dir)?;
            print_summary(&report);
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Grid(o) => {
            let mut grid = GridConfig::load(&o.config)?;
            if let Some(seed) = o.seed {
                grid.seed = seed;
            }
            let dir = o.out.or_else(|| grid.out.clone()).unwrap_or_else(|| PathBuf::from("out/grid"));
            let outcome = runner::run_grid(&grid.expand()?);
            runner::emit_grid(&outcome, &dir)?;
            for r in &outcome.reports {
                print_summary(r);
            }
            for (name, e) in &outcome.failures {
                eprintln!("warning: experiment {name} failed and is excluded from ranking: {e}");
            }
            eprintln!("wrote {}", dir.display());
            if outcome.reports.is_empty() {
                if let Some((_, e)) = outcome.failures.into_iter().next() {
                    return Err(e);
                }
            }
            Ok(())
        }
        Command::Ampute {
            input,
            mechanism,
            rate,
            column_fraction,
            cause_fraction,
            seed,
            out,
            plan,
        } => {
            let data = data::load_csv(&input.input, &input.target, &tokens())?;
            let mechanism = match mechanism {
                MechanismArg::Mcar => Mechanism::Mcar,
                MechanismArg::Mar => Mechanism::Mar,
                MechanismArg::Mnar => Mechanism::Mnar,
            };
            let params = AmputeParams {
                column_fraction,
                rate,
                cause_fraction,
            };
            let result = ampute(&data, mechanism, &params, seed)?;
            data::write_csv(&result.dataset, &out, &input.target)?;
            if let Some(path) = plan {
                let text = serde_json::to_string_pretty(&json!({
                    "plan": result.plan,
                    "ground_truth": result.ground_truth,
                }))?;
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::Impute {
            input,
            imputer,
            seed,
            out,
        } => {
            let data = data::load_csv(&input.input, &input.target, &tokens())?;
            let mut spec = ImputerSpec::from_name(&imputer)?;
            spec.tree_params.seed = rng::derive(seed, "imputer");
            let (_, mut filled) = impute_dataset(&spec, &data, &[])?;
            write_matrix(&filled.remove(0), data.column_names(), &input.target, data.target(), &out)
        }
        Command::Metrics { predictions, out, bins } => {
            let sets = read_scored_sets(&predictions)?;
            let text = serde_json::to_string_pretty(&metrics_json(&sets, bins)?)? + "\n";
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Error::io(&path, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Fit {
            input,
            pool,
            stage2_fraction,
            k,
            seed,
            out,
        } => {
            let data = data::load_csv(&input.input, &input.target, &tokens())?;
            let pool: PoolConfig = match pool {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => PoolConfig::default(),
            };
            let specs = pool.specs(seed)?;
            let all: Vec<usize> = (0..data.nrows()).collect();
            let (s1, s2) = data::two_stage_split(&all, stage2_fraction, rng::derive(seed, "stages"), data.target())?;
            let ctx = PredictionContext::fit(&specs, &data.select(&s1), &data.select(&s2), k)?;
            ctx.save(&out)?;
            eprintln!(
                "fitted {} pipelines on {} rows, error matrix {}x{}; wrote {}",
                specs.len(),
                s1.len(),
                s2.len(),
                specs.len(),
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            context,
            input,
            target,
            method,
            out,
        } => {
            let ctx = PredictionContext::load(&context)?;
            let samples = match &target {
                Some(t) => data::load_csv(&input, t, &tokens())?,
                None => data::load_unlabeled_csv(&input, &tokens())?,
            };
            let method = match method {
                MethodArg::Mdew => Method::Mdew,
                MethodArg::Uma => Method::Uma,
            };
            let preds = ctx.predict(&samples, method)?;
            let mut w = csv::Writer::from_path(&out)?;
            let labels: Vec<&str> = ctx.pipelines.iter().map(|p| p.label()).collect();
            let mut header = vec!["row_id".to_string(), "probability".to_string()];
            header.extend(labels.iter().map(|l| format!("prob:{l}")));
            header.extend(labels.iter().map(|l| format!("weight:{l}")));
            w.write_record(&header)?;
            for (id, p) in samples.row_ids().iter().zip(&preds) {
                let mut rec = vec![id.to_string(), p.probability.to_string()];
                rec.extend(p.per_pipeline_probs.iter().map(f64::to_string));
                rec.extend(p.weights.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&out, e))
        }
    }
}

fn print_summary(r: &runner::ExperimentReport) {
    let (Some(m), Some(u)) = (r.method("mdew"), r.method("uma")) else {
        return;
    };
    println!(
        "{}: mdew AP {:.4} AUROC {:.4} | uma AP {:.4} AUROC {:.4} | improved {:.1}% | p = {:.3e}",
        r.name,
        m.metrics.average_precision,
        m.metrics.auroc,
        u.metrics.average_precision,
        u.metrics.auroc,
        100.0 * r.fraction_improved,
        r.t_test.p_value
    );
}

fn write_matrix(m: &Matrix, names: &[String], target_name: &str, target: &[u8], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push(target_name);
    w.write_record(&header)?;
    for (row, t) in m.rows_iter().zip(target) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(t.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One scored set per method, rows ordered by row id.
fn read_scored_sets(path: &Path) -> Result<Vec<(ScoredSet, Vec<usize>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if !header.iter().any(|h| h == "method") {
        let (labels, rows) = runner::read_predictions_csv(path)?;
        let targets: Vec<u8> = rows.iter().map(|p| p.target).collect();
        let ids: Vec<usize> = rows.iter().map(|p| p.row_id).collect();
        let mut out = vec![
            (ScoredSet::new(targets.clone(), rows.iter().map(|p| p.mdew_prob).collect(), "mdew")?, ids.clone()),
            (ScoredSet::new(targets.clone(), rows.iter().map(|p| p.uma_prob).collect(), "uma")?, ids.clone()),
        ];
        for (j, l) in labels.iter().enumerate() {
            out.push((
                ScoredSet::new(targets.clone(), rows.iter().map(|p| p.pipeline_probs[j]).collect(), l.as_str())?,
                ids.clone(),
            ));
        }
        return Ok(out);
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let (ci, ct, cp, cm) = (col("row_id")?, col("target")?, col("probability")?, col("method")?);
    let mut by_method: BTreeMap<String, Vec<(usize, u8, f64)>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec[j].trim().parse().map_err(|_| Error::Parse {
                row: i,
                column: header[j].clone(),
                value: rec[j].to_string(),
            })
        };
        let t = parse(ct)?;
        if t != 0.0 && t != 1.0 {
            return Err(Error::NonBinaryTarget {
                row: i,
                value: rec[ct].to_string(),
            });
        }
        by_method
            .entry(rec[cm].to_string())
            .or_default()
            .push((parse(ci)? as usize, t as u8, parse(cp)?));
    }
    by_method
        .into_iter()
        .map(|(method, mut rows)| {
            rows.sort_by_key(|r| r.0);
            let ids = rows.iter().map(|r| r.0).collect();
            let set = ScoredSet::new(
                rows.iter().map(|r| r.1).collect(),
                rows.iter().map(|r| r.2).collect(),
                method,
            )?;
            Ok((set, ids))
        })
        .collect()
}

fn metrics_json(sets: &[(ScoredSet, Vec<usize>)], bins: usize) -> Result<serde_json::Value> {
    let mut methods = Vec::new();
    for (s, _) in sets {
        let errors = metrics::per_sample_errors(s);
        methods.push(json!({
            "method": s.label,
            "summary": metrics::summarize(s)?,
            "mean_error": errors.iter().sum::<f64>() / errors.len() as f64,
            "calibration": metrics::calibration_curve(s, bins)?,
        }));
    }
    let find = |name: &str| sets.iter().find(|(s, _)| s.label == name);
    let comparison = match (find("mdew"), find("uma")) {
        (Some((m, mi)), Some((u, ui))) if mi == ui => {
            let (me, ue) = (metrics::per_sample_errors(m), metrics::per_sample_errors(u));
            json!({
                "fraction_improved": metrics::fraction_improved(&me, &ue)?,
                "t_test": metrics::paired_t_test_less(&me, &ue)?,
            })
        }
        _ => serde_json::Value::Null,
    };
    Ok(json!({ "methods": methods, "mdew_vs_uma": comparison }))
}
