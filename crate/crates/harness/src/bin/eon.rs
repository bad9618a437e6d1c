use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eon_core::adversarial::{find_adversarial, AdversarialOptions};
use eon_core::datagen::{data_complexity, kolmogorov_complexity, SyntheticKind, SyntheticSpec};
use eon_core::inference::{predict, predict_batch};
use eon_core::training::{check_contraction, check_uniqueness, fit, FitOptions, FitTrace};
use eon_core::EonModel;
use eon_harness::config::FitConfig;
use eon_harness::io::{load_csv, load_features, write_dataset, write_predictions};
use eon_harness::raster::{emit_decision_raster, write_raster, FixedValues};
use eon_harness::{run_cv, save_results, DataSource, ExperimentConfig, HarnessError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "eon", version, about = "Train, evaluate and inspect entropy-optimal networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed (data generation, fit initialization, CV splits).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative loss-change tolerance of the outer loop.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Maximum outer iterations of a fit (or of the adversarial search).
    #[arg(long = "max-iters", global = true)]
    max_iters: Option<usize>,
    /// File of grid keys overriding the config's search grid.
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Output path; CSV output goes to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gaussians,
    Rings,
    Bioinformatics,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long, value_enum, required_unless_present = "spec")]
        kind: Option<Kind>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Key-value file with `source`, `dim`, `objects`, `samples`, `data_seed`.
        #[arg(long, conflicts_with = "kind")]
        spec: Option<PathBuf>,
    },
    /// Fit a model to a CSV dataset and write the model file.
    Fit {
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write the iteration trace as JSON; defaults next to the model.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict label distributions and reliabilities for a CSV of inputs.
    Predict { model: PathBuf, data: PathBuf },
    /// Cross-validated grid search; writes `<out>.csv` and `<out>.json`.
    Cv { config: PathBuf },
    /// Search for maximally ambiguous inputs.
    Adversarial {
        model: PathBuf,
        /// Number of searches; the first starts at the codebook mean, the rest at random points.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Re-solve the input weights together with the layer states.
        #[arg(long)]
        resolve_gamma0: bool,
    },
    /// Evaluate the model on a grid over two input dimensions.
    Raster {
        model: PathBuf,
        /// Data whose range sets the raster window.
        data: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0usize, 1])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        /// Fill the other dimensions with the data mean instead of uniform draws.
        #[arg(long)]
        mean_fill: bool,
    },
    /// Report descriptor length against data and task complexity.
    Audit {
        model: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        /// Generator spec of the task, for its Kolmogorov complexity.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check the uniqueness and contraction conditions of a model.
    Check {
        model: PathBuf,
        /// Replacement entropy weights, one per layer including the input.
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
    },
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn spec_from_file(path: &Path) -> Result<SyntheticSpec> {
    match ExperimentConfig::from_file(path)?.source {
        DataSource::Synthetic(spec) => Ok(spec),
        DataSource::Csv(_) => Err(HarnessError::Usage(format!("{}: not a synthetic generator spec", path.display()))),
    }
}

fn trace_json(trace: &FitTrace) -> serde_json::Value {
    let iterations: Vec<_> = trace
        .iterations
        .iter()
        .map(|r| {
            json!({
                "loss": r.loss,
                "gamma_secs": r.gamma_secs,
                "s_secs": r.s_secs,
                "theta_secs": r.theta_secs,
                "gamma0_secs": r.gamma0_secs,
                "gamma_iterations_max": r.gamma_iterations_max,
                "gamma_iterations_mean": r.gamma_iterations_mean,
                "unconverged_points": r.unconverged_points,
                "l_tilde": r.l_tilde,
            })
        })
        .collect();
    json!({
        "seed": trace.seed,
        "initial_loss": trace.initial_loss,
        "final_loss": trace.final_loss(),
        "converged": trace.converged,
        "restart_losses": trace.restart_losses,
        "iterations": iterations,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Usage(format!("--threads: {e}")))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate { kind, dim, objects, samples, spec } => {
            let mut spec = match (spec, kind) {
                (Some(path), _) => spec_from_file(&path)?,
                (None, Some(Kind::Gaussians)) => SyntheticSpec::stacked_gaussians(dim, objects, samples, 0),
                (None, Some(Kind::Rings)) => SyntheticSpec::rings(dim, objects, samples, 0),
                (None, Some(Kind::Bioinformatics)) => SyntheticSpec::bioinformatics(samples, 0),
                (None, None) => unreachable!("clap requires --kind or --spec"),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            spec.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
            write_dataset(&spec.generate()?, output(out)?)?;
        }
        Command::Fit { data, config, trace } => {
            let text = std::fs::read_to_string(&config).map_err(|e| HarnessError::Usage(format!("{}: {e}", config.display())))?;
            let mut fc = FitConfig::parse(&text)?;
            if let Some(t) = cli.tolerance {
                fc.fit.tolerance = t;
            }
            if let Some(m) = cli.max_iters {
                fc.fit.max_outer_iters = m;
            }
            let out = out.ok_or_else(|| HarnessError::Usage("fit needs --out <model file>".into()))?;
            let dataset = load_csv(&data)?;
            let mut hyper = fc.cell.hyperparameters(dataset.n_features(), dataset.n_classes(), &fc.fit);
            hyper.seed = cli.seed.unwrap_or(fc.seed);
            let options = FitOptions { restarts: fc.fit.restarts, ..Default::default() };
            let (model, fit_trace) = fit(&dataset, &hyper, &options)?;
            model.save(out)?;
            let trace_path = trace.unwrap_or_else(|| out.with_extension("trace.json"));
            print_json(&trace_json(&fit_trace), Some(&trace_path))?;
            eprintln!(
                "fitted in {} iterations, final loss {:.6e}, converged: {}",
                fit_trace.iterations.len(),
                fit_trace.final_loss(),
                fit_trace.converged
            );
        }
        Command::Predict { model, data } => {
            let model = EonModel::load(&model)?;
            let x = load_features(&data)?;
            let predictions = predict_batch(&model, &x)?;
            write_predictions(&predictions, model.hyper.label_dim(), output(out)?)?;
        }
        Command::Cv { config } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(g) = &cli.grid {
                let text = std::fs::read_to_string(g).map_err(|e| HarnessError::Usage(format!("{}: {e}", g.display())))?;
                cfg.grid.apply_text(&text)?;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = cli.tolerance {
                cfg.fit.tolerance = t;
            }
            if let Some(m) = cli.max_iters {
                cfg.fit.max_outer_iters = m;
            }
            cfg.check()?;
            let table = run_cv(&cfg)?;
            let (csv_path, json_path) = save_results(&table, &cfg, out.unwrap_or(Path::new("results")))?;
            match table.mean_test() {
                Some(m) => eprintln!("mean test {} over {} folds: {m:.4}", cfg.metric, table.summaries.len()),
                None => eprintln!("no fold produced a test score"),
            }
            eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
        }
        Command::Adversarial { model, count, resolve_gamma0 } => {
            let model = EonModel::load(&model)?;
            let k0 = model.hyper.input_dim();
            let m = model.hyper.label_dim();
            let lo = model.s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = model.s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let mut w = csv::Writer::from_writer(output(out)?);
            let mut header: Vec<String> = (0..k0).map(|d| format!("x{d}")).collect();
            header.extend((0..m).map(|j| format!("p{j}")));
            header.extend(["label_entropy", "iterations", "converged"].map(String::from));
            w.write_record(&header)?;
            for i in 0..count {
                let mut opts = AdversarialOptions { resolve_gamma0, ..Default::default() };
                if let Some(t) = cli.tolerance {
                    opts.tol = t;
                }
                if let Some(it) = cli.max_iters {
                    opts.max_iters = it;
                }
                if i > 0 {
                    opts.init_x = Some((0..k0).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect());
                }
                let res = find_adversarial(&model, &opts)?;
                let mut row: Vec<String> = res.x_adv.iter().map(f64::to_string).collect();
                let at = predict(&model, &res.x_adv)?;
                row.extend(at.label_dist.as_slice().iter().map(f64::to_string));
                row.push(res.final_label_entropy.to_string());
                row.push(res.iterations.to_string());
                row.push(res.converged.to_string());
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Command::Raster { model, data, dims, resolution, mean_fill } => {
            let model = EonModel::load(&model)?;
            let x = load_features(&data)?;
            let policy = if mean_fill { FixedValues::Mean } else { FixedValues::UniformRandom { seed: cli.seed.unwrap_or(0) } };
            let raster = emit_decision_raster(&model, &x, (dims[0], dims[1]), resolution, policy)?;
            write_raster(&raster, output(out)?)?;
        }
        Command::Audit { model, threshold, spec } => {
            let model = EonModel::load(&model)?;
            let k0 = model.hyper.input_dim();
            let dl = model.descriptor_length(threshold);
            let dc = data_complexity(model.train_size, k0)?;
            let weights = model.gamma0.feature_weights(k0);
            let informative: Vec<usize> = (0..k0).filter(|&d| weights[d] > threshold).collect();
            let mut report = json!({
                "descriptor_length": dl,
                "weight_threshold": threshold,
                "train_size": model.train_size,
                "layer_dims": model.hyper.layer_dims,
                "gamma0_mode": model.hyper.gamma0_mode.to_string(),
                "informative_dims": informative,
                "feature_weights": weights,
                "data_complexity": dc,
                "within_data_complexity": dl <= dc,
                "violations": model.validate().iter().map(ToString::to_string).collect::<Vec<_>>(),
            });
            if let Some(path) = spec {
                let spec = spec_from_file(&path)?;
                let kc = kolmogorov_complexity(&spec)?;
                report["task"] = json!(match spec.kind {
                    SyntheticKind::StackedGaussians { .. } => "gaussians",
                    SyntheticKind::Rings { .. } => "rings",
                    SyntheticKind::Bioinformatics => "bioinformatics",
                });
                report["kolmogorov_complexity"] = json!(kc);
                report["ratio_to_kolmogorov"] = json!(dl as f64 / kc as f64);
            }
            print_json(&report, out)?;
        }
        Command::Check { model, epsilon } => {
            let model = EonModel::load(&model)?;
            let eps = if epsilon.is_empty() { model.hyper.epsilon.clone() } else { epsilon };
            if eps.len() != model.hyper.layer_dims.len() {
                return Err(HarnessError::Usage(format!(
                    "--epsilon needs {} values, got {}",
                    model.hyper.layer_dims.len(),
                    eps.len()
                )));
            }
            let a = model.build_a_matrices()?;
            let u = check_uniqueness(&eps, &a)?;
            let c = check_contraction(&eps, &a, &model.hyper.layer_dims)?;
            let report = json!({
                "epsilon": eps,
                "a_spectral_norms": a.spectral_norms()?,
                "uniqueness": { "holds": u.holds, "threshold": u.threshold },
                "contraction": { "holds": c.holds, "l_tilde": c.l_tilde, "l_bsf": c.l_bsf, "l_g": c.l_g, "l_h": c.l_h },
            });
            print_json(&report, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eon: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
