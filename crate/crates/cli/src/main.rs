use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use optlab_core::channel::{direct_effective_channels, effective_channels, time_avg_rate, ReflectionCoefficient};
use optlab_core::drl::env::{Learner, LearnerKind};
use optlab_core::drl::reduce::reduce_action_space;
use optlab_core::estimation::estimated_drop;
use optlab_core::fp::{algorithm1_from, optimize_precoder_only, FpConfig, LinkParams};
use optlab_core::harness::{
    aggregate, emit_csv, emit_plot_data, emit_training_csv, evaluate_online, parse_csv, parse_schemes, read_actions, sweep, train_and_eval,
    write_actions, LearningConfig, SchemeId, SweepVariable,
};
use optlab_core::linalg::{dump_matrix, ComplexMatrix};
use optlab_core::rng::drop_seed;
use optlab_core::scenario::{sample_geometry, NetworkConfig};
use optlab_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "optlab", version, about = "Reflector-assisted mmWave downlink simulator")]
struct Cli {
    /// TOML network configuration; defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (or the drop seed for `estimate`/`optimize`).
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "optlab-out")]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pilot-phase channel estimation over several drops.
    Estimate {
        #[arg(long, default_value_t = 1)]
        drops: usize,
    },
    /// One optimization run on drop `--seed`.
    Optimize {
        #[arg(long, default_value = "proposed_fp")]
        scheme: String,
        /// Write W and φ in the plain-text matrix format.
        #[arg(long)]
        dump_solution: Option<PathBuf>,
    },
    /// Monte Carlo sweep of one variable.
    Sweep {
        #[arg(long, default_value = "proposed_fp,fixed_ir,direct")]
        scheme: String,
        /// One of p_max, b, m, n.
        #[arg(long)]
        var: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 100)]
        drops: usize,
    },
    /// Frequency-ranked reduced action set from exhaustive flip search.
    ReduceActions {
        #[arg(long, default_value_t = 500)]
        drops: usize,
    },
    /// Trains the learners and writes their tables and learning curves.
    Train {
        #[arg(long, default_value = "qrdrl,qlearning")]
        scheme: String,
        #[arg(long, default_value_t = 3000)]
        episodes: usize,
        /// Drops in the training pool.
        #[arg(long, default_value_t = 200)]
        drops: usize,
    },
    /// Runs saved tables greedily on held-out intervals.
    Evaluate {
        #[arg(long, default_value = "qrdrl,qlearning,no_adapt")]
        scheme: String,
        /// Number of online intervals.
        #[arg(long, default_value_t = 100)]
        drops: usize,
    },
    /// Aggregates `records.csv` and `online.csv` in the output directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error("usage", &e.to_string().lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::from(1)
        }
    }
}

/// One JSON object on stderr.
fn emit_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::InvalidArgument("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => NetworkConfig::load(p)?,
        None => NetworkConfig::default(),
    };
    cfg.validate()?;
    fs::create_dir_all(&cli.out)?;
    let fp = FpConfig::default();
    match cli.command {
        Command::Estimate { drops } => estimate(&cfg, cli.seed, drops, &cli.out),
        Command::Optimize { scheme, dump_solution } => optimize(&cfg, cli.seed, &scheme, dump_solution.as_deref(), &cli.out, &fp),
        Command::Sweep { scheme, var, values, drops } => {
            let schemes = parse_schemes(&scheme)?;
            let variable: SweepVariable = var.parse()?;
            let values = parse_values(&values)?;
            let records = sweep(&cfg, &schemes, variable, &values, drops, cli.seed, &fp)?;
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                warn!("{failed} of {} runs failed; see the error column", records.len());
            }
            emit_csv(&records, &cli.out.join("records.csv"))?;
            emit_plot_data(&records, &cli.out.join("plot_data.csv"))?;
            print_points(&records)
        }
        Command::ReduceActions { drops } => {
            let red = reduce_action_space(&cfg, cli.seed, drops, cfg.reduced_action_count, &fp)?;
            write_actions(&red.actions, &cli.out.join("actions.txt"))?;
            let mut w = csv::Writer::from_path(cli.out.join("action_frequencies.csv")).map_err(Error::from)?;
            w.write_record(["id", "count"]).map_err(Error::from)?;
            for (id, count) in &red.frequencies {
                w.write_record([id.to_string(), count.to_string()]).map_err(Error::from)?;
            }
            w.flush()?;
            let covered: usize = red.frequencies.iter().filter(|(id, _)| red.actions.contains(id)).map(|(_, c)| c).sum();
            println!(
                "actions={} distinct_optimal={} sample_coverage={:.4}",
                red.actions.len(),
                red.frequencies.len(),
                covered as f64 / red.samples.max(1) as f64
            );
            Ok(())
        }
        Command::Train { scheme, episodes, drops } => {
            let kinds = learner_kinds(&scheme)?;
            let mut lc = LearningConfig::new(episodes, cli.seed);
            lc.pool_size = drops;
            lc.eval_intervals = 0;
            let cached = cli.out.join("actions.txt");
            let actions = cached.exists().then(|| read_actions(&cached)).transpose()?;
            let res = train_and_eval(&cfg, &kinds, &lc, actions, &fp)?;
            write_actions(&res.actions, &cached)?;
            for learner in &res.learners {
                if let Some(text) = learner.to_text() {
                    fs::write(table_path(&cli.out, learner.kind()), text)?;
                }
            }
            if res.training.is_empty() {
                warn!("no training episodes; training.csv not written");
            } else {
                emit_training_csv(&res.training, &cli.out.join("training.csv"))?;
            }
            for (learner, raw) in res.learners.iter().zip(&res.raw_training) {
                let tail = &raw[raw.len() * 4 / 5..];
                let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
                println!("scheme={} episodes={} final_window_mean={:.6e}", learner.kind().name(), raw.len(), mean);
            }
            Ok(())
        }
        Command::Evaluate { scheme, drops } => {
            let actions = read_actions(&cli.out.join("actions.txt"))?;
            let seeds = LearningConfig {
                eval_intervals: drops,
                ..LearningConfig::new(0, cli.seed)
            }
            .eval_seeds();
            let mut records = Vec::new();
            for kind in learner_kinds(&scheme)? {
                let learner = match kind {
                    LearnerKind::NoAdapt => Learner::NoAdapt,
                    _ => Learner::from_text(&fs::read_to_string(table_path(&cli.out, kind))?)?,
                };
                records.extend(evaluate_online(&cfg, &learner, &actions, &seeds, &fp)?);
            }
            emit_csv(&records, &cli.out.join("online.csv"))?;
            for (s, mean) in scheme_means(&records) {
                println!("scheme={s} intervals={drops} mean_rate={mean:.6e}");
            }
            Ok(())
        }
        Command::Report => {
            let mut any = false;
            for (input, output) in [("records.csv", "plot_data.csv"), ("online.csv", "online_plot_data.csv")] {
                let path = cli.out.join(input);
                if !path.exists() {
                    continue;
                }
                let records = parse_csv(&path)?;
                emit_plot_data(&records, &cli.out.join(output))?;
                print_points(&records)?;
                any = true;
            }
            if !any {
                return Err(Error::InvalidArgument(format!("no records.csv or online.csv in {}", cli.out.display())));
            }
            Ok(())
        }
    }
}

fn parse_values(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value {s:?}: {e}"))))
        .collect()
}

fn learner_kinds(list: &str) -> Result<Vec<LearnerKind>> {
    parse_schemes(list)?
        .into_iter()
        .map(|s| s.learner().ok_or_else(|| Error::InvalidArgument(format!("{s} is not a learning scheme"))))
        .collect()
}

fn table_path(dir: &Path, kind: LearnerKind) -> PathBuf {
    dir.join(format!("{}.table", kind.name()))
}

fn scheme_means(records: &[optlab_core::harness::ExperimentRecord]) -> Vec<(SchemeId, f64)> {
    let mut out: Vec<(SchemeId, f64, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        match out.iter_mut().find(|(s, _, _)| *s == r.scheme) {
            Some(e) => {
                e.1 += r.metric;
                e.2 += 1;
            }
            None => out.push((r.scheme, r.metric, 1)),
        }
    }
    out.into_iter().map(|(s, sum, n)| (s, sum / n as f64)).collect()
}

fn print_points(records: &[optlab_core::harness::ExperimentRecord]) -> Result<()> {
    println!("scheme,variable,x,mean,stderr,count");
    for p in aggregate(records)? {
        println!("{},{},{},{:.6e},{:.6e},{}", p.scheme, p.variable, p.x, p.mean, p.stderr, p.count);
    }
    Ok(())
}

fn estimate(cfg: &NetworkConfig, seed: u64, drops: usize, out: &Path) -> Result<()> {
    if drops == 0 {
        return Err(Error::InvalidArgument("--drops must be positive".into()));
    }
    let mut w = csv::Writer::from_path(out.join("estimate.csv"))?;
    w.write_record(["seed", "ue", "squared_error", "theoretical_mse"])?;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut theory = 0.0;
    for d in 0..drops as u64 {
        let s = if drops == 1 { seed } else { drop_seed(seed, d) };
        let (_, rep) = estimated_drop(cfg, s)?;
        for (k, e) in rep.squared_error.iter().enumerate() {
            w.write_record([s.to_string(), k.to_string(), format!("{e:e}"), format!("{:e}", rep.theoretical_mse)])?;
            total += e;
            count += 1;
        }
        theory = rep.theoretical_mse;
    }
    w.flush()?;
    let mean = total / count as f64;
    println!("drops={drops} mean_squared_error={mean:.6e} theoretical={theory:.6e} ratio={:.4}", mean / theory);
    Ok(())
}

fn optimize(cfg: &NetworkConfig, seed: u64, scheme: &str, dump: Option<&Path>, out: &Path, fp: &FpConfig) -> Result<()> {
    let scheme: SchemeId = scheme.parse()?;
    let geometry = sample_geometry(cfg, seed)?;
    let channels = optlab_core::channel::build_cascaded_channels(
        &geometry,
        cfg,
        &mut optlab_core::rng::substream(seed, optlab_core::rng::Substream::Shadowing),
    )?;
    let link = LinkParams::from_config(cfg);
    let ones = ReflectionCoefficient::ones(cfg.num_ir_elements);
    let (trace, iterations, converged, w, phi): (Vec<f64>, usize, bool, ComplexMatrix, Option<ReflectionCoefficient>) = match scheme {
        SchemeId::Direct => {
            let r = optimize_precoder_only(&direct_effective_channels(&channels), &link, fp)?;
            (r.objective_trace, r.iterations, r.converged, r.w, None)
        }
        SchemeId::FixedIr => {
            let r = optimize_precoder_only(&effective_channels(&ones, &channels.true_g)?, &link, fp)?;
            (r.objective_trace, r.iterations, r.converged, r.w, Some(ones))
        }
        SchemeId::ProposedFp => {
            let start = optimize_precoder_only(&effective_channels(&ones, &channels.true_g)?, &link, fp)?;
            let st = algorithm1_from(&channels.true_g, &link, fp, start.w, ones)?;
            (st.objective_trace, st.iterations, st.converged, st.w, Some(st.phi))
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not an optimization scheme"))),
    };
    let rate = *trace.last().expect("nonempty trace");
    let mut wr = csv::Writer::from_path(out.join("optimize.csv"))?;
    wr.write_record(["iteration", "objective"])?;
    for (i, v) in trace.iter().enumerate() {
        wr.write_record([i.to_string(), format!("{v:e}")])?;
    }
    wr.flush()?;
    if let Some(path) = dump {
        // W, then φ as a 1×N row; both readable with parse_matrix
        let mut text = dump_matrix(&w);
        if let Some(phi) = &phi {
            let row = ComplexMatrix::from_row_slice(1, phi.len(), phi.as_vector().as_slice());
            text.push_str(&dump_matrix(&row));
        }
        fs::write(path, text)?;
        info!("solution written to {}", path.display());
    }
    println!(
        "scheme={scheme} rate={rate:.6e} time_avg_rate={:.6e} iterations={iterations} converged={converged}",
        time_avg_rate(rate, scheme.overhead(), cfg)?
    );
    Ok(())
}
