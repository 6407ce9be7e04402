//! Command implementations. Every result file goes through [`OutputDir`],
//! which writes atomically from the calling thread.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use alphami::channel_opt::{
    expected_distortion, optimize_channel, posterior_entropy, ChannelOptConfig, WorldModel,
};
use alphami::experiments::{
    prepare_data, sweep, train_point, write_atomic, SweepConfig, SweepResults, TradeoffPoint,
};
use alphami::info_measures::{
    alpha_mutual_information, arimoto_conditional_entropy, renyi_entropy, Alpha, JointPmf,
};

use crate::args::{
    Cli, Command, MeasuresArgs, OptimizeArgs, PlotArgs, RunOverrides, SweepArgs, TrainArgs,
};
use crate::exit::{CliError, CliResult};
use crate::plot;

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    /// Writes `name` under the output directory, creating it on first use.
    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.root).map_err(|e| {
            CliError::runtime(format!(
                "cannot create output directory {}: {e}",
                self.root.display()
            ))
        })?;
        let path = self.root.join(name);
        write_atomic(&path, contents.as_bytes())
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_input(path)?)
        .map_err(|e| CliError::data(format!("malformed {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::runtime(e.to_string()))
}

/// Runs one parsed invocation and returns the text for standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    let out = OutputDir::new(cli.out_dir);
    match cli.command {
        Command::Measures(a) => measures(&a, &out),
        Command::Optimize(a) => optimize(&a, &out),
        Command::Train(a) => train(&a, &out),
        Command::Sweep(a) => run_sweep(&a, &out),
        Command::Plot(a) => plot_results(&a, &out),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JointDoc {
    Matrix { matrix: Vec<Vec<f64>> },
    Flat { shape: Vec<usize>, probs: Vec<f64> },
}

impl JointDoc {
    /// Two-axis `p(x, z)`; trailing axes of a flat joint collapse into Z.
    fn into_joint(self) -> alphami::error::Result<JointPmf> {
        match self {
            JointDoc::Matrix { matrix } => JointPmf::from_matrix(&matrix),
            JointDoc::Flat { shape, probs } => {
                let nx = shape.first().copied().unwrap_or(0);
                let nz = shape.iter().skip(1).product::<usize>();
                let shape = if shape.len() == 1 {
                    vec![nx, 1]
                } else {
                    vec![nx, nz]
                };
                JointPmf::new(shape, vec!["X".into(), "Z".into()], probs)
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MeasureRow {
    pub alpha: f64,
    pub renyi_entropy: f64,
    pub conditional_entropy: f64,
    pub mutual_information: f64,
}

pub fn measures(args: &MeasuresArgs, out: &OutputDir) -> CliResult<String> {
    let doc: JointDoc = parse_json(&args.config)?;
    let joint = doc
        .into_joint()
        .map_err(|e| CliError::from(e).context(args.config.display()))?;
    let prior = joint.marginal_pmf(0)?;
    let mut rows = Vec::with_capacity(args.alpha.len());
    for &a in &args.alpha {
        let alpha = Alpha::new(a)?;
        rows.push(MeasureRow {
            alpha: a,
            renyi_entropy: renyi_entropy(&prior, alpha),
            conditional_entropy: arimoto_conditional_entropy(&joint, alpha)?,
            mutual_information: alpha_mutual_information(&joint, alpha)?,
        });
    }
    let path = out.write("measures.json", &to_json(&rows)?)?;
    let mut text = format!(
        "{:>8} {:>14} {:>14} {:>14}\n",
        "alpha", "H_a(X)", "H^A_a(X|Z)", "I^A_a(X;Z)"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:>8} {:>14.8} {:>14.8} {:>14.8}",
            r.alpha, r.renyi_entropy, r.conditional_entropy, r.mutual_information
        );
    }
    let _ = writeln!(text, "wrote {}", path.display());
    Ok(text)
}

#[derive(Debug, Serialize)]
pub struct OptimizeRow {
    pub alpha: f64,
    pub lambda: f64,
    pub objective: f64,
    pub expected_distortion: f64,
    pub prior_entropy: f64,
    pub posterior_entropy: f64,
    pub converged: bool,
    pub accepted_steps: usize,
    /// `channel[w][z]`
    pub channel: Vec<Vec<f64>>,
}

pub fn optimize(args: &OptimizeArgs, out: &OutputDir) -> CliResult<String> {
    let world = WorldModel::from_json(&read_input(&args.config)?)
        .map_err(|e| CliError::from(e).context(args.config.display()))?;
    let mut rows = Vec::new();
    for &a in &args.alpha {
        for &lambda in &args.lambda_grid {
            let alpha = Alpha::new(a)?;
            let cfg = ChannelOptConfig::new(alpha, lambda);
            let res = optimize_channel(&world, &cfg, args.seed)?;
            rows.push(OptimizeRow {
                alpha: a,
                lambda,
                objective: res.objective,
                expected_distortion: expected_distortion(&world, &res.channel)?,
                prior_entropy: renyi_entropy(&world.private_prior(), alpha),
                posterior_entropy: posterior_entropy(&world, &res.channel, alpha)?,
                converged: res.converged,
                accepted_steps: res.trace.len().saturating_sub(1),
                channel: res.channel.to_rows(),
            });
        }
    }
    let path = out.write("optimize.json", &to_json(&rows)?)?;
    let mut text = format!(
        "{:>8} {:>10} {:>14} {:>12} {:>14} {:>9}\n",
        "alpha", "lambda", "objective", "distortion", "H^A_a(X|Z)", "converged"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:>8} {:>10} {:>14.8} {:>12.6} {:>14.8} {:>9}",
            r.alpha, r.lambda, r.objective, r.expected_distortion, r.posterior_entropy, r.converged
        );
    }
    let _ = writeln!(text, "wrote {}", path.display());
    Ok(text)
}

fn load_config(run: &RunOverrides) -> CliResult<SweepConfig> {
    let mut cfg: SweepConfig = parse_json(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.hyper.seed = seed;
    }
    cfg.si_enabled |= run.si;
    cfg.utility_enabled |= run.utility_net;
    Ok(cfg)
}

fn validated(cfg: SweepConfig, source: &Path) -> CliResult<SweepConfig> {
    cfg.validate()
        .map_err(|e| CliError::from(e).context(source.display()))?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config_hash: String,
    si_correlation: f64,
    si_only_accuracy: Option<f64>,
    point: &'a TradeoffPoint,
}

pub fn train(args: &TrainArgs, out: &OutputDir) -> CliResult<String> {
    let mut cfg = load_config(&args.run)?;
    let alpha = args.alpha.or(cfg.alphas.first().copied());
    let lambda = args.lambda.or(cfg.lambdas.first().copied());
    let (Some(alpha), Some(lambda)) = (alpha, lambda) else {
        return Err(CliError::usage(
            "no alpha or lambda given and none configured",
        ));
    };
    cfg.alphas = vec![alpha];
    cfg.lambdas = vec![lambda];
    let cfg = validated(cfg, &args.run.config)?;
    let data = prepare_data(&cfg)?;
    let (system, point) = train_point(&cfg, &data, alpha, lambda)
        .map_err(|e| CliError::from(e).context("training"))?;
    let summary = TrainSummary {
        config_hash: cfg.hash()?,
        si_correlation: data.si_correlation,
        si_only_accuracy: data.si_only_accuracy,
        point: &point,
    };
    let sys_path = out.write("system.json", &(system.to_json()? + "\n"))?;
    let sum_path = out.write("train.json", &to_json(&summary)?)?;
    Ok(format!(
        "alpha={alpha} lambda={lambda} ne={:.6} attacker_balanced_accuracy={:.4}{}\nwrote {}\nwrote {}\n",
        point.ne.unwrap_or(f64::NAN),
        point.attacker_balanced_accuracy.unwrap_or(f64::NAN),
        point.utility_accuracy.map(|u| format!(" utility_accuracy={u:.4}")).unwrap_or_default(),
        sys_path.display(),
        sum_path.display()
    ))
}

pub fn run_sweep(args: &SweepArgs, out: &OutputDir) -> CliResult<String> {
    let mut cfg = load_config(&args.run)?;
    if let Some(a) = &args.alpha {
        cfg.alphas = a.clone();
    }
    if let Some(l) = &args.lambda_grid {
        cfg.lambdas = l.clone();
    }
    let cfg = validated(cfg, &args.run.config)?;
    let data = prepare_data(&cfg)?;
    let points = sweep(&cfg, &data, args.workers)?;
    let results = SweepResults::new(&cfg, &data, points)?;
    let json = out.write("results.json", &(results.to_json()? + "\n"))?;
    let csv = out.write("results.csv", &results.to_csv()?)?;
    let failed = results.points.iter().filter(|p| !p.is_ok()).count();
    let mut text = format!(
        "{:>8} {:>10} {:>10} {:>10} {:>10}\n",
        "alpha", "lambda", "ne", "attacker", "utility"
    );
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for p in &results.points {
        let _ = writeln!(
            text,
            "{:>8} {:>10} {:>10} {:>10} {:>10}{}",
            p.alpha,
            p.lambda,
            show(p.ne),
            show(p.attacker_balanced_accuracy),
            show(p.utility_accuracy),
            p.failure
                .as_ref()
                .map(|f| format!("  failed: {f}"))
                .unwrap_or_default()
        );
    }
    let _ = writeln!(text, "{} points, {failed} failed", results.points.len());
    let _ = writeln!(text, "wrote {}\nwrote {}", json.display(), csv.display());
    Ok(text)
}

pub fn plot_results(args: &PlotArgs, out: &OutputDir) -> CliResult<String> {
    let results = SweepResults::from_json(&read_input(&args.config)?)
        .map_err(|e| CliError::from(e).context(args.config.display()))?;
    let (svg, csv) = plot::plot(&results).map_err(CliError::data)?;
    let svg_path = out.write("tradeoff.svg", &svg)?;
    let csv_path = out.write("tradeoff.csv", &csv)?;
    Ok(format!(
        "wrote {}\nwrote {}\n",
        svg_path.display(),
        csv_path.display()
    ))
}
