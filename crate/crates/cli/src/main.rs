use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lipmp::element::DictionaryElement;
use lipmp::io::{
    self as lio, ExperimentConfig, GridSpec, ModelSpec, NoiseSpec, RunMode,
};
use lipmp::pursuit::Variant;

#[derive(Parser)]
#[command(name = "lipmp", version, about = "Learning matching pursuits for spherical downward continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the points of a grid as `phi,t`.
    Grid {
        /// `reuter:GAMMA`, `dh:BANDWIDTH` or a `phi,t` file.
        spec: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model at satellite height and write `phi,t,value`.
    Synth(SynthArgs),
    /// Run one experiment.
    Run(RunArgs),
    /// Relative RMSE of an approximation against a truth.
    Eval(EvalArgs),
    /// Inspect or export a dictionary file.
    Dict {
        #[command(subcommand)]
        action: DictAction,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// `contrived`, `random:BAND:DECAY:SEED`, `coeffs:PATH` or `dictionary:PATH`.
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "reuter:100")]
    grid: String,
    #[arg(long, conflicts_with = "height_km")]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 500.0)]
    height_km: f64,
    /// Noise level relative to each value.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Rfmp,
    Rofmp,
    Lrfmp,
    Lrofmp,
}

#[derive(Args)]
struct RunArgs {
    variant: VariantArg,
    #[arg(short, long)]
    config: PathBuf,
    /// Seed of the noise generator; required when the data are noisy.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Measured data file (`phi,t,value`), replacing the configured source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dictionary file, replacing the configured finite dictionary.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Allow only the first N + 1 dictionary elements in iteration N + 1.
    #[arg(long)]
    replay: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Approximation as `phi,t,value`.
    approx: PathBuf,
    /// Truth values on the same points.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    truth: Option<PathBuf>,
    /// Truth model, evaluated on the Earth surface at the approximation points.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    area_weighted: bool,
}

#[derive(Subcommand)]
enum DictAction {
    /// Print class counts, maximal degree and the elements.
    Inspect { file: PathBuf },
    /// Rewrite a dictionary in canonical form, optionally truncated.
    Export {
        file: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        first: Option<usize>,
    },
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let num = |v: &str| v.parse::<u32>().with_context(|| format!("bad grid size {v:?}"));
    Ok(match s.split_once(':') {
        Some(("reuter", g)) => GridSpec::Reuter { gamma: num(g)? },
        Some(("dh", b)) => GridSpec::DriscollHealy { bandwidth: num(b)? },
        _ => GridSpec::File { path: s.into() },
    })
}

fn parse_model(s: &str) -> Result<ModelSpec> {
    if s == "contrived" {
        return Ok(ModelSpec::Contrived);
    }
    let (kind, rest) = s.split_once(':').ok_or_else(|| anyhow!("unknown model {s:?}"))?;
    Ok(match kind {
        "coeffs" => ModelSpec::Coefficients { path: rest.into() },
        "dictionary" => ModelSpec::Dictionary { path: rest.into() },
        "random" => {
            let parts: Vec<&str> = rest.split(':').collect();
            let [band, decay, seed] = parts[..] else {
                bail!("random model needs BAND:DECAY:SEED");
            };
            ModelSpec::Random {
                band_limit: band.parse()?,
                decay: decay.parse()?,
                seed: seed.parse()?,
            }
        }
        _ => bail!("unknown model {s:?}"),
    })
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| p.display().to_string())?),
        None => Box::new(io::stdout().lock()),
    })
}

fn grid(spec: &str, out: &Option<PathBuf>) -> Result<()> {
    let g = parse_grid(spec)?.build()?;
    g.write_csv(sink(out)?)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.noise > 0.0 && a.seed.is_none() {
        bail!("--seed is required for noisy data");
    }
    let grid = parse_grid(&a.grid)?.build()?;
    let model = parse_model(&a.model)?.build()?;
    let sigma = a.sigma.unwrap_or_else(|| lio::sigma_from_height(a.height_km));
    let clean = lio::synthesize(&model, &grid, sigma)?;
    let y = lio::add_noise(&clean, &NoiseSpec { level: a.noise, seed: a.seed })?;
    lio::write_values(grid.points(), &y, sink(&a.out)?)?;
    Ok(())
}

fn configure(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config).with_context(|| a.config.display().to_string())?;
    let (mode, variant) = match a.variant {
        VariantArg::Rfmp => (RunMode::Finite, Variant::Rfmp),
        VariantArg::Rofmp => (RunMode::Finite, Variant::Rofmp),
        VariantArg::Lrfmp => (RunMode::Learn, Variant::Rfmp),
        VariantArg::Lrofmp => (RunMode::Learn, Variant::Rofmp),
    };
    cfg.mode = mode;
    cfg.pursuit.variant = variant;
    if let Some(v) = a.noise {
        cfg.data.noise.level = v;
    }
    if let Some(path) = &a.data {
        cfg.data.file = Some(path.clone());
        cfg.data.model = None;
    }
    if cfg.data.model.is_some() && cfg.data.noise.level > 0.0 {
        let seed = a.seed.ok_or_else(|| anyhow!("--seed is required for noisy runs"))?;
        cfg.data.noise.seed = Some(seed);
    }
    if let Some(v) = a.lambda0 {
        cfg.pursuit.lambda0 = v;
    }
    if let Some(v) = a.rho {
        cfg.pursuit.rho = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.pursuit.max_iterations = v;
    }
    if let Some(path) = &a.dictionary {
        cfg.dictionary = lio::DictionarySpec { file: Some(path.clone()), ..Default::default() };
    }
    if a.replay {
        cfg.replay = true;
    }
    if let Some(o) = &a.output {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = configure(a)?;
    let report = lio::run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (grid, approx) = lio::read_values(File::open(&a.approx)?)?;
    let truth = match (&a.truth, &a.model) {
        (Some(path), _) => {
            let (g, v) = lio::read_values(File::open(path)?)?;
            if g.points() != grid.points() {
                bail!("approximation and truth are given on different points");
            }
            v
        }
        (None, Some(m)) => lio::synthesize(&parse_model(m)?.build()?, &grid, 1.0)?,
        (None, None) => unreachable!("enforced by clap"),
    };
    let rmse = if a.area_weighted {
        lio::rel_rmse_weighted(&approx, &truth, &lio::area_weights(&grid))?
    } else {
        lio::rel_rmse(&approx, &truth)?
    };
    println!("{rmse:e}");
    Ok(())
}

fn dict(action: &DictAction) -> Result<()> {
    match action {
        DictAction::Inspect { file } => {
            let elements = lio::read_dictionary(File::open(file)?)?;
            let mut counts = BTreeMap::new();
            for e in &elements {
                *counts.entry(e.class().to_string()).or_insert(0usize) += 1;
            }
            let nu = elements
                .iter()
                .filter_map(|e| match e {
                    DictionaryElement::Sh(i) => Some(i.n),
                    _ => None,
                })
                .max();
            let mut out = io::stdout().lock();
            writeln!(out, "elements: {}", elements.len())?;
            for (class, n) in &counts {
                writeln!(out, "  {class}: {n}")?;
            }
            match nu {
                Some(n) => writeln!(out, "max degree: {n}")?,
                None => writeln!(out, "max degree: none")?,
            }
            for (i, e) in elements.iter().enumerate() {
                writeln!(out, "{:>5} {}", i + 1, lio::element_line(e))?;
            }
        }
        DictAction::Export { file, out, first } => {
            let mut elements = lio::read_dictionary(File::open(file)?)?;
            if let Some(n) = first {
                elements.truncate(*n);
            }
            lio::write_dictionary(&elements, sink(out)?)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Grid { spec, out } => grid(spec, out),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Dict { action } => dict(action),
    }
}
