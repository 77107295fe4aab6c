use clap::{Args, Parser, Subcommand};
use sosfwi::harness::pipeline::{self, InvertOptions};
use sosfwi::harness::render::{Palette, RenderOptions, Slice};
use sosfwi::harness::{selftest, ExperimentConfig, HarnessError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "usfwi", version, about = "Speed-of-sound full-waveform inversion for single-sided linear arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Experiment {
    /// Experiment TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (e.g. simple_cyst, desk_solid_cyst).
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Phantom and noise seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Experiment {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(HarnessError::Mismatch("pass --config PATH or --preset NAME".into())),
        };
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
            cfg.data.noise_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the phantom, simulate noisy data, write containers.
    Simulate {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a simulated dataset.
    Invert {
        #[command(flatten)]
        exp: Experiment,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Turn TV off (lambda = rho = 0).
        #[arg(long)]
        basic: bool,
        /// Accept data simulated no finer than the inversion grid.
        #[arg(long)]
        allow_inverse_crime: bool,
    },
    /// RMSE and SSIM between two SoS map containers.
    Metrics {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Real map; nonzero cells form the RMSE mask.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Directory for metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a map container as a PNG heatmap.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "viridis")]
        palette: Palette,
        /// Axis fixed for 3D maps (0 lateral, 1 elevation, 2 depth).
        #[arg(long, requires = "slice_index")]
        slice_axis: Option<usize>,
        #[arg(long)]
        slice_index: Option<usize>,
        #[arg(long, requires = "max")]
        min: Option<f64>,
        #[arg(long, requires = "min")]
        max: Option<f64>,
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
    /// Run the quick oracle checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Simulate { exp, out } => {
            let cfg = exp.load()?;
            let sim = pipeline::simulate(&cfg, &out)?;
            let [nt, nr, nf] = sim.data.shape();
            println!("wrote {} (data {nt}x{nr}x{nf}, config {})", out.display(), &cfg.hash()[..12]);
        }
        Command::Invert { exp, data, out, basic, allow_inverse_crime } => {
            let mut cfg = exp.load()?;
            if basic {
                cfg.inversion.admm.lambda = Some(0.0);
                cfg.inversion.admm.rho = Some(0.0);
            }
            let inv = pipeline::invert(&cfg, &data, &out, InvertOptions { allow_inverse_crime })?;
            let r = &inv.report;
            println!("{}: {} iterations, fidelity {:.4e}, {:.1} s", r.label, r.iterations, r.final_fidelity, inv.wall_time_s);
            if let Some(m) = &r.metrics {
                println!("rmse {:.4} m/s, ssim {:.4}", m.rmse, m.ssim);
            }
        }
        Command::Metrics { recon, truth, mask, out } => {
            let m = pipeline::metrics_files(&recon, &truth, mask.as_deref())?;
            let text = serde_json::to_string_pretty(&m).expect("metrics serialize");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
                let p = dir.join("metrics.json");
                std::fs::write(&p, format!("{text}\n")).map_err(|source| HarnessError::Io { path: p.display().to_string(), source })?;
            }
            println!("{text}");
        }
        Command::Render { map, out, palette, slice_axis, slice_index, min, max, scale } => {
            let slice = slice_axis.zip(slice_index).map(|(axis, index)| Slice { axis, index });
            let opts = RenderOptions { palette, range: min.zip(max), scale, slice };
            pipeline::render_file(&map, &out, &opts)?;
            println!("wrote {}", out.display());
        }
        Command::Selftest { workers } => {
            let checks = selftest::run_all(workers);
            for c in &checks {
                println!("{} {:<24} {} [{:.2} s]", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail, c.seconds);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
