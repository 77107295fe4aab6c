//! simulate / invert / metrics / render as library calls writing run
//! directories. Every file except `timing.json` depends only on the config,
//! the inputs and the worker count.

use super::config::{ConfigError, ExperimentConfig, ReferenceModel};
use super::container::{ArrayContainer, ContainerError};
use super::metrics::{self, Metrics, MetricsError};
use super::render::{self, RenderError, RenderOptions};
use crate::forward::{add_noise, Dataset, ForwardError, ForwardModel};
use crate::inversion::{self, AdmmOutcome, Aborted, IterationRecord, Weights};
use crate::medium::{contrast_from_medium, db_cm_mhz, medium_from_contrast, AcousticMedium, ContrastMap, Grid, MediumError};
use crate::phantoms::{self, ball_mask, PhantomError};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("forward model: {0}")]
    Forward(#[from] ForwardError),
    #[error("phantom: {0}")]
    Phantom(#[from] PhantomError),
    #[error("medium: {0}")]
    Medium(#[from] MediumError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error(transparent)]
    Inversion(#[from] Box<Aborted>),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(
        "inverse crime: data refinement {data} is not finer than inversion refinement {inversion} (pass --allow-inverse-crime to override)"
    )]
    InverseCrime { data: String, inversion: usize },
    #[error("dataset does not match the config: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn grid_axes(grid: &Grid) -> &'static [&'static str] {
    if grid.dims() == 2 {
        &["lateral", "depth"]
    } else {
        &["lateral", "elevation", "depth"]
    }
}

fn grid_meta(c: ArrayContainer, grid: &Grid) -> ArrayContainer {
    c.meta("grid_shape", grid.shape().to_vec()).meta("grid_spacing", grid.spacing()).meta("grid_origin", grid.origin().to_vec())
}

/// SoS (m/s) and attenuation (dB/cm/MHz) maps of `med`.
fn write_medium(dir: &Path, prefix: &str, med: &AcousticMedium, hash: &str) -> Result<()> {
    let shape = med.grid.shape();
    let axes = grid_axes(&med.grid);
    grid_meta(ArrayContainer::real(shape, axes, "m/s", med.sos.clone()).hash(hash), &med.grid).write(dir, &format!("{prefix}_sos"), None)?;
    let db: Vec<f64> = med.atten.iter().map(|&a| db_cm_mhz_from_np(a)).collect();
    grid_meta(ArrayContainer::real(shape, axes, "dB/cm/MHz", db).hash(hash), &med.grid).write(dir, &format!("{prefix}_atten"), None)?;
    Ok(())
}

fn db_cm_mhz_from_np(np_m_hz: f64) -> f64 {
    np_m_hz / db_cm_mhz(1.0)
}

/// Truth medium averaged onto `grid` through the contrast.
pub fn restrict_medium(med: &AcousticMedium, grid: &Grid) -> Result<AcousticMedium> {
    Ok(medium_from_contrast(&contrast_from_medium(med, grid)?, &med.background)?)
}

pub struct Simulation {
    pub data: Dataset,
    /// Phantom on the data-generation grid.
    pub truth_fine: AcousticMedium,
    /// Phantom averaged onto the inversion grid.
    pub truth: AcousticMedium,
}

/// Phantom, forward data on the refined data grid, and noise.
pub fn simulate_data(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let grid = cfg.inversion_grid()?;
    // The phantom lives on the data grid itself, so the model there is unrefined.
    let fine = grid.refine(cfg.data.refinement);
    let fwd = crate::forward::ForwardConfig { refinement: 1, ..cfg.data_forward_config() };
    let model = ForwardModel::new(&fine, &cfg.geometry(), &cfg.frequencies.build()?, &cfg.background(), &fwd)?;
    let truth_fine = phantoms::build(&cfg.scenario, &fine)?;
    let clean = model.simulate(&contrast_from_medium(&truth_fine, &fine)?)?;
    let data = add_noise(&clean, cfg.data.noise_level, cfg.data.noise_seed)?;
    let truth = restrict_medium(&truth_fine, &grid)?;
    Ok(Simulation { data, truth_fine, truth })
}

/// Writes `data`, `truth_sos`, `truth_atten`, `truth_fine_sos`,
/// `truth_fine_atten` and `config.toml` to `out`.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Simulation> {
    let sim = simulate_data(cfg)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let hash = cfg.hash();
    let grid = cfg.inversion_grid()?;
    let [nt, nr, nf] = sim.data.shape();
    grid_meta(ArrayContainer::complex(&[nt, nr, nf], &["transmit", "receiver", "frequency"], "Pa", sim.data.values().to_vec()).hash(&hash), &grid)
        .meta("data_refinement", cfg.data.refinement)
        .meta("noise_level", cfg.data.noise_level)
        .meta("noise_seed", cfg.data.noise_seed)
        .meta("frequencies_hz", cfg.frequencies.build()?.hz().to_vec())
        .write(out, "data", None)?;
    write_medium(out, "truth", &sim.truth, &hash)?;
    write_medium(out, "truth_fine", &sim.truth_fine, &hash)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    Ok(sim)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InvertOptions {
    pub allow_inverse_crime: bool,
}

/// Loads a dataset written by [`simulate`] and checks it against `cfg`.
pub fn load_dataset(cfg: &ExperimentConfig, data_dir: &Path, opts: InvertOptions) -> Result<Dataset> {
    let c = ArrayContainer::read(&data_dir.join("data.json"))?;
    let geom = cfg.geometry();
    let expected = [geom.n_transmits(), geom.n_receivers(), cfg.frequencies.count];
    if c.shape != expected {
        return Err(HarnessError::Mismatch(format!("dataset shape {:?}, config expects {:?}", c.shape, expected)));
    }
    let values = c.as_complex().ok_or_else(|| HarnessError::Mismatch("dataset is not complex".into()))?.to_vec();
    if let Some(shape) = c.metadata.get("grid_shape") {
        if *shape != serde_json::json!(cfg.grid.shape) {
            return Err(HarnessError::Mismatch(format!("dataset grid {shape}, config grid {:?}", cfg.grid.shape)));
        }
    }
    let refinement = c.metadata.get("data_refinement").and_then(|v| v.as_u64());
    let inv = cfg.forward.refinement;
    if !opts.allow_inverse_crime && refinement.is_none_or(|r| r as usize <= inv) {
        let data = refinement.map_or("unknown".into(), |r| r.to_string());
        return Err(HarnessError::InverseCrime { data, inversion: inv });
    }
    Ok(Dataset::new(expected, values)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub label: String,
    pub config_hash: String,
    pub weights: Weights,
    pub iterations: usize,
    pub final_fidelity: f64,
    pub vie_solves: usize,
    pub gmres_iterations: usize,
    pub metrics: Option<Metrics>,
}

pub struct Inversion {
    pub outcome: AdmmOutcome,
    pub m0: ContrastMap,
    pub recon: AcousticMedium,
    pub report: Report,
    pub wall_time_s: f64,
}

/// "basic FWI" when TV is off, "FWI-TV" otherwise.
pub fn label(weights: &Weights) -> &'static str {
    if weights.lambda == 0.0 {
        "basic FWI"
    } else {
        "FWI-TV"
    }
}

/// Named masks for region means: cyst interior or each sphere, plus the
/// background away from all targets.
pub fn regions(cfg: &ExperimentConfig, grid: &Grid) -> Vec<(String, Vec<bool>)> {
    let mut out = Vec::new();
    let mut away = vec![true; grid.len()];
    if let Some(c) = &cfg.scenario.cyst {
        out.push(("cyst_interior".to_string(), ball_mask(grid, &c.center, c.radius - c.wall_thickness)));
        ball_mask(grid, &c.center, c.radius + 2.0 * grid.spacing()).iter().enumerate().for_each(|(n, &b)| away[n] &= !b);
    }
    for (i, s) in cfg.scenario.spheres.iter().enumerate() {
        out.push((format!("sphere_{i}"), ball_mask(grid, &s.center, s.radius)));
        ball_mask(grid, &s.center, 2.0 * s.radius + grid.spacing()).iter().enumerate().for_each(|(n, &b)| away[n] &= !b);
    }
    if let Some(l) = &cfg.scenario.layer {
        let d = grid.dims();
        (0..grid.len()).for_each(|n| {
            let z = grid.center(n)[d - 1];
            away[n] &= !(z >= l.top - grid.spacing() && z < l.top + l.thickness + grid.spacing());
        });
    }
    out.retain(|r| r.1.contains(&true));
    if away.contains(&true) {
        out.push(("background".to_string(), away));
    }
    out
}

/// Runs the inversion for `cfg` on `d_obs`; `observe` sees every record.
pub fn invert_data<F: FnMut(&IterationRecord)>(cfg: &ExperimentConfig, d_obs: &Dataset, truth: Option<&AcousticMedium>, observe: F) -> Result<Inversion> {
    cfg.validate()?;
    let t0 = Instant::now();
    let grid = cfg.inversion_grid()?;
    let model = ForwardModel::new(&grid, &cfg.geometry(), &cfg.frequencies.build()?, &cfg.background(), &cfg.forward_config())?;
    let m0 = phantoms::initial_model(&cfg.scenario, &grid, cfg.inversion.initial_blur)?;
    let mut admm = cfg.admm();
    admm.m_ref = match cfg.inversion.reference_model {
        ReferenceModel::Initial => Some(m0.clone()),
        ReferenceModel::Background => None,
    };
    let outcome = inversion::run(&model, d_obs, &m0, &admm, observe).map_err(Box::new)?;
    let recon = medium_from_contrast(&outcome.state.m, &cfg.background())?;
    let metrics = match truth {
        Some(t) => Some(metrics::evaluate(&recon.sos, &t.sos, grid.shape(), None, &regions(cfg, &grid))?),
        None => None,
    };
    let history = &outcome.state.history;
    let report = Report {
        label: label(&outcome.weights).into(),
        config_hash: cfg.hash(),
        weights: outcome.weights,
        iterations: history.len(),
        final_fidelity: history.last().map_or(f64::NAN, |r| r.fidelity),
        vie_solves: history.iter().map(|r| r.solves).sum(),
        gmres_iterations: history.iter().map(|r| r.gmres_iterations).sum(),
        metrics,
    };
    Ok(Inversion { outcome, m0, recon, report, wall_time_s: t0.elapsed().as_secs_f64() })
}

/// History line without the timing field, so reruns match byte for byte.
pub fn history_line(r: &IterationRecord) -> String {
    let mut v = serde_json::to_value(r).expect("record serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_time_s");
    }
    v.to_string()
}

#[derive(Serialize)]
struct Timing {
    total_s: f64,
    iteration_s: Vec<f64>,
}

/// Reads `data_dir/data.json` (and the truth maps when present), inverts,
/// and writes `recon_sos`, `recon_atten`, `recon_contrast`, `history.jsonl`,
/// `report.json`, `timing.json` and `config.toml` to `out`.
pub fn invert(cfg: &ExperimentConfig, data_dir: &Path, out: &Path, opts: InvertOptions) -> Result<Inversion> {
    cfg.validate()?;
    let d_obs = load_dataset(cfg, data_dir, opts)?;
    let grid = cfg.inversion_grid()?;
    let truth = read_truth(data_dir, &grid, cfg)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let hpath = out.join("history.jsonl");
    let mut history = std::fs::File::create(&hpath).map_err(io_err(&hpath))?;
    let mut write_err = None;
    let result = invert_data(cfg, &d_obs, truth.as_ref(), |r| {
        if let Err(e) = writeln!(history, "{}", history_line(r)).and_then(|_| history.flush()) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(HarnessError::Io { path: hpath.display().to_string(), source: e });
    }
    let inv = result?;
    let hash = cfg.hash();
    let shape = grid.shape();
    grid_meta(ArrayContainer::complex(shape, grid_axes(&grid), "1", inv.outcome.state.m.values.clone()).hash(&hash), &grid)
        .meta("label", inv.report.label.clone())
        .write(out, "recon_contrast", None)?;
    write_medium(out, "recon", &inv.recon, &hash)?;
    write_json(&out.join("report.json"), &inv.report)?;
    let timing = Timing { total_s: inv.wall_time_s, iteration_s: inv.outcome.state.history.iter().map(|r| r.wall_time_s).collect() };
    write_json(&out.join("timing.json"), &timing)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    Ok(inv)
}

fn read_truth(data_dir: &Path, grid: &Grid, cfg: &ExperimentConfig) -> Result<Option<AcousticMedium>> {
    let (sp, ap) = (data_dir.join("truth_sos.json"), data_dir.join("truth_atten.json"));
    if !sp.exists() || !ap.exists() {
        return Ok(None);
    }
    let (s, a) = (read_real(&sp)?, read_real(&ap)?);
    if s.0 != grid.shape() || a.0 != grid.shape() {
        return Ok(None);
    }
    let atten = a.1.iter().map(|&v| db_cm_mhz(v)).collect();
    Ok(Some(AcousticMedium { grid: grid.clone(), sos: s.1, atten, background: cfg.background() }))
}

/// Shape and values of a real-valued container.
pub fn read_real(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let c = ArrayContainer::read(path)?;
    let v = c.as_real().ok_or_else(|| HarnessError::Mismatch(format!("{} is not a real map", path.display())))?.to_vec();
    Ok((c.shape, v))
}

/// Compares two SoS map containers; a nonzero `mask` map restricts RMSE.
pub fn metrics_files(recon: &Path, truth: &Path, mask: Option<&Path>) -> Result<Metrics> {
    let (rs, rv) = read_real(recon)?;
    let (ts, tv) = read_real(truth)?;
    if rs != ts {
        return Err(MetricsError::ShapeMismatch(rs, ts).into());
    }
    let mask = match mask {
        Some(p) => {
            let (ms, mv) = read_real(p)?;
            if ms != rs {
                return Err(MetricsError::ShapeMismatch(ms, rs).into());
            }
            Some(mv.iter().map(|&v| v != 0.0).collect::<Vec<_>>())
        }
        None => None,
    };
    Ok(metrics::evaluate(&rv, &tv, &rs, mask.as_deref(), &[])?)
}

/// Renders a real map container to a PNG.
pub fn render_file(map: &Path, out: &Path, opts: &RenderOptions) -> Result<PathBuf> {
    let (shape, values) = read_real(map)?;
    let img = render::render(&values, &shape, opts)?;
    render::write_png(&img, out)?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A tiny configuration that runs in well under a second.
    pub(crate) fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("desk_simple_cyst").unwrap();
        cfg.grid.shape = vec![16, 12];
        cfg.grid.spacing = 5e-4;
        cfg.grid.depth_start = 1e-3;
        let cyst = cfg.scenario.cyst.as_mut().unwrap();
        cyst.center = vec![0.0, 4e-3];
        cyst.radius = 1.5e-3;
        cfg.array.elements = 8;
        cfg.array.pitch = 1e-3;
        cfg.array.transmit = super::super::config::TransmitSpec::PlaneWave { min_deg: -20.0, max_deg: 20.0, count: 3 };
        cfg.frequencies.count = 2;
        cfg.frequencies.max_hz = 0.6e6;
        cfg.inversion.admm.outer_iters = 2;
        cfg
    }

    #[test]
    fn simulate_is_deterministic_and_echoes_config() {
        let cfg = tiny();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        simulate(&cfg, a.path()).unwrap();
        simulate(&cfg, b.path()).unwrap();
        for f in ["data.json", "data.bin", "truth_sos.bin", "truth_fine_atten.bin", "config.toml"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let echoed = ExperimentConfig::load(&a.path().join("config.toml")).unwrap();
        assert_eq!(echoed, cfg);
        assert_eq!(ArrayContainer::read_header(&a.path().join("data.json")).unwrap().config_hash, cfg.hash());
    }

    #[test]
    fn background_without_noise_gives_zero_data() {
        let mut cfg = tiny();
        cfg.scenario = phantoms::ScenarioSpec::preset(phantoms::ScenarioKind::Custom);
        cfg.scenario.background = cfg.scenario.reference;
        cfg.data.noise_level = 0.0;
        let sim = simulate_data(&cfg).unwrap();
        assert!(sim.data.values().iter().all(|v| *v == num_complex::Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn inverse_crime_guard_and_shape_check() {
        let mut cfg = tiny();
        cfg.data.refinement = cfg.forward.refinement;
        let dir = tempfile::tempdir().unwrap();
        simulate(&cfg, dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(invert(&cfg, dir.path(), out.path(), InvertOptions::default()), Err(HarnessError::InverseCrime { .. })));
        assert!(load_dataset(&cfg, dir.path(), InvertOptions { allow_inverse_crime: true }).is_ok());
        let mut other = cfg.clone();
        other.frequencies.count = 3;
        assert!(matches!(load_dataset(&other, dir.path(), InvertOptions { allow_inverse_crime: true }), Err(HarnessError::Mismatch(_))));
    }

    #[test]
    fn invert_writes_history_report_and_maps() {
        let mut cfg = tiny();
        let data = tempfile::tempdir().unwrap();
        simulate(&cfg, data.path()).unwrap();
        cfg.inversion.admm.lambda = Some(0.0);
        cfg.inversion.admm.rho = Some(0.0);
        let out = tempfile::tempdir().unwrap();
        let inv = invert(&cfg, data.path(), out.path(), InvertOptions::default()).unwrap();
        let lines = std::fs::read_to_string(out.path().join("history.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), cfg.inversion.admm.outer_iters);
        assert!(!lines.contains("wall_time"));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report["label"], "basic FWI");
        assert!(report["metrics"]["rmse"].as_f64().unwrap() > 0.0);
        let (shape, sos) = read_real(&out.path().join("recon_sos.json")).unwrap();
        assert_eq!(shape, cfg.grid.shape);
        assert_eq!(sos, inv.recon.sos);
        let m = metrics_files(&out.path().join("recon_sos.json"), &data.path().join("truth_sos.json"), None).unwrap();
        assert_eq!(m.rmse, inv.report.metrics.as_ref().unwrap().rmse);
        let png = out.path().join("recon.png");
        render_file(&out.path().join("recon_sos.json"), &png, &RenderOptions::default()).unwrap();
        assert!(std::fs::metadata(png).unwrap().len() > 0);
    }
}
