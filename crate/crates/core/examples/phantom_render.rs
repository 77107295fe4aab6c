//! Builds a preset phantom and renders its SoS map to a PNG.
use sosfwi::harness::render::{render, write_png, RenderOptions};
use sosfwi::harness::ExperimentConfig;
use sosfwi::phantoms::build;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "desk_muscle_cyst".into());
    let cfg = ExperimentConfig::preset(&name).unwrap();
    let grid = cfg.inversion_grid().unwrap();
    let med = build(&cfg.scenario, &grid).unwrap();
    let (lo, hi) = med.sos.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let out = std::env::temp_dir().join(format!("{name}_truth.png"));
    let slice = (grid.dims() == 3).then(|| sosfwi::harness::render::Slice { axis: 1, index: grid.shape()[1] / 2 });
    write_png(&render(&med.sos, grid.shape(), &RenderOptions { slice, ..Default::default() }).unwrap(), &out).unwrap();
    println!("{name}: {:?} cells, SoS {lo:.1}..{hi:.1} m/s -> {}", grid.shape(), out.display());
}
