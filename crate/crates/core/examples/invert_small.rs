//! Simulates a small cyst and inverts it with and without TV.
use sosfwi::harness::config::TransmitSpec;
use sosfwi::harness::pipeline::{invert_data, simulate_data};
use sosfwi::harness::ExperimentConfig;

fn main() {
    let mut cfg = ExperimentConfig::preset("desk_solid_cyst").unwrap();
    cfg.grid.shape = vec![32, 24];
    cfg.grid.spacing = 4e-4;
    let cyst = cfg.scenario.cyst.as_mut().unwrap();
    cyst.center = vec![0.0, 5.5e-3];
    cyst.radius = 3e-3;
    cfg.array.elements = 16;
    cfg.array.pitch = 8e-4;
    cfg.array.transmit = TransmitSpec::PlaneWave { min_deg: -30.0, max_deg: 30.0, count: 5 };
    cfg.frequencies.count = 4;
    cfg.frequencies.max_hz = 1e6;
    cfg.inversion.admm.outer_iters = 8;
    let sim = simulate_data(&cfg).unwrap();
    for basic in [true, false] {
        let mut c = cfg.clone();
        if basic {
            c.inversion.admm.lambda = Some(0.0);
            c.inversion.admm.rho = Some(0.0);
        }
        let inv = invert_data(&c, &sim.data, Some(&sim.truth), |r| println!("  k={} fidelity {:.3e} step {}", r.k, r.fidelity, r.step)).unwrap();
        let m = inv.report.metrics.unwrap();
        println!("{}: rmse {:.2} m/s, ssim {:.3}, {:.1} s", inv.report.label, m.rmse, m.ssim, inv.wall_time_s);
    }
}
