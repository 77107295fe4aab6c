//! Transmit sharding and the worker-count independence of forward data.
use sosfwi::forward::{ArrayGeometry, ForwardConfig, ForwardModel, FrequencySet, TransmitPlan};
use sosfwi::harness::schedule;
use sosfwi::medium::{Background, ContrastMap, Grid};
use sosfwi::oracles::rel_l2;

fn main() {
    for workers in [4, 8] {
        let sizes: Vec<usize> = schedule(workers, 60).iter().map(|r| r.len()).collect();
        println!("60 transmits on {workers} workers: {sizes:?}");
    }
    let grid = Grid::centered(&[24, 24], 2e-4, 1e-3).unwrap();
    let geom = ArrayGeometry::linear(8, 5e-4, TransmitPlan::PlaneWave { angles_deg: vec![-20.0, -10.0, 0.0, 10.0, 20.0] });
    let freqs = FrequencySet::new(vec![5e5, 1e6]).unwrap();
    let m = ContrastMap::new(grid.clone(), (0..grid.len()).map(|n| num_complex::Complex64::new(0.02 * (n % 3) as f64, 0.0)).collect()).unwrap();
    let data: Vec<_> = [1, 4]
        .iter()
        .map(|&workers| ForwardModel::new(&grid, &geom, &freqs, &Background::default(), &ForwardConfig { workers, ..Default::default() }).unwrap().simulate(&m).unwrap())
        .collect();
    println!("1 vs 4 workers relative difference: {:.1e}", rel_l2(data[1].values(), data[0].values()));
}
