//! Matrix-free Jacobian products and the adjoint identity <Ja, b> = <a, J^H b>.
use num_complex::Complex64 as C64;
use sosfwi::forward::{ArrayGeometry, Dataset, ForwardConfig, ForwardModel, FrequencySet, TransmitPlan};
use sosfwi::medium::{Background, Grid};
use sosfwi::sensitivity::{FieldBank, LinearizedOperator};

fn main() {
    let grid = Grid::centered(&[32, 32], 2e-4, 1e-3).unwrap();
    let geom = ArrayGeometry::linear(8, 5e-4, TransmitPlan::PlaneWave { angles_deg: vec![-15.0, -5.0, 5.0, 15.0] });
    let freqs = FrequencySet::new(vec![4e5, 8e5]).unwrap();
    let model = ForwardModel::new(&grid, &geom, &freqs, &Background::default(), &ForwardConfig::default()).unwrap();
    let m_fwd = vec![C64::new(0.01, 0.0); model.forward_grid().len()];
    let (bank, fwd, adj) = FieldBank::solve(&model, &m_fwd, 0).unwrap();
    let op = LinearizedOperator::new(&model, &bank);
    let a: Vec<C64> = (0..op.n_params()).map(|n| C64::new((n as f64).sin(), (2.0 * n as f64).cos())).collect();
    let shape = model.data_shape();
    let b = Dataset::new(shape, (0..shape.iter().product()).map(|n: usize| C64::new((n as f64 * 0.3).cos(), 0.5)).collect()).unwrap();
    let ja = op.jvp(&a).unwrap();
    let jhb = op.vjp(&b).unwrap();
    let lhs: C64 = b.values().iter().zip(ja.values()).map(|(x, y)| x.conj() * y).sum();
    let rhs: C64 = jhb.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
    println!("{} forward + {} adjoint solves", fwd.solves, adj.solves);
    println!("<Ja,b> = {lhs:.6e}\n<a,J^H b> = {rhs:.6e}\nnormalized gap {:.2e}", (lhs - rhs).norm() / (ja.norm() * b.norm()));
}
