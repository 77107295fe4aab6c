//! FFT convolution with the cell-averaged Green kernel against dense assembly.
use num_complex::Complex64 as C64;
use sosfwi::greens::{BackgroundWavenumber, ConvolutionKernel};
use sosfwi::medium::{Background, Grid};
use sosfwi::oracles::{dense_apply, rel_l2};

fn main() {
    let grid = Grid::centered(&[24, 24], 1e-4, 1e-3).unwrap();
    let k = BackgroundWavenumber::new(1e6, &Background::default()).unwrap();
    let f: Vec<C64> = (0..grid.len()).map(|n| C64::new((n as f64 * 0.37).sin(), (n as f64 * 0.11).cos())).collect();
    let fast = ConvolutionKernel::new(&grid, &k).apply(&f).unwrap();
    println!("FFT vs dense relative L2: {:.2e}", rel_l2(&fast, &dense_apply(&grid, &k, &f)));
}
