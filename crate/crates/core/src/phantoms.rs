//! Seeded phantom builders: cysts with a wall, an overlying muscle layer,
//! spheres in 3D, and Gaussian-correlated speckle.

use crate::medium::{contrast_from_medium, db_cm_mhz, AcousticMedium, Background, ContrastMap, Grid, MediumError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("{region} does not fit inside the grid")]
    Overflow { region: &'static str },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Medium(#[from] MediumError),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SimpleCyst,
    SolidCyst,
    MuscleCyst,
    #[serde(rename = "sphere_pair_3d")]
    SpherePair3d,
    Custom,
}

/// Speed of sound (m/s) and attenuation (dB/cm/MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub sos: f64,
    pub atten_db: f64,
}

impl Tissue {
    pub const fn new(sos: f64, atten_db: f64) -> Self {
        Self { sos, atten_db }
    }
}

/// Relative SoS standard deviation and Gaussian-kernel correlation length (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speckle {
    pub std: f64,
    pub corr_len: f64,
}

impl Speckle {
    pub const NONE: Speckle = Speckle { std: 0.0, corr_len: 3e-4 };
}

/// Circular (2D) or spherical (3D) cyst with a wall shell inside `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cyst {
    /// Lateral position (and elevation in 3D) then depth, m.
    pub center: Vec<f64>,
    pub radius: f64,
    pub wall_thickness: f64,
    pub wall: Tissue,
    pub interior: Tissue,
    pub interior_speckle: Speckle,
}

/// Horizontal layer spanning `top..top + thickness` in depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub top: f64,
    pub thickness: f64,
    pub tissue: Tissue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub tissue: Tissue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Homogeneous reference that defines the contrast and the initial model.
    pub reference: Tissue,
    /// Mean background tissue.
    pub background: Tissue,
    pub background_speckle: Speckle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyst: Option<Cyst>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<Layer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spheres: Vec<Sphere>,
    pub seed: u64,
}

const BACKGROUND_2D: Tissue = Tissue::new(1540.0, 0.5);
const SPECKLE: Speckle = Speckle { std: 0.002, corr_len: 3e-4 };

impl ScenarioSpec {
    /// Full-scale defaults for each scenario kind.
    pub fn preset(kind: ScenarioKind) -> Self {
        let cyst = |interior: Tissue, interior_speckle: Speckle| Cyst {
            center: vec![0.0, 25e-3],
            radius: 10e-3,
            wall_thickness: 0.8e-3,
            wall: Tissue::new(1580.0, BACKGROUND_2D.atten_db),
            interior,
            interior_speckle,
        };
        let base = Self {
            kind,
            reference: Tissue::new(1540.0, 0.0),
            background: BACKGROUND_2D,
            background_speckle: SPECKLE,
            cyst: None,
            layer: None,
            spheres: Vec::new(),
            seed: 0,
        };
        match kind {
            ScenarioKind::SimpleCyst => Self { cyst: Some(cyst(Tissue::new(1540.0, 0.02), Speckle::NONE)), ..base },
            ScenarioKind::SolidCyst => Self { cyst: Some(cyst(Tissue::new(1620.0, 1.2), Speckle { std: 0.015, corr_len: 3e-4 })), ..base },
            ScenarioKind::MuscleCyst => Self {
                cyst: Some(cyst(Tissue::new(1620.0, 1.2), Speckle { std: 0.015, corr_len: 3e-4 })),
                layer: Some(Layer { top: 4e-3, thickness: 8e-3, tissue: Tissue::new(1590.0, 0.7) }),
                ..base
            },
            ScenarioKind::SpherePair3d => Self {
                reference: Tissue::new(1540.0, 0.7),
                background: Tissue::new(1540.0, 0.7),
                background_speckle: Speckle::NONE,
                spheres: vec![
                    Sphere { center: vec![-2e-3, 0.0, 12e-3], radius: 0.8e-3, tissue: Tissue::new(1400.0, 0.05) },
                    Sphere { center: vec![2e-3, 0.0, 12e-3], radius: 0.5e-3, tissue: Tissue::new(1600.0, 0.7) },
                ],
                ..base
            },
            ScenarioKind::Custom => Self { background_speckle: Speckle::NONE, ..base },
        }
    }

    /// Background used for contrast and forward modelling.
    pub fn reference_background(&self) -> Background {
        Background { c0: self.reference.sos, alpha0: db_cm_mhz(self.reference.atten_db), ..Background::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(PhantomError::Invalid(s));
        let mut tissues = vec![("reference", self.reference), ("background", self.background)];
        let mut speckles = vec![self.background_speckle];
        if let Some(c) = &self.cyst {
            if !(c.radius > 0.0) || !(c.wall_thickness >= 0.0) || c.wall_thickness > c.radius {
                return bad(format!("cyst radius {} / wall {}", c.radius, c.wall_thickness));
            }
            tissues.push(("cyst wall", c.wall));
            tissues.push(("cyst interior", c.interior));
            speckles.push(c.interior_speckle);
        }
        if let Some(l) = &self.layer {
            if !(l.thickness > 0.0) {
                return bad(format!("layer thickness {}", l.thickness));
            }
            tissues.push(("layer", l.tissue));
        }
        for s in &self.spheres {
            if !(s.radius > 0.0) {
                return bad(format!("sphere radius {}", s.radius));
            }
            tissues.push(("sphere", s.tissue));
        }
        for (name, t) in tissues {
            if !(t.sos > 0.0 && t.sos.is_finite()) || !(t.atten_db >= 0.0) {
                return bad(format!("{name} tissue {t:?}"));
            }
        }
        if speckles.iter().any(|s| !(s.std >= 0.0 && s.std < 0.5) || !(s.corr_len > 0.0)) {
            return bad("speckle std must be in [0, 0.5) and corr_len > 0".into());
        }
        Ok(())
    }

    fn check_fit(&self, grid: &Grid) -> Result<()> {
        let (lo, hi) = grid.bounds();
        let d = grid.dims();
        let ball_fits = |center: &[f64], r: f64| center.len() == d && (0..d).all(|q| center[q] - r >= lo[q] - 1e-12 && center[q] + r <= hi[q] + 1e-12);
        if let Some(c) = &self.cyst {
            if !ball_fits(&c.center, c.radius) {
                return Err(PhantomError::Overflow { region: "cyst" });
            }
        }
        if let Some(l) = &self.layer {
            if l.top < lo[d - 1] - 1e-12 || l.top + l.thickness > hi[d - 1] + 1e-12 {
                return Err(PhantomError::Overflow { region: "layer" });
            }
        }
        for s in &self.spheres {
            if !ball_fits(&s.center, s.radius) {
                return Err(PhantomError::Overflow { region: "sphere" });
            }
        }
        Ok(())
    }
}

fn distance(p: &[f64; 3], c: &[f64]) -> f64 {
    c.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Gaussian blur with standard deviation `sigma_cells`, separable along every
/// axis, replicate boundary.
pub fn gaussian_blur(grid: &Grid, field: &[f64], sigma_cells: f64) -> Vec<f64> {
    if sigma_cells <= 0.0 {
        return field.to_vec();
    }
    let half = (4.0 * sigma_cells).ceil() as i64;
    let weights: Vec<f64> = (-half..=half).map(|t| (-0.5 * (t as f64 / sigma_cells).powi(2)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let shape = grid.shape();
    let strides = grid.strides();
    let mut cur = field.to_vec();
    for q in 0..grid.dims() {
        let n_q = shape[q] as i64;
        let mut next = vec![0.0; cur.len()];
        for (n, out) in next.iter_mut().enumerate() {
            let i = grid.unravel(n)[q] as i64;
            let base = n - i as usize * strides[q];
            *out = weights
                .iter()
                .enumerate()
                .map(|(t, w)| {
                    let s = (i + t as i64 - half).clamp(0, n_q - 1) as usize;
                    w * cur[base + s * strides[q]]
                })
                .sum();
        }
        cur = next;
    }
    cur
}

/// Zero-mean, unit-variance Gaussian random field with Gaussian correlation
/// of standard deviation `corr_len`.
pub fn speckle_field(grid: &Grid, corr_len: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let white: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut f = gaussian_blur(grid, &white, corr_len / grid.spacing());
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let inv = if std > 0.0 { 1.0 / std } else { 0.0 };
    f.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    f
}

/// Fills the cells of `mask` with `mean (1 + std z)` rescaled so the masked
/// mean is exactly `mean`.
fn texture(sos: &mut [f64], mask: &[usize], mean: f64, speckle: Speckle, z: &[f64]) {
    if mask.is_empty() {
        return;
    }
    if speckle.std == 0.0 {
        mask.iter().for_each(|&n| sos[n] = mean);
        return;
    }
    let raw: Vec<f64> = mask.iter().map(|&n| mean * (1.0 + speckle.std * z[n])).collect();
    let shift = mean - raw.iter().sum::<f64>() / raw.len() as f64;
    for (&n, v) in mask.iter().zip(raw) {
        sos[n] = v + shift;
    }
}

/// Rasterizes the scenario onto `grid` by cell-centre membership.
pub fn build(spec: &ScenarioSpec, grid: &Grid) -> Result<AcousticMedium> {
    spec.validate()?;
    spec.check_fit(grid)?;
    let d = grid.dims();
    let n = grid.len();
    let background = spec.reference_background();
    let mut sos = vec![spec.background.sos; n];
    let mut atten = vec![db_cm_mhz(spec.background.atten_db); n];
    let centers: Vec<[f64; 3]> = (0..n).map(|i| grid.center(i)).collect();

    let mut background_mask: Vec<usize> = (0..n).collect();
    let set = |mask: &[usize], t: Tissue, atten: &mut Vec<f64>| {
        let a = db_cm_mhz(t.atten_db);
        mask.iter().for_each(|&i| atten[i] = a);
    };
    let mut layer_mask = Vec::new();
    if let Some(l) = &spec.layer {
        layer_mask = (0..n).filter(|&i| centers[i][d - 1] >= l.top && centers[i][d - 1] < l.top + l.thickness).collect();
        set(&layer_mask, l.tissue, &mut atten);
    }
    let mut wall_mask = Vec::new();
    let mut interior_mask = Vec::new();
    if let Some(c) = &spec.cyst {
        for i in 0..n {
            let r = distance(&centers[i], &c.center);
            if r <= c.radius - c.wall_thickness {
                interior_mask.push(i);
            } else if r <= c.radius {
                wall_mask.push(i);
            }
        }
        set(&wall_mask, c.wall, &mut atten);
        set(&interior_mask, c.interior, &mut atten);
    }
    let mut sphere_masks = Vec::new();
    for s in &spec.spheres {
        let mask: Vec<usize> = (0..n).filter(|&i| distance(&centers[i], &s.center) <= s.radius).collect();
        set(&mask, s.tissue, &mut atten);
        sphere_masks.push(mask);
    }
    let mut covered = vec![false; n];
    for &i in layer_mask.iter().chain(&wall_mask).chain(&interior_mask).chain(sphere_masks.iter().flatten()) {
        covered[i] = true;
    }
    background_mask.retain(|&i| !covered[i]);

    if spec.background_speckle.std > 0.0 {
        let z = speckle_field(grid, spec.background_speckle.corr_len, spec.seed, 0);
        texture(&mut sos, &background_mask, spec.background.sos, spec.background_speckle, &z);
    }
    if let Some(l) = &spec.layer {
        let mut in_cyst = vec![false; n];
        wall_mask.iter().chain(&interior_mask).for_each(|&i| in_cyst[i] = true);
        let layer_only: Vec<usize> = layer_mask.iter().copied().filter(|&i| !in_cyst[i]).collect();
        let z = if spec.background_speckle.std > 0.0 { speckle_field(grid, spec.background_speckle.corr_len, spec.seed, 1) } else { vec![0.0; n] };
        texture(&mut sos, &layer_only, l.tissue.sos, spec.background_speckle, &z);
    }
    if let Some(c) = &spec.cyst {
        texture(&mut sos, &wall_mask, c.wall.sos, Speckle::NONE, &[]);
        let z = if c.interior_speckle.std > 0.0 { speckle_field(grid, c.interior_speckle.corr_len, spec.seed, 2) } else { Vec::new() };
        texture(&mut sos, &interior_mask, c.interior.sos, c.interior_speckle, &z);
    }
    for (s, mask) in spec.spheres.iter().zip(&sphere_masks) {
        texture(&mut sos, mask, s.tissue.sos, Speckle::NONE, &[]);
    }
    let med = AcousticMedium { grid: grid.clone(), sos, atten, background };
    med.validate()?;
    Ok(med)
}

/// Cells of `grid` whose centres lie inside the given ball.
pub fn ball_mask(grid: &Grid, center: &[f64], radius: f64) -> Vec<bool> {
    (0..grid.len()).map(|i| distance(&grid.center(i), center) <= radius).collect()
}

/// Starting model: the target-free layered SoS (layer only; no cyst, spheres
/// or speckle) blurred by `blur_std` metres, with the reference attenuation.
/// Cases without a layer give `m0 = 0`.
pub fn initial_model(spec: &ScenarioSpec, grid: &Grid, blur_std: f64) -> Result<ContrastMap> {
    if !(blur_std >= 0.0) {
        return Err(PhantomError::Invalid(format!("blur_std {blur_std}")));
    }
    spec.validate()?;
    let background = spec.reference_background();
    let Some(layer) = &spec.layer else {
        return Ok(ContrastMap::zeros(grid.clone()));
    };
    let d = grid.dims();
    let layered: Vec<f64> = (0..grid.len())
        .map(|i| {
            let z = grid.center(i)[d - 1];
            if z >= layer.top && z < layer.top + layer.thickness {
                layer.tissue.sos
            } else {
                spec.background.sos
            }
        })
        .collect();
    let sos = gaussian_blur(grid, &layered, blur_std / grid.spacing());
    let atten = vec![background.alpha0; grid.len()];
    let med = AcousticMedium { grid: grid.clone(), sos, atten, background };
    Ok(contrast_from_medium(&med, grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::medium_from_contrast;
    use std::collections::BTreeSet;

    fn grid2(n: usize, h: f64) -> Grid {
        Grid::centered(&[n, n], h, 0.0).unwrap()
    }

    fn scaled(kind: ScenarioKind) -> ScenarioSpec {
        let mut s = ScenarioSpec::preset(kind);
        if let Some(c) = s.cyst.as_mut() {
            c.center = vec![0.0, 8e-3];
            c.radius = 3e-3;
        }
        if let Some(l) = s.layer.as_mut() {
            l.top = 1e-3;
            l.thickness = 2.4e-3;
        }
        s
    }

    #[test]
    fn simple_cyst_without_speckle_has_paper_values() {
        let mut spec = scaled(ScenarioKind::SimpleCyst);
        spec.background_speckle.std = 0.0;
        let med = build(&spec, &grid2(96, 1.25e-4)).unwrap();
        let values: BTreeSet<u64> = med.sos.iter().map(|v| v.to_bits()).collect();
        let values: Vec<f64> = values.into_iter().map(f64::from_bits).collect();
        assert_eq!(values, vec![1540.0, 1580.0]);
        let interior = med.sos.iter().zip(&med.atten).filter(|(_, &a)| (a - db_cm_mhz(0.02)).abs() < 1e-15).count();
        assert!(interior > 0);
        assert!(med.atten.iter().all(|&a| [0.02, 0.5].iter().any(|&v| (a - db_cm_mhz(v)).abs() < 1e-15)));
    }

    #[test]
    fn seeded_builds_are_identical() {
        let spec = scaled(ScenarioKind::MuscleCyst);
        let g = grid2(96, 1.25e-4);
        assert_eq!(build(&spec, &g).unwrap(), build(&spec, &g).unwrap());
        let other = ScenarioSpec { seed: 9, ..spec.clone() };
        assert_ne!(build(&spec, &g).unwrap().sos, build(&other, &g).unwrap().sos);
    }

    #[test]
    fn solid_cyst_interior_mean() {
        let spec = scaled(ScenarioKind::SolidCyst);
        let g = grid2(96, 1.25e-4);
        let med = build(&spec, &g).unwrap();
        let c = spec.cyst.as_ref().unwrap();
        let mask = ball_mask(&g, &c.center, c.radius - c.wall_thickness);
        let inside: Vec<f64> = med.sos.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        assert!((mean - 1620.0).abs() <= 0.01 * 1620.0);
        let std = (inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inside.len() as f64).sqrt();
        assert!(std > 0.01 * 1620.0 && std < 0.05 * 1620.0, "{std}");
        // Background speckle keeps its mean.
        let outside = ball_mask(&g, &c.center, c.radius);
        let bg: Vec<f64> = (0..g.len()).filter(|&i| !outside[i]).map(|i| med.sos[i]).collect();
        let bg_mean = bg.iter().sum::<f64>() / bg.len() as f64;
        assert!((bg_mean - 1540.0).abs() < 1e-9);
    }

    #[test]
    fn disk_area_converges() {
        let r = 2e-3;
        let g = grid2(100, r / 20.0);
        let spec = ScenarioSpec {
            cyst: Some(Cyst { center: vec![0.0, 2.5e-3], radius: r, wall_thickness: 0.0, wall: Tissue::new(1540.0, 0.0), interior: Tissue::new(1600.0, 0.0), interior_speckle: Speckle::NONE }),
            ..ScenarioSpec::preset(ScenarioKind::Custom)
        };
        let med = build(&spec, &g).unwrap();
        let area = med.sos.iter().filter(|&&c| c == 1600.0).count() as f64 * g.cell_measure();
        let exact = std::f64::consts::PI * r * r;
        assert!((area - exact).abs() <= 0.02 * exact);
    }

    #[test]
    fn overflow_is_rejected() {
        let spec = ScenarioSpec::preset(ScenarioKind::SimpleCyst);
        assert!(matches!(build(&spec, &grid2(32, 1e-4)), Err(PhantomError::Overflow { region: "cyst" })));
        let mut bad = scaled(ScenarioKind::SimpleCyst);
        bad.cyst.as_mut().unwrap().radius = -1.0;
        assert!(build(&bad, &grid2(96, 1.25e-4)).is_err());
    }

    #[test]
    fn sphere_pair_regions() {
        let mut spec = ScenarioSpec::preset(ScenarioKind::SpherePair3d);
        for s in &mut spec.spheres {
            s.center[2] = 3e-3;
        }
        let g = Grid::centered(&[40, 16, 40], 1.5e-4, 0.0).unwrap();
        let med = build(&spec, &g).unwrap();
        let count = |c: f64| med.sos.iter().filter(|&&v| v == c).count();
        assert!(count(1400.0) > count(1600.0) && count(1600.0) > 0);
        assert_eq!(count(1400.0) + count(1600.0) + count(1540.0), g.len());
        let m0 = initial_model(&spec, &g, 1e-3).unwrap();
        assert!(m0.is_background());
    }

    #[test]
    fn cyst_initial_models_are_background() {
        for kind in [ScenarioKind::SimpleCyst, ScenarioKind::SolidCyst] {
            assert!(initial_model(&scaled(kind), &grid2(24, 5e-4), 1e-3).unwrap().is_background());
        }
    }

    #[test]
    fn unblurred_muscle_initial_model_is_the_layered_medium() {
        let spec = scaled(ScenarioKind::MuscleCyst);
        let g = grid2(48, 2.5e-4);
        let m0 = initial_model(&spec, &g, 0.0).unwrap();
        let med = medium_from_contrast(&m0, &spec.reference_background()).unwrap();
        for i in 0..g.len() {
            let z = g.center(i)[1];
            let want = if (1e-3..3.4e-3).contains(&z) { 1590.0 } else { 1540.0 };
            assert!((med.sos[i] - want).abs() < 1e-9, "{} vs {want}", med.sos[i]);
        }
    }

    #[test]
    fn blurred_layer_edge_width() {
        let mut spec = scaled(ScenarioKind::MuscleCyst);
        spec.layer = Some(Layer { top: 4e-3, thickness: 8e-3, tissue: Tissue::new(1590.0, 0.7) });
        let g = Grid::centered(&[4, 400], 5e-5, 0.0).unwrap();
        let sigma = 1e-3;
        let m0 = initial_model(&spec, &g, sigma).unwrap();
        let med = medium_from_contrast(&m0, &spec.reference_background()).unwrap();
        let profile: Vec<(f64, f64)> = (0..400).map(|k| (g.center(k)[1], (med.sos[k] - 1540.0) / 50.0)).collect();
        let crossing = |level: f64| profile.windows(2).find(|w| w[0].1 < level && w[1].1 >= level).map(|w| w[0].0 + (level - w[0].1) / (w[1].1 - w[0].1) * (w[1].0 - w[0].0)).unwrap();
        let width = crossing(0.9) - crossing(0.1);
        assert!((width / (2.563 * sigma) - 1.0).abs() <= 0.2, "{width}");
    }

    #[test]
    fn spec_round_trips_through_toml() {
        for kind in [ScenarioKind::SimpleCyst, ScenarioKind::MuscleCyst, ScenarioKind::SpherePair3d] {
            let spec = ScenarioSpec::preset(kind);
            let text = toml::to_string(&spec).unwrap();
            assert_eq!(toml::from_str::<ScenarioSpec>(&text).unwrap(), spec);
        }
    }
}
