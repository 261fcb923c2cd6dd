use super::ImageDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Supersampling grid per pixel axis used for antialiasing.
const SUBSAMPLES: usize = 4;

/// Parameters of one procedural image: a filled ellipse over a linear
/// background gradient. Coordinates are in units of the image side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseParams {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub background: f64,
    pub gradient_x: f64,
    pub gradient_y: f64,
    pub intensity: f64,
}

impl EllipseParams {
    /// Roughly centered ("registered") ellipse, mimicking aligned faces.
    pub fn sample(rng: &mut Rng) -> Self {
        EllipseParams {
            center_x: rng.uniform_range(0.38, 0.62),
            center_y: rng.uniform_range(0.38, 0.62),
            semi_major: rng.uniform_range(0.18, 0.38),
            semi_minor: rng.uniform_range(0.18, 0.38),
            angle: rng.uniform_range(0.0, std::f64::consts::PI),
            background: rng.uniform_range(-0.8, -0.2),
            gradient_x: rng.uniform_range(-0.3, 0.3),
            gradient_y: rng.uniform_range(-0.3, 0.3),
            intensity: rng.uniform_range(0.3, 0.9),
        }
    }
}

/// Renders one `side × side` grayscale image, row-major, values in `[-1, 1]`.
pub fn render_ellipse(p: &EllipseParams, side: usize) -> Vec<f64> {
    let (sin, cos) = p.angle.sin_cos();
    let inv = 1.0 / side as f64;
    let sub = 1.0 / SUBSAMPLES as f64;
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let mut inside = 0usize;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let x = (col as f64 + (sx as f64 + 0.5) * sub) * inv - p.center_x;
                    let y = (row as f64 + (sy as f64 + 0.5) * sub) * inv - p.center_y;
                    let u = (cos * x + sin * y) / p.semi_major;
                    let v = (-sin * x + cos * y) / p.semi_minor;
                    if u * u + v * v <= 1.0 {
                        inside += 1;
                    }
                }
            }
            let coverage = inside as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
            let u = (col as f64 + 0.5) * inv - 0.5;
            let v = (row as f64 + 0.5) * inv - 0.5;
            let bg = p.background + p.gradient_x * u + p.gradient_y * v;
            let value = (1.0 - coverage) * bg + coverage * p.intensity;
            out.push(value.clamp(-1.0, 1.0));
        }
    }
    out
}

/// `n` procedural ellipse images of size `side × side`; image `i` is rendered
/// from parameters drawn on stream `i` of `seed`.
pub fn gen_synthetic(n: usize, side: usize, seed: u64) -> Result<ImageDataset> {
    if side != 16 && side != 32 {
        return Err(Error::invalid(format!("side must be 16 or 32, got {side}")));
    }
    if n == 0 {
        return Err(Error::Empty("gen_synthetic"));
    }
    let mut data = Vec::with_capacity(n * side * side);
    for i in 0..n {
        let mut rng = Rng::new(seed, i as u64);
        data.extend(render_ellipse(&EllipseParams::sample(&mut rng), side));
    }
    ImageDataset::new(
        Tensor::new([n, 1, side, side], data)?,
        format!("synthetic(n={n},side={side},seed={seed})"),
    )
}
