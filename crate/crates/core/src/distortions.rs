//! Image distortions: smooth random warps, Gaussian noise patches and
//! additive Gaussian noise.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Warp displacement levels in pixels.
pub const WARP_GRID: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
/// Patch sizes as fractions of the image side.
pub const PATCH_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const ADDITIVE_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];
pub const DEFAULT_SMOOTHING_RADIUS: f64 = 2.0;
pub const DEFAULT_PATCH_SIGMA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistortionKind {
    Warp,
    PatchNoise,
    AdditiveNoise,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 3] = [
        DistortionKind::Warp,
        DistortionKind::PatchNoise,
        DistortionKind::AdditiveNoise,
    ];
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistortionKind::Warp => "warp",
            DistortionKind::PatchNoise => "patch_noise",
            DistortionKind::AdditiveNoise => "additive_noise",
        })
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warp" => Ok(DistortionKind::Warp),
            "patch_noise" => Ok(DistortionKind::PatchNoise),
            "additive_noise" => Ok(DistortionKind::AdditiveNoise),
            other => Err(Error::invalid(format!("unknown distortion '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Displacement std (warp), noise std (patch and additive noise).
    pub sigma_d: f64,
    pub smoothing_radius: f64,
    pub patch_size: usize,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn warp(sigma_d: f64, seed: u64) -> Self {
        DistortionSpec {
            kind: DistortionKind::Warp,
            sigma_d,
            smoothing_radius: DEFAULT_SMOOTHING_RADIUS,
            patch_size: 0,
            seed,
        }
    }

    pub fn patch_noise(patch_size: usize, seed: u64) -> Self {
        DistortionSpec {
            kind: DistortionKind::PatchNoise,
            sigma_d: DEFAULT_PATCH_SIGMA,
            smoothing_radius: 0.0,
            patch_size,
            seed,
        }
    }

    pub fn additive(sigma_d: f64, seed: u64) -> Self {
        DistortionSpec {
            kind: DistortionKind::AdditiveNoise,
            sigma_d,
            smoothing_radius: 0.0,
            patch_size: 0,
            seed,
        }
    }

    pub fn validate(&self, image_shape: &[usize]) -> Result<()> {
        if !(self.sigma_d >= 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::invalid("sigma_d must be finite and >= 0"));
        }
        if !(self.smoothing_radius >= 0.0 && self.smoothing_radius.is_finite()) {
            return Err(Error::invalid("smoothing_radius must be finite and >= 0"));
        }
        let side = image_shape.last().copied().unwrap_or(0);
        if self.kind == DistortionKind::PatchNoise && self.patch_size > side {
            return Err(Error::invalid(format!(
                "patch_size {} exceeds image side {side}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Distorts `image` with stream `stream_id` of `self.seed`.
    pub fn apply(&self, image: &Tensor, stream_id: u64) -> Result<Tensor> {
        self.validate(image.shape())?;
        let mut rng = Rng::new(self.seed, stream_id);
        match self.kind {
            DistortionKind::Warp => warp(image, self.sigma_d, self.smoothing_radius, &mut rng),
            DistortionKind::PatchNoise => {
                patch_noise(image, self.patch_size, self.sigma_d, &mut rng)
            }
            DistortionKind::AdditiveNoise => additive_noise(image, self.sigma_d, &mut rng),
        }
    }
}

/// Five-point grid for `kind` at the given image side.
pub fn grid(kind: DistortionKind, side: usize, seed: u64) -> Vec<DistortionSpec> {
    match kind {
        DistortionKind::Warp => WARP_GRID
            .iter()
            .map(|&s| DistortionSpec::warp(s, seed))
            .collect(),
        DistortionKind::PatchNoise => PATCH_FRACTIONS
            .iter()
            .map(|&f| DistortionSpec::patch_noise((f * side as f64).round() as usize, seed))
            .collect(),
        DistortionKind::AdditiveNoise => ADDITIVE_GRID
            .iter()
            .map(|&s| DistortionSpec::additive(s, seed))
            .collect(),
    }
}

/// The middle grid point, used as the "small distortion" setting.
pub fn small_distortion(kind: DistortionKind, side: usize, seed: u64) -> DistortionSpec {
    grid(kind, side, seed)[2]
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        ref s => Err(Error::shape(
            "distortion",
            format!("{s:?}, expected (c, h, w)"),
        )),
    }
}

fn gaussian_kernel(std: f64) -> Vec<f64> {
    let r = (3.0 * std).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of an `h × w` field with replicated edges.
fn smooth(field: &[f64], h: usize, w: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return field.to_vec();
    }
    let k = gaussian_kernel(std);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[y * w + clampi(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clampi(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Resamples `image` at `(x + dx, y + dy)` for every pixel with bilinear
/// interpolation; coordinates are clamped to the image. `dx` and `dy` are
/// row-major `h × w` fields shared by all channels.
pub fn warp_with_field(image: &Tensor, dx: &[f64], dy: &[f64]) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if dx.len() != h * w || dy.len() != h * w {
        return Err(Error::shape(
            "warp",
            format!("field of {} / {} entries for {h}x{w}", dx.len(), dy.len()),
        ));
    }
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = (x as f64 + dx[i]).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + dy[i]).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + i] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Random displacement field: i.i.d. `N(0, σ_d²)` per component, blurred
/// by a normalized Gaussian of std `smoothing_radius`.
pub fn displacement_field(
    h: usize,
    w: usize,
    sigma_d: f64,
    smoothing_radius: f64,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<f64>) {
    let raw_x: Vec<f64> = rng.normal_vec(h * w).iter().map(|v| v * sigma_d).collect();
    let raw_y: Vec<f64> = rng.normal_vec(h * w).iter().map(|v| v * sigma_d).collect();
    (
        smooth(&raw_x, h, w, smoothing_radius),
        smooth(&raw_y, h, w, smoothing_radius),
    )
}

/// Smooth random warp. `sigma_d = 0` returns the input unchanged.
pub fn warp(image: &Tensor, sigma_d: f64, smoothing_radius: f64, rng: &mut Rng) -> Result<Tensor> {
    let (_, h, w) = dims(image)?;
    if sigma_d == 0.0 {
        return Ok(image.clone());
    }
    let (dx, dy) = displacement_field(h, w, sigma_d, smoothing_radius, rng);
    warp_with_field(image, &dx, &dy)
}

/// Replaces one `patch_size × patch_size` square (all channels) at a random
/// position with `N(0, σ_d²)` noise clipped to `[-1, 1]`.
pub fn patch_noise(
    image: &Tensor,
    patch_size: usize,
    sigma_d: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if patch_size == 0 {
        return Ok(image.clone());
    }
    if patch_size > h || patch_size > w {
        return Err(Error::invalid(format!(
            "patch_size {patch_size} exceeds {h}x{w}"
        )));
    }
    let top = rng.below((h - patch_size + 1) as u64) as usize;
    let left = rng.below((w - patch_size + 1) as u64) as usize;
    let mut out = image.clone();
    let data = out.data_mut();
    for ch in 0..c {
        for y in top..top + patch_size {
            for x in left..left + patch_size {
                data[ch * h * w + y * w + x] = (sigma_d * rng.normal()).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// `clip(image + W, -1, 1)` with `W` i.i.d. `N(0, σ_d²)`.
pub fn additive_noise(image: &Tensor, sigma_d: f64, rng: &mut Rng) -> Result<Tensor> {
    if sigma_d == 0.0 {
        return Ok(image.clone());
    }
    let noise = rng.normal_vec(image.len());
    let data = image
        .data()
        .iter()
        .zip(&noise)
        .map(|(x, n)| (x + sigma_d * n).clamp(-1.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}
