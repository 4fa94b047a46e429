use std::io::{Read, Write};
use std::process::{Command, Stdio};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ControlDescriptor, ControlError, ControlKind, ControlWarning, ParamDecl, ParamDomain, Params, PostControl, PostOutput};
use crate::image::RgbBuffer;

/// Solid rectangle painted over the image.
///
/// `x, y, w, h` are fractions of the image width/height. A pixel is covered
/// when its centre lies in `[x, x+w) × [y, y+h)`. A rectangle covering no
/// pixel centre leaves the image unchanged and emits a warning.
pub struct Occlusion {
    descriptor: ControlDescriptor,
}

impl Occlusion {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "occlusion",
                ControlKind::Post,
                vec![
                    ParamDecl::continuous("x", -1.0, 1.0, 0.25),
                    ParamDecl::continuous("y", -1.0, 1.0, 0.25),
                    ParamDecl::continuous("w", 0.0, 1.0, 0.5),
                    ParamDecl::continuous("h", 0.0, 1.0, 0.5),
                    ParamDecl::continuous("r", 0.0, 1.0, 0.0),
                    ParamDecl::continuous("g", 0.0, 1.0, 0.0),
                    ParamDecl::continuous("b", 0.0, 1.0, 0.0),
                ],
            ),
        }
    }
}

/// Pixel indices whose centres fall in `[start, start + len)` (fractions of `n`).
fn covered(start: f64, len: f64, n: u32) -> std::ops::Range<u32> {
    let n_f = n as f64;
    // centre (i + 0.5) / n >= start  <=>  i >= start * n - 0.5
    let lo = (start * n_f - 0.5).ceil().max(0.0);
    // centre < start + len  <=>  i < (start + len) * n - 0.5
    let hi = ((start + len) * n_f - 0.5).ceil().clamp(0.0, n_f);
    if lo >= hi {
        0..0
    } else {
        lo as u32..hi as u32
    }
}

impl PostControl for Occlusion {
    fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }

    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, _seed: u64) -> Result<PostOutput, ControlError> {
        let xs = covered(params.number("x"), params.number("w"), image.width());
        let ys = covered(params.number("y"), params.number("h"), image.height());
        if xs.is_empty() || ys.is_empty() {
            return Ok(PostOutput {
                image: image.clone(),
                warnings: vec![ControlWarning {
                    control: params.control().to_string(),
                    message: "occluder lies entirely outside the frame; image unchanged".into(),
                }],
            });
        }
        let color = [params.number("r") as f32, params.number("g") as f32, params.number("b") as f32];
        let mut out = image.clone();
        for y in ys {
            for x in xs.clone() {
                out.set(x, y, color);
            }
        }
        Ok(PostOutput::clean(out))
    }
}

/// Additive per-channel Gaussian noise, clamped to `[0, 1]`.
pub struct GaussianNoise {
    descriptor: ControlDescriptor,
}

impl GaussianNoise {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "gaussian_noise",
                ControlKind::Post,
                vec![ParamDecl::continuous("sigma", 0.0, 1.0, 0.05)],
            ),
        }
    }
}

impl PostControl for GaussianNoise {
    fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }

    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, seed: u64) -> Result<PostOutput, ControlError> {
        let sigma = params.number("sigma");
        if sigma == 0.0 {
            return Ok(PostOutput::clean(image.clone()));
        }
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = image.clone();
        for px in out.pixels_mut() {
            for c in px.iter_mut() {
                *c = (*c as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        Ok(PostOutput::clean(out))
    }
}

/// Multiplicative gain, clamped to `[0, 1]`.
pub struct Brightness {
    descriptor: ControlDescriptor,
}

impl Brightness {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "brightness",
                ControlKind::Post,
                vec![ParamDecl::continuous("gain", 0.0, 4.0, 1.0)],
            ),
        }
    }
}

impl PostControl for Brightness {
    fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }

    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, _seed: u64) -> Result<PostOutput, ControlError> {
        let gain = params.number("gain") as f32;
        let mut out = image.clone();
        for px in out.pixels_mut() {
            *px = px.map(|c| (c * gain).clamp(0.0, 1.0));
        }
        Ok(PostOutput::clean(out))
    }
}

/// Separable Gaussian blur with replicated borders; kernel radius `ceil(3σ)`.
pub struct Blur {
    descriptor: ControlDescriptor,
}

impl Blur {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "blur",
                ControlKind::Post,
                vec![ParamDecl::continuous("sigma", 0.0, 8.0, 1.0)],
            ),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn convolve_1d(src: &RgbBuffer, kernel: &[f64], horizontal: bool) -> RgbBuffer {
    let (w, h) = (src.width() as i64, src.height() as i64);
    let radius = (kernel.len() / 2) as i64;
    RgbBuffer::from_fn(src.width(), src.height(), |x, y| {
        let mut acc = [0.0f64; 3];
        for (k, weight) in kernel.iter().enumerate() {
            let off = k as i64 - radius;
            let (sx, sy) = if horizontal {
                ((x as i64 + off).clamp(0, w - 1), y as i64)
            } else {
                (x as i64, (y as i64 + off).clamp(0, h - 1))
            };
            let p = src.get(sx as u32, sy as u32);
            for c in 0..3 {
                acc[c] += weight * p[c] as f64;
            }
        }
        acc.map(|v| v.clamp(0.0, 1.0) as f32)
    })
}

impl PostControl for Blur {
    fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }

    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, _seed: u64) -> Result<PostOutput, ControlError> {
        let sigma = params.number("sigma");
        if sigma == 0.0 {
            return Ok(PostOutput::clean(image.clone()));
        }
        let kernel = gaussian_kernel(sigma);
        let pass = convolve_1d(image, &kernel, true);
        Ok(PostOutput::clean(convolve_1d(&pass, &kernel, false)))
    }
}

/// Runs an external executable as an image filter.
///
/// The image is written to the child's stdin as binary PPM (P6) and a PPM of
/// the same size is read back from stdout. Parameter values are passed as
/// `SCENEDIAG_PARAM_<NAME>` environment variables (numbers, or the chosen
/// discrete value), the seed as `SCENEDIAG_SEED`.
pub struct ExternalFilter {
    descriptor: ControlDescriptor,
    program: String,
    args: Vec<String>,
}

impl ExternalFilter {
    pub fn new(name: &str, program: &str, args: Vec<String>, params: Vec<ParamDecl>) -> Self {
        Self {
            descriptor: ControlDescriptor::new(name, ControlKind::Post, params),
            program: program.to_string(),
            args,
        }
    }
}

impl PostControl for ExternalFilter {
    fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }

    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, seed: u64) -> Result<PostOutput, ControlError> {
        let fail = |reason: String| ControlError::External { control: self.descriptor.name.clone(), reason };
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        cmd.env("SCENEDIAG_SEED", seed.to_string());
        for p in &self.descriptor.params {
            let value = match &p.domain {
                ParamDomain::Continuous { .. } => params.number(&p.name).to_string(),
                ParamDomain::Discrete { .. } => params.choice(&p.name).to_string(),
            };
            cmd.env(format!("SCENEDIAG_PARAM_{}", p.name.to_uppercase()), value);
        }
        let mut child = cmd.spawn().map_err(|e| fail(format!("cannot start '{}': {e}", self.program)))?;
        let input = image.to_ppm();
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // Feed stdin from a separate thread so a filter that streams its
        // output before consuming all input cannot deadlock us.
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let mut stdout = Vec::new();
        child
            .stdout
            .take()
            .expect("stdout is piped")
            .read_to_end(&mut stdout)
            .map_err(|e| fail(format!("reading output: {e}")))?;
        let mut stderr = String::new();
        if let Some(mut s) = child.stderr.take() {
            let _ = s.read_to_string(&mut stderr);
        }
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        let _ = writer.join();
        if !status.success() {
            return Err(fail(format!("exited with {status}: {}", stderr.trim())));
        }
        let out = RgbBuffer::decode(&stdout).map_err(|e| fail(format!("bad output image: {e}")))?;
        if (out.width(), out.height()) != (image.width(), image.height()) {
            return Err(fail(format!(
                "output is {}x{}, expected {}x{}",
                out.width(),
                out.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(PostOutput::clean(out))
    }
}
