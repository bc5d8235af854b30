//! Reconstruction from a fitted model: per-pixel mixture colors for images,
//! projected opaque splats for volumes, and PSNR.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::NormalizationSpec;
use crate::linalg::{cholesky_jittered, log_det};
use crate::model::{ComponentState, MixtureState};
use crate::parallel::for_each_row_block;
use crate::special::logsumexp;

/// RGB image with channel values in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: color.repeat(width * height),
        }
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp(&mut self) {
        for v in self.data.iter_mut() {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

/// Pinhole camera. The extrinsics map world to camera coordinates
/// (x right, y down, z forward); pixel `u` is the column and `v` the row,
/// with pixel centers at integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        (width, height): (usize, usize),
    ) -> Self {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rotation[(i, j)];
            }
        }
        Self {
            rotation: r,
            translation: [translation[0], translation[1], translation[2]],
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        intrinsics: (f64, f64, f64, f64),
        size: (usize, usize),
    ) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("eye and target coincide".into()))?;
        let x = (-up)
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("up vector is parallel to the view direction".into()))?;
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self::new(r, -(r * eye), intrinsics, size))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "camera rotation is not a proper rotation matrix".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - self.translation_vector())
    }

    /// Pixel (u, v) of a camera-space point.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    /// Jacobian of [`Camera::project`] at a camera-space point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let (x, y, z) = (p[0], p[1], p[2]);
        let z2 = z * z;
        Matrix2x3::new(
            self.fx / z,
            0.0,
            -self.fx * x / z2,
            0.0,
            self.fy / z,
            -self.fy * y / z2,
        )
    }
}

/// A component projected onto the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// (u, v) in pixels.
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// RGB in [0, 1].
    pub color: [f64; 3],
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub near: f64,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_cutoff: f64,
    /// Splats are ignored beyond this Mahalanobis radius.
    pub truncation: f64,
    /// Leave out components that never absorbed data (see
    /// [`crate::stream::find_unused`]); they sit wherever initialization put them.
    pub skip_unused: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            near: 0.01,
            transmittance_cutoff: 1e-3,
            truncation: 4.5,
            skip_unused: true,
        }
    }
}

fn denormalized_color(comp: &ComponentState, norm: &NormalizationSpec) -> [f64; 3] {
    let c = norm.denormalize_color(comp.color.mean.as_slice());
    [
        (c[0] / 255.0).clamp(0.0, 1.0),
        (c[1] / 255.0).clamp(0.0, 1.0),
        (c[2] / 255.0).clamp(0.0, 1.0),
    ]
}

/// Projects a world-space Gaussian; `None` if its mean is not in front of
/// the near plane.
pub fn project_world_gaussian(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    cam: &Camera,
    near: f64,
) -> Option<(Vector2<f64>, Matrix2<f64>, f64)> {
    let p = cam.world_to_camera(mean);
    if p[2] <= near {
        return None;
    }
    let r = cam.rotation_matrix();
    let j = cam.projection_jacobian(&p);
    let t = j * r;
    let mut cov2d = t * cov * t.transpose();
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Some((cam.project(&p), cov2d, p[2]))
}

/// Projects component `index` of a 3D model through `cam`.
pub fn project_gaussian(
    comp: &ComponentState,
    index: usize,
    cam: &Camera,
    norm: &NormalizationSpec,
    near: f64,
) -> Result<Option<Splat2D>> {
    if comp.spatial.dim() != 3 || norm.spatial_dim() != 3 {
        return Err(Error::InvalidArgument("projection needs a 3D model".into()));
    }
    let cov_n = comp
        .spatial
        .expected_covariance()
        .map_err(|e| e.in_component(index))?;
    let m_n = comp.spatial.mean();
    let mut mean = Vector3::zeros();
    norm.denormalize_spatial(m_n.as_slice(), mean.as_mut_slice());
    let s = Matrix3::from_diagonal(&Vector3::from_column_slice(&norm.spatial_std));
    let cov = s * Matrix3::from_fn(|i, j| cov_n[(i, j)]) * s;
    Ok(project_world_gaussian(&mean, &cov, cam, near).map(|(mean2d, cov2d, depth)| Splat2D {
        mean2d,
        cov2d,
        depth,
        color: denormalized_color(comp, norm),
        component: index,
    }))
}

/// Projects every component and sorts front to back (ties by index).
pub fn project_all(
    state: &MixtureState,
    cam: &Camera,
    norm: &NormalizationSpec,
    opts: &RenderOptions,
) -> Result<Vec<Splat2D>> {
    let tau = state.config().unused_tolerance;
    let prior = &state.prior_weights().alpha;
    let mut splats = Vec::new();
    for (k, comp) in state.components.iter().enumerate() {
        if opts.skip_unused && state.weights.alpha[k] - prior[k] <= tau {
            continue;
        }
        if let Some(s) = project_gaussian(comp, k, cam, norm, opts.near)? {
            splats.push(s);
        }
    }
    sort_splats(&mut splats);
    Ok(splats)
}

pub fn sort_splats(splats: &mut [Splat2D]) {
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.component.cmp(&b.component)));
}

struct PreparedSplat {
    u: f64,
    v: f64,
    /// Inverse covariance entries (a b; b c).
    a: f64,
    b: f64,
    c: f64,
    ru: f64,
    rv: f64,
    color: [f64; 3],
}

fn prepare(splats: &[Splat2D], truncation: f64) -> Vec<PreparedSplat> {
    splats
        .iter()
        .filter_map(|s| {
            let m = s.cov2d;
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            if !(det > 0.0) || !(m[(0, 0)] > 0.0) || !det.is_finite() {
                return None;
            }
            Some(PreparedSplat {
                u: s.mean2d[0],
                v: s.mean2d[1],
                a: m[(1, 1)] / det,
                b: -m[(0, 1)] / det,
                c: m[(0, 0)] / det,
                ru: truncation * m[(0, 0)].sqrt(),
                rv: truncation * m[(1, 1)].sqrt(),
                color: s.color,
            })
        })
        .collect()
}

/// Front-to-back compositing of depth-sorted splats with α = min(1, g).
pub fn composite(splats: &[Splat2D], width: usize, height: usize, opts: &RenderOptions) -> ImageBuffer {
    let prepared = prepare(splats, opts.truncation);
    let t2 = opts.truncation * opts.truncation;
    let mut img = ImageBuffer::new(width, height);
    for_each_row_block(&mut img.data, width * 3, 1, |row, out| {
        let v = row as f64;
        let active: Vec<&PreparedSplat> = prepared.iter().filter(|p| (v - p.v).abs() <= p.rv).collect();
        for col in 0..width {
            let u = col as f64;
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for p in &active {
                let du = u - p.u;
                if du.abs() > p.ru {
                    continue;
                }
                let dv = v - p.v;
                let q = p.a * du * du + 2.0 * p.b * du * dv + p.c * dv * dv;
                if q > t2 {
                    continue;
                }
                let alpha = (-0.5 * q).exp().min(1.0);
                for ch in 0..3 {
                    rgb[ch] += t * alpha * p.color[ch];
                }
                t *= 1.0 - alpha;
                if t < opts.transmittance_cutoff {
                    break;
                }
            }
            for ch in 0..3 {
                out[col * 3 + ch] = (rgb[ch] + t * opts.background[ch]).clamp(0.0, 1.0);
            }
        }
    });
    img
}

/// Renders a 3D model through `cam`.
pub fn render_3d(
    state: &MixtureState,
    cam: &Camera,
    norm: &NormalizationSpec,
    opts: &RenderOptions,
) -> Result<ImageBuffer> {
    if state.spatial_dim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "3D rendering needs a 3D model, got D = {}",
            state.spatial_dim()
        )));
    }
    cam.validate()?;
    let splats = project_all(state, cam, norm, opts)?;
    Ok(composite(&splats, cam.width, cam.height, opts))
}

struct Density2D {
    log_weight: f64,
    mean: [f64; 2],
    /// Inverse covariance (a b; b c).
    prec: [f64; 3],
    color: [f64; 3],
}

/// Renders a 2D model: each pixel gets the expected color under the
/// posterior-mean mixture, Σ_k p(k | s)·m_{c,k}.
pub fn render_2d(
    state: &MixtureState,
    width: usize,
    height: usize,
    norm: &NormalizationSpec,
) -> Result<ImageBuffer> {
    if state.spatial_dim() != 2 || norm.spatial_dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "image rendering needs a 2D model, got D = {}",
            state.spatial_dim()
        )));
    }
    let weights = state.weights.expected_weights();
    let mut comps = Vec::with_capacity(state.num_components());
    for (k, comp) in state.components.iter().enumerate() {
        let cov = comp
            .spatial
            .expected_covariance()
            .map_err(|e| e.in_component(k))?;
        let ch = cholesky_jittered(&cov).map_err(|e| e.in_component(k))?;
        let inv = ch.inverse();
        let m = comp.spatial.mean();
        let c = norm.denormalize_color(comp.color.mean.as_slice());
        comps.push(Density2D {
            log_weight: weights[k].ln() - 0.5 * log_det(&ch),
            mean: [m[0], m[1]],
            prec: [inv[(0, 0)], 0.5 * (inv[(0, 1)] + inv[(1, 0)]), inv[(1, 1)]],
            color: [c[0] / 255.0, c[1] / 255.0, c[2] / 255.0],
        });
    }
    let mut img = ImageBuffer::new(width, height);
    for_each_row_block(&mut img.data, width * 3, 1, |row, out| {
        let mut logits = vec![0.0; comps.len()];
        let mut s = [0.0; 2];
        for col in 0..width {
            norm.normalize_spatial(&[row as f64, col as f64], &mut s);
            for (l, d) in logits.iter_mut().zip(&comps) {
                let dx = s[0] - d.mean[0];
                let dy = s[1] - d.mean[1];
                let q = d.prec[0] * dx * dx + 2.0 * d.prec[1] * dx * dy + d.prec[2] * dy * dy;
                *l = d.log_weight - 0.5 * q;
            }
            let lz = logsumexp(&logits);
            let mut rgb = [0.0; 3];
            for (l, d) in logits.iter().zip(&comps) {
                let p = (l - lz).exp();
                for ch in 0..3 {
                    rgb[ch] += p * d.color[ch];
                }
            }
            for ch in 0..3 {
                out[col * 3 + ch] = rgb[ch].clamp(0.0, 1.0);
            }
        }
    });
    Ok(img)
}

/// Peak signal-to-noise ratio in dB for signals in [0, 1]; `+∞` when equal.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() {
        return Err(Error::InvalidArgument("empty images".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// PSNR with four decimals, or `inf`.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
