//! Deterministic synthetic data: structured test images, a textured cube
//! seen by RGBD cameras, and a room-scale scene with uneven point density.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::normalize::{OBJECT_RANGE, ROOM_RANGE};
use crate::io::{DepthMap, RgbdFrame};
use crate::render::{Camera, ImageBuffer};

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

enum Shape {
    Disc { r: f64, c: f64, radius: f64 },
    Rect { r: f64, c: f64, half_h: f64, half_w: f64, angle: f64 },
    Ring { r: f64, c: f64, inner: f64, outer: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disc { r, c, radius } => (y - r).powi(2) + (x - c).powi(2) <= radius * radius,
            Shape::Rect { r, c, half_h, half_w, angle } => {
                let (s, co) = angle.sin_cos();
                let (dy, dx) = (y - r, x - c);
                let u = co * dx + s * dy;
                let v = -s * dx + co * dy;
                u.abs() <= half_w && v.abs() <= half_h
            }
            Shape::Ring { r, c, inner, outer } => {
                let d2 = (y - r).powi(2) + (x - c).powi(2);
                d2 <= outer * outer && d2 >= inner * inner
            }
        }
    }
}

/// A piecewise-smooth test image: a two-color gradient background with a
/// few flat or shaded shapes on top. The same seed gives the same image.
pub fn structured_image(seed: u64, width: usize, height: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let scale = w.min(h);
    let bg0 = random_color(&mut rng);
    let bg1 = random_color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());

    let n_shapes = rng.random_range(3..7);
    let mut shapes = Vec::new();
    for _ in 0..n_shapes {
        let r = rng.random_range(0.1..0.9) * h;
        let c = rng.random_range(0.1..0.9) * w;
        let shape = match rng.random_range(0..3) {
            0 => Shape::Disc {
                r,
                c,
                radius: rng.random_range(0.08..0.25) * scale,
            },
            1 => Shape::Rect {
                r,
                c,
                half_h: rng.random_range(0.05..0.25) * scale,
                half_w: rng.random_range(0.05..0.25) * scale,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
            _ => {
                let outer = rng.random_range(0.12..0.25) * scale;
                Shape::Ring {
                    r,
                    c,
                    inner: outer * rng.random_range(0.4..0.7),
                    outer,
                }
            }
        };
        let c0 = random_color(&mut rng);
        // half of the shapes carry a soft radial shading
        let c1 = if rng.random_bool(0.5) {
            mix(c0, random_color(&mut rng), 0.5)
        } else {
            c0
        };
        shapes.push((shape, c0, c1, r, c));
    }

    let mut img = ImageBuffer::new(width, height);
    for row in 0..height {
        for col in 0..width {
            let (y, x) = (row as f64, col as f64);
            let t = ((ga * (x / w - 0.5) + gb * (y / h - 0.5)) + 0.75) / 1.5;
            let mut px = mix(bg0, bg1, t.clamp(0.0, 1.0));
            for (shape, c0, c1, r, c) in &shapes {
                if shape.contains(y, x) {
                    let d = ((y - r).powi(2) + (x - c).powi(2)).sqrt() / (0.3 * scale);
                    px = mix(*c0, *c1, d.min(1.0));
                }
            }
            img.set_pixel(row, col, px);
        }
    }
    img
}

/// `count` structured images with seeds `0..count`.
pub fn image_suite(count: usize, width: usize, height: usize) -> Vec<ImageBuffer> {
    (0..count as u64)
        .map(|s| structured_image(s, width, height))
        .collect()
}

/// Axis-aligned box with one color per face and a checker texture.
#[derive(Clone, Debug)]
pub struct TexturedBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    /// −x, +x, −y, +y, −z, +z
    pub face_colors: [[f64; 3]; 6],
    /// Checker cells per face edge; 0 disables the texture.
    pub checker: usize,
    /// Whether rays hit the inside of the box (a room) or the outside.
    pub inward: bool,
}

impl TexturedBox {
    /// Ray parameter, face index and in-face coordinates of the first hit.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize, f64, f64)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_axis = 0;
        let mut far_axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[a] - o[a]) / d[a];
            let t1 = (self.max[a] - o[a]) / d[a];
            let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            if lo > t_near {
                t_near = lo;
                near_axis = a;
            }
            if hi < t_far {
                t_far = hi;
                far_axis = a;
            }
        }
        if t_near > t_far {
            return None;
        }
        let (t, axis) = if self.inward {
            (t_far, far_axis)
        } else {
            (t_near, near_axis)
        };
        if t <= 1e-9 {
            return None;
        }
        let p = o + d * t;
        let positive = d[axis] > 0.0;
        let side = if self.inward { positive } else { !positive };
        let face = 2 * axis + side as usize;
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        let u = (p[i] - self.min[i]) / (self.max[i] - self.min[i]);
        let v = (p[j] - self.min[j]) / (self.max[j] - self.min[j]);
        Some((t, face, u, v))
    }

    fn shade(&self, face: usize, u: f64, v: f64) -> [f64; 3] {
        let base = self.face_colors[face];
        if self.checker == 0 {
            return base;
        }
        let n = self.checker as f64;
        let cell = ((u * n).floor() as i64 + (v * n).floor() as i64).rem_euclid(2);
        let k = if cell == 0 { 1.0 } else { 0.6 };
        [base[0] * k, base[1] * k, base[2] * k]
    }
}

/// Ray-cast scene made of textured boxes.
#[derive(Clone, Debug)]
pub struct BoxScene {
    pub boxes: Vec<TexturedBox>,
    pub background: [f64; 3],
}

impl BoxScene {
    /// Unit-ish cube (edge 1.2) centered at the origin with six face colors.
    pub fn cube() -> Self {
        Self {
            boxes: vec![TexturedBox {
                min: Vector3::repeat(-0.45),
                max: Vector3::repeat(0.45),
                face_colors: [
                    [0.9, 0.15, 0.1],
                    [0.1, 0.75, 0.2],
                    [0.15, 0.3, 0.9],
                    [0.95, 0.85, 0.15],
                    [0.85, 0.3, 0.85],
                    [0.1, 0.8, 0.85],
                ],
                checker: 0,
                inward: false,
            }],
            background: [1.0, 1.0, 1.0],
        }
    }

    /// Room with walls at ±4 and a small bright box in one corner.
    pub fn room() -> Self {
        Self {
            boxes: vec![
                TexturedBox {
                    min: Vector3::repeat(-4.0),
                    max: Vector3::repeat(4.0),
                    face_colors: [
                        [0.8, 0.75, 0.6],
                        [0.55, 0.65, 0.8],
                        [0.45, 0.35, 0.25],
                        [0.9, 0.9, 0.85],
                        [0.7, 0.5, 0.5],
                        [0.5, 0.7, 0.55],
                    ],
                    checker: 4,
                    inward: true,
                },
                TexturedBox {
                    min: Vector3::new(1.5, -4.0, 1.5),
                    max: Vector3::new(3.0, -2.5, 3.0),
                    face_colors: [
                        [0.95, 0.2, 0.1],
                        [0.1, 0.2, 0.95],
                        [0.95, 0.9, 0.1],
                        [0.1, 0.9, 0.2],
                        [0.9, 0.1, 0.9],
                        [0.1, 0.9, 0.9],
                    ],
                    checker: 0,
                    inward: false,
                },
            ],
            background: [0.0, 0.0, 0.0],
        }
    }

    /// Color image and z-depth seen through `cam`; misses get the background
    /// and zero depth.
    pub fn render(&self, cam: &Camera) -> (ImageBuffer, DepthMap) {
        let (w, h) = (cam.width, cam.height);
        let mut img = ImageBuffer::filled(w, h, self.background);
        let mut depth = vec![0.0; w * h];
        let origin = cam.camera_to_world(&Vector3::zeros());
        let rt = cam.rotation_matrix().transpose();
        for v in 0..h {
            for u in 0..w {
                // camera-space direction with unit z, so the ray parameter is the depth
                let d_cam = Vector3::new((u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy, 1.0);
                let d = rt * d_cam;
                let mut best: Option<(f64, [f64; 3])> = None;
                for b in &self.boxes {
                    if let Some((t, face, fu, fv)) = b.intersect(&origin, &d) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, b.shade(face, fu, fv)));
                        }
                    }
                }
                if let Some((t, c)) = best {
                    img.set_pixel(v, u, c);
                    depth[v * w + u] = t;
                }
            }
        }
        (
            img,
            DepthMap {
                width: w,
                height: h,
                data: depth,
            },
        )
    }

    pub fn frame(&self, cam: &Camera) -> RgbdFrame {
        let (img, depth) = self.render(cam);
        RgbdFrame {
            color: img,
            depth,
            camera: cam.clone(),
        }
    }
}

/// Cameras spread around the origin at distance `radius`, looking at it.
/// View `i` of `n` sits at azimuth 2π·i·φ (φ the golden ratio conjugate) and
/// an elevation sweeping between ±`max_elevation` radians.
pub fn orbit_cameras(
    n: usize,
    radius: f64,
    max_elevation: f64,
    size: usize,
    focal: f64,
) -> Vec<Camera> {
    let golden = 0.618_033_988_749_894_9;
    (0..n)
        .map(|i| {
            let az = std::f64::consts::TAU * (i as f64 * golden).fract();
            let el = if n > 1 {
                max_elevation * (2.0 * i as f64 / (n - 1) as f64 - 1.0)
            } else {
                0.0
            };
            orbit_camera(az, el, radius, size, focal)
        })
        .collect()
}

/// Camera at the given azimuth/elevation looking at the origin.
pub fn orbit_camera(azimuth: f64, elevation: f64, radius: f64, size: usize, focal: f64) -> Camera {
    let eye = Vector3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.sin(),
        radius * elevation.cos() * azimuth.sin(),
    );
    let c = (size as f64 - 1.0) / 2.0;
    Camera::look_at(
        eye,
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        (focal, focal, c, c),
        (size, size),
    )
    .expect("orbit cameras never look straight up")
}

/// Cameras standing at `eye` and turning around the vertical axis.
pub fn panning_cameras(eye: Vector3<f64>, n: usize, pitch: f64, size: usize, focal: f64) -> Vec<Camera> {
    let c = (size as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let yaw = std::f64::consts::TAU * i as f64 / n as f64;
            let dir = Vector3::new(yaw.cos() * pitch.cos(), pitch.sin(), yaw.sin() * pitch.cos());
            Camera::look_at(eye, eye + dir, Vector3::new(0.0, 1.0, 0.0), (focal, focal, c, c), (size, size))
                .expect("pitch is never vertical")
        })
        .collect()
}

/// A scene with training and held-out cameras and the spatial range to
/// normalize it with.
#[derive(Clone, Debug)]
pub struct SceneSetup {
    pub scene: BoxScene,
    pub train: Vec<Camera>,
    pub eval: Vec<Camera>,
    pub range: (f64, f64),
}

/// The cube seen from `views` cameras on a sphere of radius 3, plus one
/// held-out view between them.
pub fn cube_setup(views: usize, size: usize) -> SceneSetup {
    let focal = 90.0 / 64.0 * size as f64;
    SceneSetup {
        scene: BoxScene::cube(),
        train: orbit_cameras(views, 3.0, 0.7, size, focal),
        eval: vec![orbit_camera(0.9, 0.35, 3.0, size, focal)],
        range: OBJECT_RANGE,
    }
}

/// The room seen by two panning cameras with `frames_per_pan` views each;
/// four held-out views from a third position.
pub fn room_setup(frames_per_pan: usize, size: usize) -> SceneSetup {
    let focal = 50.0 / 64.0 * size as f64;
    let mut train = panning_cameras(Vector3::new(0.0, 0.5, 0.0), frames_per_pan, -0.3, size, focal);
    train.extend(panning_cameras(Vector3::new(-1.0, -0.5, -1.0), frames_per_pan, 0.2, size, focal));
    SceneSetup {
        scene: BoxScene::room(),
        train,
        eval: panning_cameras(Vector3::new(0.5, 0.0, 0.5), 4, -0.1, size, focal),
        range: ROOM_RANGE,
    }
}
