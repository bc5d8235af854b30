//! Loading run inputs: images, point clouds and frame manifests.
//!
//! A manifest is a text file with one entry per line, paths relative to the
//! manifest:
//!
//! ```text
//! # training frames, streamed in order
//! frame color/000.ppm depth/000.pgm cams/000.json
//! # held-out views for PSNR
//! eval color/eval0.ppm cams/eval0.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use vbgs_core::io::{load_pointcloud, read_depth, read_image, rgbd_to_pointcloud, RgbdFrame};
use vbgs_core::render::{Camera, ImageBuffer};
use vbgs_core::DataBatch;

use crate::error::{CliError, WithPath};

pub struct EvalView {
    pub camera: Camera,
    pub image: ImageBuffer,
}

pub enum Input {
    Image(ImageBuffer),
    Cloud(DataBatch),
    /// Point clouds of the frames in order, plus held-out views.
    Frames { frames: Vec<DataBatch>, evals: Vec<EvalView> },
}

impl Input {
    pub fn spatial_dim(&self) -> usize {
        match self {
            Input::Image(_) => 2,
            _ => 3,
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn load_camera(path: &Path) -> Result<Camera, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let cam: Camera = serde_json::from_str(&text).map_err(|e| CliError::io_at(path, e))?;
    cam.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cam)
}

enum Entry {
    Frame { color: PathBuf, depth: PathBuf, camera: PathBuf },
    Eval { color: PathBuf, camera: PathBuf },
}

fn parse_manifest(path: &Path) -> Result<Vec<Entry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let bad = || CliError::Io(format!("{}:{}: cannot read manifest line {line:?}", path.display(), n + 1));
        entries.push(match words[..] {
            ["frame", c, d, cam] => Entry::Frame {
                color: base.join(c),
                depth: base.join(d),
                camera: base.join(cam),
            },
            ["eval", c, cam] => Entry::Eval {
                color: base.join(c),
                camera: base.join(cam),
            },
            _ => return Err(bad()),
        });
    }
    Ok(entries)
}

/// Reads every file a manifest refers to before anything else happens, so a
/// missing frame fails the run up front.
fn load_manifest(path: &Path) -> Result<Input, CliError> {
    let entries = parse_manifest(path)?;
    for e in &entries {
        let files: Vec<&PathBuf> = match e {
            Entry::Frame { color, depth, camera } => vec![color, depth, camera],
            Entry::Eval { color, camera } => vec![color, camera],
        };
        if let Some(missing) = files.into_iter().find(|f| !f.is_file()) {
            return Err(CliError::io_at(missing, "no such file"));
        }
    }
    let mut frames = Vec::new();
    let mut evals = Vec::new();
    for e in entries {
        match e {
            Entry::Frame { color, depth, camera } => {
                let img = read_image(&color).at(&color)?;
                let dm = read_depth(&depth).at(&depth)?;
                let cam = load_camera(&camera)?;
                let frame = RgbdFrame::new(img, dm, cam)
                    .map_err(|e| CliError::Config(format!("{}: {e}", color.display())))?;
                frames.push(rgbd_to_pointcloud(&frame));
            }
            Entry::Eval { color, camera } => {
                let image = read_image(&color).at(&color)?;
                let camera_ = load_camera(&camera)?;
                if camera_.width != image.width || camera_.height != image.height {
                    return Err(CliError::Config(format!(
                        "{}: camera resolution differs from the image",
                        camera.display()
                    )));
                }
                evals.push(EvalView { camera: camera_, image });
            }
        }
    }
    if frames.is_empty() {
        return Err(CliError::Config(format!("{}: manifest lists no frames", path.display())));
    }
    Ok(Input::Frames { frames, evals })
}

pub fn load(path: &Path) -> Result<Input, CliError> {
    if !path.is_file() {
        return Err(CliError::io_at(path, "no such file"));
    }
    match extension(path).as_str() {
        "ppm" | "png" => Ok(Input::Image(read_image(path).at(path)?)),
        "ply" => {
            let cloud = load_pointcloud(path).at(path)?;
            if cloud.is_empty() {
                return Err(CliError::Config(format!("{}: point cloud is empty", path.display())));
            }
            Ok(Input::Cloud(cloud))
        }
        _ => load_manifest(path),
    }
}
