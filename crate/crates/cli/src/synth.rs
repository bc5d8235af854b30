//! `vbgs synth`: writes the built-in synthetic data sets to disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use vbgs_core::io::{write_depth, write_image};
use vbgs_core::render::Camera;
use vbgs_core::synth::{cube_setup, room_setup, structured_image, SceneSetup};

use crate::config::parse_pair;
use crate::error::{CliError, WithPath};

const DEPTH_SCALE: f64 = 1e-3;

fn write_camera(path: &Path, cam: &Camera) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(cam).expect("camera serializes") + "\n";
    fs::write(path, text).map_err(|e| CliError::io_at(path, e))
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::io_at(p, e))
}

pub fn image(size: &str, seed: u64, out: &Path) -> Result<(), CliError> {
    let (w, h) = parse_pair(size, "--size")?;
    mkdir(out)?;
    let p = out.join("image.ppm");
    write_image(&p, &structured_image(seed, w, h)).at(&p)
}

fn scene(setup: &SceneSetup, out: &Path) -> Result<(), CliError> {
    for sub in ["color", "depth", "cams"] {
        mkdir(&out.join(sub))?;
    }
    let bg = setup.scene.background;
    let mut manifest = format!(
        "# {} training frames, {} held-out views\n# spatial range {},{}; render background {},{},{}\n",
        setup.train.len(),
        setup.eval.len(),
        setup.range.0,
        setup.range.1,
        bg[0],
        bg[1],
        bg[2]
    );
    for (i, cam) in setup.train.iter().enumerate() {
        let (img, depth) = setup.scene.render(cam);
        let (c, d, j) = (format!("color/{i:03}.ppm"), format!("depth/{i:03}.pgm"), format!("cams/{i:03}.json"));
        write_image(&out.join(&c), &img).at(&out.join(&c))?;
        write_depth(&out.join(&d), &depth, DEPTH_SCALE).at(&out.join(&d))?;
        write_camera(&out.join(&j), cam)?;
        writeln!(manifest, "frame {c} {d} {j}").unwrap();
    }
    for (i, cam) in setup.eval.iter().enumerate() {
        let (img, _) = setup.scene.render(cam);
        let (c, j) = (format!("color/eval{i}.ppm"), format!("cams/eval{i}.json"));
        write_image(&out.join(&c), &img).at(&out.join(&c))?;
        write_camera(&out.join(&j), cam)?;
        writeln!(manifest, "eval {c} {j}").unwrap();
    }
    let p = out.join("manifest.txt");
    fs::write(&p, manifest).map_err(|e| CliError::io_at(&p, e))
}

pub fn cube(views: usize, size: usize, out: &Path) -> Result<(), CliError> {
    scene(&cube_setup(views, size), out)
}

pub fn room(views: usize, size: usize, out: &Path) -> Result<(), CliError> {
    scene(&room_setup(views.div_ceil(2), size), out)
}
