//! Browser bindings: fit an image in one pass or patch by patch, and stream
//! RGBD views of the synthetic cube while orbiting the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbgs_core::io::{image_to_batch, patch_stream, rgbd_to_pointcloud, NormalizationSpec};
use vbgs_core::render::{psnr, render_2d, render_3d, ImageBuffer, RenderOptions};
use vbgs_core::stream::StreamSession;
use vbgs_core::synth::{cube_setup, orbit_camera, structured_image, SceneSetup};
use vbgs_core::{cavi_fit, compute_elbo, init_model, DataBatch, HyperParams, InitMode, MixtureState};
use wasm_bindgen::prelude::*;

fn js_err(e: vbgs_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(img: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width * img.height * 4);
    for px in img.to_rgb8().chunks_exact(3) {
        out.extend_from_slice(px);
        out.push(255);
    }
    out
}

fn from_rgba(width: usize, height: usize, bytes: &[u8]) -> Result<ImageBuffer, JsError> {
    if bytes.len() != width * height * 4 {
        return Err(JsError::new("pixel buffer does not match the image size"));
    }
    let rgb: Vec<u8> = bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    ImageBuffer::from_rgb8(width, height, &rgb).map_err(js_err)
}

/// Deterministic synthetic test image as RGBA bytes.
#[wasm_bindgen]
pub fn synthetic_image(seed: u64, size: usize) -> Vec<u8> {
    rgba(&structured_image(seed, size, size))
}

/// A 2D model of one image. `batch_iteration` runs coordinate ascent over all
/// pixels; `stream_step` feeds the next 8x8 patch through a single update.
#[wasm_bindgen]
pub struct ImageDemo {
    image: ImageBuffer,
    norm: NormalizationSpec,
    data: DataBatch,
    patches: Vec<DataBatch>,
    init: MixtureState,
    state: MixtureState,
    next_patch: usize,
    elbo: f64,
}

#[wasm_bindgen]
impl ImageDemo {
    /// `pixels` is RGBA as read from a canvas.
    #[wasm_bindgen(constructor)]
    pub fn new(pixels: &[u8], width: usize, height: usize, components: usize, seed: u64) -> Result<ImageDemo, JsError> {
        let image = from_rgba(width, height, pixels)?;
        let norm = NormalizationSpec::for_image(height, width).map_err(js_err)?;
        let data = norm.normalize(&image_to_batch(&image)).map_err(js_err)?;
        let patches = patch_stream(&image, (8, 8))
            .map_err(js_err)?
            .iter()
            .map(|p| norm.normalize(p))
            .collect::<vbgs_core::Result<Vec<_>>>()
            .map_err(js_err)?;
        let mut cfg = HyperParams::image(components);
        cfg.init_mode = InitMode::Data;
        cfg.seed = seed;
        let init = init_model(&cfg, components, Some(&data), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(js_err)?;
        Ok(ImageDemo {
            image,
            norm,
            data,
            patches,
            state: init.clone(),
            init,
            next_patch: 0,
            elbo: f64::NAN,
        })
    }

    /// Back to the initialization.
    pub fn reset(&mut self) {
        self.state = self.init.clone();
        self.next_patch = 0;
        self.elbo = f64::NAN;
    }

    /// One coordinate-ascent iteration over the whole image; returns the ELBO.
    pub fn batch_iteration(&mut self) -> Result<f64, JsError> {
        let (st, trace) = cavi_fit(&self.state, &self.data, 1).map_err(js_err)?;
        self.state = st;
        self.elbo = trace[0];
        Ok(self.elbo)
    }

    /// Feeds the next patch; false once the image has been consumed.
    pub fn stream_step(&mut self) -> Result<bool, JsError> {
        let Some(p) = self.patches.get(self.next_patch) else {
            return Ok(false);
        };
        vbgs_core::streaming_update(&mut self.state, p).map_err(js_err)?;
        self.next_patch += 1;
        Ok(true)
    }

    /// ELBO of the current model on the whole image.
    pub fn elbo(&mut self) -> Result<f64, JsError> {
        self.elbo = compute_elbo(&self.state, &self.data).map_err(js_err)?;
        Ok(self.elbo)
    }

    pub fn patches_seen(&self) -> usize {
        self.next_patch
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn used_components(&self) -> usize {
        self.state.used_components()
    }

    pub fn render(&self) -> Result<Vec<u8>, JsError> {
        let img = render_2d(&self.state, self.image.width, self.image.height, &self.norm).map_err(js_err)?;
        Ok(rgba(&img))
    }

    pub fn psnr(&self) -> Result<f64, JsError> {
        let img = render_2d(&self.state, self.image.width, self.image.height, &self.norm).map_err(js_err)?;
        psnr(&img, &self.image).map_err(js_err)
    }
}

/// RGBD views of the cube streamed one at a time into a 3D model, with
/// optional reassignment of unused components.
#[wasm_bindgen]
pub struct CubeDemo {
    setup: SceneSetup,
    norm: NormalizationSpec,
    session: StreamSession,
    init: MixtureState,
    reassign: bool,
    size: usize,
}

#[wasm_bindgen]
impl CubeDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(views: usize, size: usize, components: usize, seed: u64, reassign: bool) -> Result<CubeDemo, JsError> {
        let setup = cube_setup(views, size);
        let norm = NormalizationSpec::for_volume(setup.range).map_err(js_err)?;
        let mut cfg = HyperParams::volume(components);
        cfg.init_mode = InitMode::Random;
        cfg.seed = seed;
        let init = init_model(&cfg, components, None, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(js_err)?;
        Ok(CubeDemo {
            setup,
            norm,
            session: StreamSession::new(init.clone()),
            init,
            reassign,
            size,
        })
    }

    pub fn reset(&mut self, reassign: bool) {
        self.session = StreamSession::new(self.init.clone());
        self.reassign = reassign;
    }

    /// Streams the next training view; false when all have been seen.
    pub fn step(&mut self) -> Result<bool, JsError> {
        let Some(cam) = self.setup.train.get(self.session.step as usize) else {
            return Ok(false);
        };
        let frame = self.setup.scene.frame(cam);
        let batch = self.norm.normalize(&rgbd_to_pointcloud(&frame)).map_err(js_err)?;
        self.session.step(&batch, self.reassign).map_err(js_err)?;
        Ok(true)
    }

    /// The training view most recently streamed, as RGBA.
    pub fn last_view(&self) -> Vec<u8> {
        let i = (self.session.step as usize).saturating_sub(1).min(self.setup.train.len() - 1);
        rgba(&self.setup.scene.render(&self.setup.train[i]).0)
    }

    pub fn views_seen(&self) -> usize {
        self.session.step as usize
    }

    pub fn view_count(&self) -> usize {
        self.setup.train.len()
    }

    pub fn used_components(&self) -> usize {
        self.session.state.used_components()
    }

    fn options(&self) -> RenderOptions {
        RenderOptions {
            background: self.setup.scene.background,
            ..Default::default()
        }
    }

    /// The model seen from an orbit camera; angles in radians.
    pub fn render(&self, azimuth: f64, elevation: f64) -> Result<Vec<u8>, JsError> {
        let cam = orbit_camera(azimuth, elevation, 3.0, self.size, 90.0 / 64.0 * self.size as f64);
        let img = render_3d(&self.session.state, &cam, &self.norm, &self.options()).map_err(js_err)?;
        Ok(rgba(&img))
    }

    /// PSNR on the held-out view.
    pub fn psnr(&self) -> Result<f64, JsError> {
        let cam = &self.setup.eval[0];
        let img = render_3d(&self.session.state, cam, &self.norm, &self.options()).map_err(js_err)?;
        psnr(&img, &self.setup.scene.render(cam).0).map_err(js_err)
    }
}
