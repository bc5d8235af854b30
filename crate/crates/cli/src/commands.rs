use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbgs_core::io::{
    image_to_batch, load_checkpoint, patch_stream, read_image, save_checkpoint, write_image, Checkpoint,
    NormalizationMode, NormalizationSpec,
};
use vbgs_core::render::{format_psnr, psnr, render_2d, render_3d, Camera, ImageBuffer, RenderOptions};
use vbgs_core::stream::StreamSession;
use vbgs_core::{cavi_fit_observed, compute_elbo, init_model, DataBatch, MixtureState};

use crate::config::{self, RunConfig};
use crate::error::{CliError, WithPath};
use crate::input::{self, EvalView, Input};
use crate::metrics::{psnr_value, MetricsLog, MetricsRecord};
use crate::{RenderArgs, RunArgs};

/// How a run measures reconstruction quality after each step.
enum Evaluator {
    Image(ImageBuffer),
    Views(Vec<EvalView>),
    None,
}

struct Prepared {
    /// Normalized batches in stream order (one batch for whole inputs).
    batches: Vec<DataBatch>,
    norm: NormalizationSpec,
    eval: Evaluator,
}

impl Prepared {
    fn all_data(&self) -> DataBatch {
        DataBatch::concat(self.norm.spatial_dim(), &self.batches)
    }
}

/// `image` is (height, width) for 2D inputs.
fn normalization_for(
    image: Option<(usize, usize)>,
    raw: &DataBatch,
    cfg: &RunConfig,
) -> Result<NormalizationSpec, CliError> {
    Ok(match (cfg.normalization, image) {
        (NormalizationMode::Empirical, _) => NormalizationSpec::empirical(raw)?,
        (NormalizationMode::Assumed, Some((h, w))) => NormalizationSpec::for_image(h, w)?,
        (NormalizationMode::Assumed, None) => NormalizationSpec::for_volume(cfg.range)?,
    })
}

fn prepare(input: Input, cfg: &RunConfig, streaming: bool) -> Result<Prepared, CliError> {
    match input {
        Input::Image(img) => {
            let raw = image_to_batch(&img);
            let norm = normalization_for(Some((img.height, img.width)), &raw, cfg)?;
            let batches = if streaming {
                patch_stream(&img, cfg.patch)?
                    .iter()
                    .map(|b| norm.normalize(b))
                    .collect::<vbgs_core::Result<Vec<_>>>()?
            } else {
                vec![norm.normalize(&raw)?]
            };
            Ok(Prepared {
                batches,
                norm,
                eval: Evaluator::Image(img),
            })
        }
        Input::Cloud(cloud) => {
            if streaming {
                return Err(CliError::Config(
                    "stream needs an image or a frame manifest, not a single point cloud".into(),
                ));
            }
            let norm = normalization_for(None, &cloud, cfg)?;
            Ok(Prepared {
                batches: vec![norm.normalize(&cloud)?],
                norm,
                eval: Evaluator::None,
            })
        }
        Input::Frames { frames, evals } => {
            if streaming && cfg.normalization == NormalizationMode::Empirical {
                return Err(CliError::Config(
                    "empirical normalization needs the whole data set up front; stream with assumed ranges".into(),
                ));
            }
            let raw = DataBatch::concat(3, &frames);
            let norm = normalization_for(None, &raw, cfg)?;
            let batches = if streaming {
                frames.iter().map(|f| norm.normalize(f)).collect::<vbgs_core::Result<Vec<_>>>()?
            } else {
                vec![norm.normalize(&raw)?]
            };
            let eval = if evals.is_empty() {
                Evaluator::None
            } else {
                Evaluator::Views(evals)
            };
            Ok(Prepared { batches, norm, eval })
        }
    }
}

fn render_options(cfg_background: [f64; 3]) -> RenderOptions {
    RenderOptions {
        background: cfg_background,
        ..Default::default()
    }
}

/// PSNR of the current model, averaged over held-out views for 3D.
fn evaluate(
    state: &MixtureState,
    eval: &Evaluator,
    norm: &NormalizationSpec,
    opts: &RenderOptions,
) -> vbgs_core::Result<Option<f64>> {
    Ok(match eval {
        Evaluator::Image(img) => Some(psnr(&render_2d(state, img.width, img.height, norm)?, img)?),
        Evaluator::Views(views) => {
            let mut total = 0.0;
            for v in views {
                total += psnr(&render_3d(state, &v.camera, norm, opts)?, &v.image)?;
            }
            Some(total / views.len() as f64)
        }
        Evaluator::None => None,
    })
}

fn final_render(
    state: &MixtureState,
    prep: &Prepared,
    camera: Option<&Path>,
    opts: &RenderOptions,
) -> Result<Option<ImageBuffer>, CliError> {
    if let Evaluator::Image(img) = &prep.eval {
        return Ok(Some(render_2d(state, img.width, img.height, &prep.norm)?));
    }
    let cam = match (camera, &prep.eval) {
        (Some(p), _) => input::load_camera(p)?,
        (None, Evaluator::Views(v)) => v[0].camera.clone(),
        _ => {
            eprintln!("vbgs: no camera for a 3D render; pass --camera to write render.ppm");
            return Ok(None);
        }
    };
    Ok(Some(render_3d(state, &cam, &prep.norm, opts)?))
}

fn create_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))
}

fn write_config_echo(cfg: &RunConfig, norm: &NormalizationSpec, out: &Path) -> Result<(), CliError> {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v["normalization_spec"] = serde_json::to_value(norm).expect("normalization serializes");
    let path = out.join("config.json");
    let text = serde_json::to_string_pretty(&v).expect("config serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::io_at(&path, e))
}

fn finish(
    state: MixtureState,
    step: u64,
    prep: &Prepared,
    args: &RunArgs,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let opts = render_options(cfg.background);
    if let Some(img) = final_render(&state, prep, args.camera.as_deref(), &opts)? {
        let p = args.out.join("render.ppm");
        write_image(&p, &img).at(&p)?;
    }
    let ck = Checkpoint {
        state,
        normalization: prep.norm.clone(),
        step,
    };
    let p = args.out.join("model.vbgs");
    save_checkpoint(&ck, &p).at(&p)?;
    write_config_echo(cfg, &prep.norm, &args.out)
}

fn open_metrics(out: &Path) -> Result<MetricsLog, CliError> {
    let p = out.join("metrics.jsonl");
    MetricsLog::create(&p).map_err(|e| CliError::io_at(&p, e))
}

pub fn fit(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let input = input::load(&args.input)?;
    let cfg = config::resolve(args, input.spatial_dim(), "fit")?;
    let prep = prepare(input, &cfg, false)?;
    create_out_dir(&args.out)?;
    let data = prep.all_data();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed);
    let init = init_model(&cfg.model, cfg.components, Some(&data), &mut rng)?;
    let mut log = open_metrics(&args.out)?;
    let opts = render_options(cfg.background);
    let (state, _) = cavi_fit_observed(&init, &data, cfg.iters, |iter, st, elbo| {
        let rec = MetricsRecord {
            step: iter as u64,
            psnr: psnr_value(evaluate(st, &prep.eval, &prep.norm, &opts)?),
            elbo,
            used_components: st.used_components(),
            wall_time: args.timing.then(|| started.elapsed().as_secs_f64()),
        };
        log.append(&rec)?;
        Ok(())
    })?;
    finish(state, cfg.iters as u64, &prep, args, &cfg)
}

pub fn stream(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let input = input::load(&args.input)?;
    let cfg = config::resolve(args, input.spatial_dim(), "stream")?;
    let prep = prepare(input, &cfg, true)?;
    create_out_dir(&args.out)?;
    // data initialization may look at the whole stream; random init ignores it
    let all = prep.all_data();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed);
    let init = init_model(&cfg.model, cfg.components, Some(&all), &mut rng)?;
    let mut session = StreamSession::new(init);
    let mut log = open_metrics(&args.out)?;
    let opts = render_options(cfg.background);
    let mut seen = DataBatch::new(prep.norm.spatial_dim());
    for batch in &prep.batches {
        session.step(batch, cfg.reassign)?;
        seen.extend(batch);
        let st = &session.state;
        log.append(&MetricsRecord {
            step: session.step,
            psnr: psnr_value(evaluate(st, &prep.eval, &prep.norm, &opts)?),
            elbo: compute_elbo(st, &seen)?,
            used_components: st.used_components(),
            wall_time: args.timing.then(|| started.elapsed().as_secs_f64()),
        })
        .map_err(|e| CliError::io_at(&args.out.join("metrics.jsonl"), e))?;
    }
    let step = session.step;
    finish(session.state, step, &prep, args, &cfg)
}

/// Image size a 2D model was normalized for, when the ranges were assumed.
fn native_size(norm: &NormalizationSpec) -> Option<(usize, usize)> {
    if norm.mode != NormalizationMode::Assumed {
        return None;
    }
    // assumed image ranges are [0, H] × [0, W], centered at (H/2, W/2)
    let h = (2.0 * norm.spatial_mean[0]).round();
    let w = (2.0 * norm.spatial_mean[1]).round();
    (h >= 1.0 && w >= 1.0).then_some((w as usize, h as usize))
}

pub fn render(args: &RenderArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&args.checkpoint).at(&args.checkpoint)?;
    let background = match &args.background {
        Some(b) => config::parse_background(b)?,
        None => [0.0; 3],
    };
    let img = match ck.state.spatial_dim() {
        2 => {
            if args.camera.is_some() {
                return Err(CliError::Config("a 2D checkpoint takes --size, not --camera".into()));
            }
            let (w, h) = match &args.size {
                Some(s) => config::parse_pair(s, "--size")?,
                None => native_size(&ck.normalization)
                    .ok_or_else(|| CliError::Config("--size WxH is required for this checkpoint".into()))?,
            };
            render_2d(&ck.state, w, h, &ck.normalization)?
        }
        3 => {
            let path = args
                .camera
                .as_ref()
                .ok_or_else(|| CliError::Config("a 3D checkpoint needs --camera".into()))?;
            let cam: Camera = input::load_camera(path)?;
            if let Some(s) = &args.size {
                let (w, h) = config::parse_pair(s, "--size")?;
                if (w, h) != (cam.width, cam.height) {
                    return Err(CliError::Config(format!(
                        "--size {w}x{h} disagrees with the camera's {}x{}",
                        cam.width, cam.height
                    )));
                }
            }
            render_3d(&ck.state, &cam, &ck.normalization, &render_options(background))?
        }
        d => return Err(CliError::Config(format!("cannot render a {d}-dimensional model"))),
    };
    create_out_dir(&args.out)?;
    let p = args.out.join(&args.name);
    write_image(&p, &img).at(&p)
}

pub fn eval(render: &Path, reference: &Path) -> Result<(), CliError> {
    let a = read_image(render).at(render)?;
    let b = read_image(reference).at(reference)?;
    println!("{}", format_psnr(psnr(&a, &b)?));
    Ok(())
}
