use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use vbgs_core::io::normalize::OBJECT_RANGE;
use vbgs_core::io::NormalizationMode;
use vbgs_core::{HyperParams, InitMode};

use crate::error::CliError;
use crate::RunArgs;

pub const DEFAULT_COMPONENTS: usize = 1000;
pub const DEFAULT_ITERS: usize = 10;
pub const DEFAULT_PATCH: (usize, usize) = (8, 8);

/// The JSON run configuration as written by the user; everything optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    components: Option<usize>,
    iters: Option<usize>,
    seed: Option<u64>,
    init: Option<InitMode>,
    reassign: Option<bool>,
    reassign_fraction: Option<f64>,
    patch: Option<String>,
    normalization: Option<NormalizationMode>,
    range: Option<(f64, f64)>,
    background: Option<[f64; 3]>,
    /// Overrides for individual model hyperparameters.
    model: Option<Map<String, Value>>,
}

/// Fully resolved settings of one run; echoed as `config.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub input: String,
    pub components: usize,
    pub iters: usize,
    #[serde(serialize_with = "ser_size")]
    pub patch: (usize, usize),
    pub reassign: bool,
    pub normalization: NormalizationMode,
    pub range: (f64, f64),
    pub background: [f64; 3],
    pub model: HyperParams,
}

fn ser_size<S: serde::Serializer>(v: &(usize, usize), s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}x{}", v.0, v.1))
}

/// Parses "AxB" into (A, B).
pub fn parse_pair(text: &str, what: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("{what} must look like 8x8, got {text:?}"));
    let (a, b) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn parse_range(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("--range must look like -1,1, got {text:?}"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub fn parse_background(text: &str) -> Result<[f64; 3], CliError> {
    let bad = || CliError::Config(format!("--background must look like 1,1,1, got {text:?}"));
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match parts[..] {
        [r, g, b] if [r, g, b].iter().all(|v| (0.0..=1.0).contains(v)) => Ok([r, g, b]),
        _ => Err(bad()),
    }
}

fn parse_init(text: &str) -> Result<InitMode, CliError> {
    match text {
        "random" => Ok(InitMode::Random),
        "data" => Ok(InitMode::Data),
        other => Err(CliError::Config(format!("unknown init mode {other:?}"))),
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Applies user overrides key by key on top of the defaults.
fn merge_model(defaults: &HyperParams, overrides: &Map<String, Value>) -> Result<HyperParams, CliError> {
    let Value::Object(mut merged) = serde_json::to_value(defaults).expect("hyperparameters serialize") else {
        unreachable!()
    };
    for (key, value) in overrides {
        if key == "spatial_dim" {
            return Err(CliError::Config("model.spatial_dim follows from the input and cannot be set".into()));
        }
        if !merged.contains_key(key) {
            return Err(CliError::Config(format!("unknown model key {key:?}")));
        }
        merged.insert(key.clone(), value.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("model: {e}")))
}

/// Defaults, then the config file, then flags.
pub fn resolve(args: &RunArgs, spatial_dim: usize, command: &str) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let components = args.components.or(file.components).unwrap_or(DEFAULT_COMPONENTS);
    if components == 0 {
        return Err(CliError::Config("components must be at least 1".into()));
    }
    let iters = args.iters.or(file.iters).unwrap_or(DEFAULT_ITERS);
    if iters == 0 {
        return Err(CliError::Config("iters must be at least 1".into()));
    }
    let patch = match args.patch.as_deref().or(file.patch.as_deref()) {
        Some(p) => parse_pair(p, "--patch")?,
        None => DEFAULT_PATCH,
    };

    let mut model = HyperParams::for_dim(spatial_dim, components);
    if let Some(overrides) = &file.model {
        model = merge_model(&model, overrides)?;
    }
    if let Some(seed) = file.seed {
        model.seed = seed;
    }
    if let Some(init) = file.init {
        model.init_mode = init;
    }
    if let Some(f) = file.reassign_fraction {
        model.reassign_fraction = f;
    }
    if let Some(seed) = args.seed {
        model.seed = seed;
    }
    if let Some(init) = &args.init {
        model.init_mode = parse_init(init)?;
    }
    if let Some(f) = args.reassign_fraction {
        model.reassign_fraction = f;
    }
    model.validate()?;
    let reassign = args.reassign_fraction.is_some()
        || file.reassign.unwrap_or(file.reassign_fraction.is_some());

    let normalization = match args.normalization.as_deref() {
        Some("empirical") => NormalizationMode::Empirical,
        Some(_) => NormalizationMode::Assumed,
        None => file.normalization.unwrap_or(NormalizationMode::Assumed),
    };
    let range = match &args.range {
        Some(r) => parse_range(r)?,
        None => file.range.unwrap_or(OBJECT_RANGE),
    };
    let background = match &args.background {
        Some(b) => parse_background(b)?,
        None => file.background.unwrap_or([0.0; 3]),
    };

    Ok(RunConfig {
        command: command.to_string(),
        input: args.input.display().to_string(),
        components,
        iters,
        patch,
        reassign,
        normalization,
        range,
        background,
        model,
    })
}
