//! The mixture model: state, initialization, assignments, conjugate updates,
//! coordinate-ascent fitting and the evidence lower bound.
//!
//! Every component carries a Normal-Inverse-Wishart posterior over its spatial
//! Gaussian and a fixed-covariance Normal posterior over its color mean. The
//! live posterior of a component that has absorbed data is always
//! `prior + Σ γ·T(x)`; a component that never received any responsibility
//! keeps its initial posterior, which is what assignments are computed against
//! in streaming mode.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{CanonicalNiw, ColorPosterior, Dirichlet, NiwLogLikelihood, NiwNatural};
use crate::parallel::{for_each_row_block, map_chunks, CHUNK};
use crate::special::logsumexp;

/// Normalized responsibilities below this are flushed to zero.
pub const RESPONSIBILITY_FLOOR: f64 = 1e-12;

/// Points with a spatial part (dimension 2 or 3) and an RGB color.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataBatch {
    dim: usize,
    spatial: Vec<f64>,
    color: Vec<f64>,
}

impl DataBatch {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            spatial: Vec::new(),
            color: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            spatial: Vec::with_capacity(n * dim),
            color: Vec::with_capacity(n * 3),
        }
    }

    /// Builds a batch from flat row-major arrays (N×D spatial, N×3 color).
    pub fn from_parts(dim: usize, spatial: Vec<f64>, color: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("spatial dimension must be positive".into()));
        }
        if !spatial.len().is_multiple_of(dim) || !color.len().is_multiple_of(3) || spatial.len() / dim != color.len() / 3
        {
            return Err(Error::InvalidArgument(format!(
                "spatial ({} values, D = {dim}) and color ({} values) disagree on the point count",
                spatial.len(),
                color.len()
            )));
        }
        if spatial.iter().chain(&color).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("batch contains NaN or Inf".into()));
        }
        Ok(Self {
            dim,
            spatial,
            color,
        })
    }

    pub fn push(&mut self, s: &[f64], c: &[f64]) {
        debug_assert_eq!(s.len(), self.dim);
        self.spatial.extend_from_slice(s);
        self.color.extend_from_slice(&c[..3]);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.color.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    #[inline]
    pub fn spatial(&self, i: usize) -> &[f64] {
        &self.spatial[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn color(&self, i: usize) -> &[f64] {
        &self.color[i * 3..i * 3 + 3]
    }

    pub fn spatial_values(&self) -> &[f64] {
        &self.spatial
    }

    pub fn color_values(&self) -> &[f64] {
        &self.color
    }

    pub fn spatial_values_mut(&mut self) -> &mut [f64] {
        &mut self.spatial
    }

    pub fn color_values_mut(&mut self) -> &mut [f64] {
        &mut self.color
    }

    pub fn extend(&mut self, other: &DataBatch) {
        debug_assert_eq!(self.dim, other.dim);
        self.spatial.extend_from_slice(&other.spatial);
        self.color.extend_from_slice(&other.color);
    }

    pub fn concat<'a>(dim: usize, batches: impl IntoIterator<Item = &'a DataBatch>) -> Self {
        let mut out = DataBatch::new(dim);
        for b in batches {
            out.extend(b);
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = DataBatch::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.push(self.spatial(i), self.color(i));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    Data,
}

/// Hyperparameters of the prior, the initial posterior and the streaming
/// heuristics. Spatial values are in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub spatial_dim: usize,

    pub prior_spatial_mean: f64,
    pub prior_spatial_kappa: f64,
    /// Isotropic Inverse-Wishart scale: V = value·I.
    pub prior_spatial_scale: f64,
    pub prior_spatial_dof: f64,

    pub prior_color_mean: f64,
    pub prior_color_kappa: f64,
    /// Recorded for completeness; the color covariance is pinned at ε·I.
    pub prior_color_scale: f64,
    pub prior_color_dof: f64,

    pub init_spatial_kappa: f64,
    pub init_spatial_scale: f64,
    pub init_spatial_dof: f64,
    pub init_color_kappa: f64,

    /// Dirichlet concentration per component; `None` means 1/K.
    pub alpha: Option<f64>,
    /// Fixed isotropic color variance.
    pub epsilon: f64,

    pub init_mode: InitMode,
    pub reassign_fraction: f64,
    pub unused_tolerance: f64,
    pub seed: u64,
}

impl HyperParams {
    /// Reference hyperparameters for large-scale runs.
    ///
    /// Read as Inverse-Wishart scales these give an enormous prior covariance
    /// (2.25e4·K in normalized units for images) which makes the spatial term
    /// of the assignments vanish; prefer [`HyperParams::image`] or
    /// [`HyperParams::volume`].
    pub fn table(spatial_dim: usize, components: usize) -> Self {
        let nc = components as f64;
        let (v_s, n_s, v_c, kappa_init) = match spatial_dim {
            2 => (2.25e4 * nc, 4.0, 1e6, 1e-5),
            _ => (2.25e6 * nc, 5.0, 1e8, 1e-6),
        };
        Self {
            spatial_dim,
            prior_spatial_mean: 0.0,
            prior_spatial_kappa: 1e-2,
            prior_spatial_scale: v_s,
            prior_spatial_dof: n_s,
            prior_color_mean: 0.0,
            prior_color_kappa: 1e-2,
            prior_color_scale: v_c,
            prior_color_dof: 5.0,
            init_spatial_kappa: kappa_init,
            init_spatial_scale: v_s,
            init_spatial_dof: n_s,
            init_color_kappa: 1e-2,
            alpha: None,
            epsilon: 1e-2,
            init_mode: InitMode::Data,
            reassign_fraction: 0.05,
            unused_tolerance: 1e-9,
            seed: 0,
        }
    }

    /// Working defaults for images normalized to unit variance per axis.
    ///
    /// Same structure as the tables, but the spatial scale is sized so that
    /// the initial posterior covariance spans roughly the area one of K
    /// components gets when tiling the normalized image plane.
    pub fn image(components: usize) -> Self {
        let mut p = Self::table(2, components);
        let scale = IMAGE_SCALE_COEF / components as f64;
        p.prior_spatial_scale = scale;
        p.init_spatial_scale = scale;
        p
    }

    /// Working defaults for colored point clouds normalized to unit variance.
    ///
    /// The color scale is wider than for images. With a tight ε a relocated
    /// component, which carries a real color, outbids every gray random-init
    /// component on color alone and grabs same-colored points from far away.
    pub fn volume(components: usize) -> Self {
        let mut p = Self::table(3, components);
        let scale = VOLUME_SCALE_COEF / components as f64;
        p.prior_spatial_scale = scale;
        p.init_spatial_scale = scale;
        p.epsilon = VOLUME_EPSILON;
        p
    }

    /// Defaults by spatial dimension.
    pub fn for_dim(spatial_dim: usize, components: usize) -> Self {
        if spatial_dim == 2 {
            Self::image(components)
        } else {
            let mut p = Self::volume(components);
            p.spatial_dim = spatial_dim;
            p
        }
    }

    pub fn alpha_for(&self, components: usize) -> f64 {
        self.alpha.unwrap_or(1.0 / components as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("prior_spatial_kappa", self.prior_spatial_kappa),
            ("prior_spatial_scale", self.prior_spatial_scale),
            ("prior_color_kappa", self.prior_color_kappa),
            ("init_spatial_kappa", self.init_spatial_kappa),
            ("init_spatial_scale", self.init_spatial_scale),
            ("init_color_kappa", self.init_color_kappa),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.spatial_dim == 0 {
            return Err(Error::InvalidParameter("spatial_dim must be positive".into()));
        }
        let min_dof = self.spatial_dim as f64 - 1.0;
        if !(self.prior_spatial_dof > min_dof) || !(self.init_spatial_dof > min_dof) {
            return Err(Error::InvalidParameter(format!(
                "spatial degrees of freedom must exceed D - 1 = {min_dof}"
            )));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return Err(Error::InvalidParameter(format!("alpha must be positive, got {a}")));
            }
        }
        if !(0.0..=1.0).contains(&self.reassign_fraction) {
            return Err(Error::InvalidParameter(format!(
                "reassign_fraction must lie in [0, 1], got {}",
                self.reassign_fraction
            )));
        }
        if !(self.unused_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("unused_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Calibrated spatial scale numerators (V = coef / K · I).
pub const IMAGE_SCALE_COEF: f64 = 1.5;
pub const VOLUME_SCALE_COEF: f64 = 4.0;
pub const VOLUME_EPSILON: f64 = 1.0;

/// One mixture component: spatial NIW posterior plus color posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentState {
    pub spatial: NiwNatural,
    pub color: ColorPosterior,
}

impl ComponentState {
    fn new(
        dim: usize,
        spatial_mean: &[f64],
        spatial_kappa: f64,
        spatial_scale: f64,
        spatial_dof: f64,
        color_mean: &[f64],
        color_kappa: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let canonical = CanonicalNiw {
            mean: DVector::from_column_slice(spatial_mean),
            kappa: spatial_kappa,
            scale: nalgebra::DMatrix::identity(dim, dim) * spatial_scale,
            dof: spatial_dof,
        };
        Ok(Self {
            spatial: NiwNatural::from_canonical(&canonical)?,
            color: ColorPosterior::new(
                Vector3::new(color_mean[0], color_mean[1], color_mean[2]),
                color_kappa,
                epsilon,
            )?,
        })
    }

    /// Adds the statistics of component `k` in `delta`.
    fn absorb(&mut self, delta: &SufficientStatsDelta, k: usize) {
        let mass = delta.mass[k];
        self.spatial
            .absorb(mass, delta.spatial_sum(k), delta.spatial_outer(k));
        self.color.absorb(mass, delta.color_sum(k));
    }

    fn check(&self, k: usize) -> Result<()> {
        self.spatial
            .log_likelihood_terms()
            .map(|_| ())
            .map_err(|e| e.in_component(k))?;
        if !(self.color.kappa > 0.0) || self.color.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(k, "color posterior left its domain"));
        }
        Ok(())
    }
}

/// Full model state.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    config: HyperParams,
    pub components: Vec<ComponentState>,
    pub weights: Dirichlet,
    prior: ComponentState,
    prior_weights: Dirichlet,
    initial: Vec<ComponentState>,
}

impl MixtureState {
    /// Reassembles a state, e.g. from a checkpoint.
    pub fn from_parts(
        config: HyperParams,
        components: Vec<ComponentState>,
        weights: Dirichlet,
        prior: ComponentState,
        prior_weights: Dirichlet,
        initial: Vec<ComponentState>,
    ) -> Result<Self> {
        let k = components.len();
        if k == 0 {
            return Err(Error::InvalidArgument("a mixture needs at least one component".into()));
        }
        if weights.len() != k || prior_weights.len() != k || initial.len() != k {
            return Err(Error::Dimension {
                expected: k,
                found: weights.len().min(prior_weights.len()).min(initial.len()),
            });
        }
        let dim = config.spatial_dim;
        if components
            .iter()
            .chain(&initial)
            .chain(std::iter::once(&prior))
            .any(|c| c.spatial.dim() != dim)
        {
            return Err(Error::InvalidArgument(
                "component dimension disagrees with the configuration".into(),
            ));
        }
        Ok(Self {
            config,
            components,
            weights,
            prior,
            prior_weights,
            initial,
        })
    }

    pub fn config(&self) -> &HyperParams {
        &self.config
    }

    pub fn spatial_dim(&self) -> usize {
        self.config.spatial_dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Prior shared by every component.
    pub fn prior(&self) -> &ComponentState {
        &self.prior
    }

    pub fn prior_weights(&self) -> &Dirichlet {
        &self.prior_weights
    }

    /// Initial posterior; rewritten only by component reassignment.
    pub fn initial_posterior(&self) -> &[ComponentState] {
        &self.initial
    }

    /// Σ_k (α_k − α_{0,k}): total responsibility mass absorbed so far.
    pub fn absorbed_mass(&self) -> f64 {
        self.weights
            .alpha
            .iter()
            .zip(&self.prior_weights.alpha)
            .map(|(a, a0)| a - a0)
            .sum()
    }

    /// Whether component `k` has absorbed any responsibility.
    pub fn has_evidence(&self, k: usize) -> bool {
        self.weights.alpha[k] > self.prior_weights.alpha[k]
    }

    pub fn used_components(&self) -> usize {
        (0..self.num_components())
            .filter(|&k| self.has_evidence(k))
            .count()
    }

    /// Moves component `k`'s initial posterior to new spatial and color means.
    /// The live posterior follows unless the component already holds some
    /// (tolerably small) evidence, which is kept.
    pub(crate) fn reinitialize_component(
        &mut self,
        k: usize,
        spatial_mean: &[f64],
        color_mean: &[f64],
    ) -> Result<()> {
        let cfg = &self.config;
        let comp = ComponentState::new(
            cfg.spatial_dim,
            spatial_mean,
            cfg.init_spatial_kappa,
            cfg.init_spatial_scale,
            cfg.init_spatial_dof,
            color_mean,
            cfg.init_color_kappa,
            cfg.epsilon,
        )
        .map_err(|e| e.in_component(k))?;
        if !self.has_evidence(k) {
            self.components[k] = comp.clone();
        }
        self.initial[k] = comp;
        Ok(())
    }

    /// Adds one batch of statistics (conjugate natural-parameter update).
    ///
    /// Components with zero mass are untouched. A component receiving its
    /// first evidence starts from the prior, so after any sequence of updates
    /// a used component holds `prior + Σ_t Σ_n γ·T(x)`.
    pub fn apply_update(&mut self, delta: &SufficientStatsDelta) -> Result<()> {
        let k_total = self.num_components();
        if delta.num_components() != k_total {
            return Err(Error::Dimension {
                expected: k_total,
                found: delta.num_components(),
            });
        }
        if delta.dim() != self.spatial_dim() {
            return Err(Error::Dimension {
                expected: self.spatial_dim(),
                found: delta.dim(),
            });
        }
        let mut updated = Vec::new();
        for k in 0..k_total {
            let mass = delta.mass[k];
            if mass <= 0.0 {
                continue;
            }
            let mut comp = if self.has_evidence(k) {
                self.components[k].clone()
            } else {
                self.prior.clone()
            };
            comp.absorb(delta, k);
            comp.check(k)?;
            updated.push((k, comp));
        }
        for (k, comp) in updated {
            self.components[k] = comp;
            self.weights.alpha[k] += delta.mass[k];
        }
        Ok(())
    }
}

/// Builds the prior, the initial posterior and the starting state.
pub fn init_model<R: Rng + ?Sized>(
    cfg: &HyperParams,
    components: usize,
    data: Option<&DataBatch>,
    rng: &mut R,
) -> Result<MixtureState> {
    cfg.validate()?;
    if components == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let dim = cfg.spatial_dim;
    let prior = ComponentState::new(
        dim,
        &vec![cfg.prior_spatial_mean; dim],
        cfg.prior_spatial_kappa,
        cfg.prior_spatial_scale,
        cfg.prior_spatial_dof,
        &[cfg.prior_color_mean; 3],
        cfg.prior_color_kappa,
        cfg.epsilon,
    )?;
    let alpha = cfg.alpha_for(components);
    let prior_weights = Dirichlet::symmetric(components, alpha)?;

    let means: Vec<(Vec<f64>, [f64; 3])> = match cfg.init_mode {
        InitMode::Data => {
            let data = data
                .filter(|d| !d.is_empty())
                .ok_or_else(|| Error::InvalidArgument("data initialization needs a non-empty batch".into()))?;
            if data.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: data.dim(),
                });
            }
            let n = data.len();
            let picks: Vec<usize> = if n >= components {
                rand::seq::index::sample(rng, n, components).into_vec()
            } else {
                (0..components).map(|_| rng.random_range(0..n)).collect()
            };
            picks
                .into_iter()
                .map(|i| {
                    let c = data.color(i);
                    (data.spatial(i).to_vec(), [c[0], c[1], c[2]])
                })
                .collect()
        }
        InitMode::Random => (0..components)
            .map(|_| {
                let s = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
                (s, [0.0; 3])
            })
            .collect(),
    };

    let initial = means
        .iter()
        .enumerate()
        .map(|(k, (s, c))| {
            ComponentState::new(
                dim,
                s,
                cfg.init_spatial_kappa,
                cfg.init_spatial_scale,
                cfg.init_spatial_dof,
                c,
                cfg.init_color_kappa,
                cfg.epsilon,
            )
            .map_err(|e| e.in_component(k))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MixtureState {
        config: cfg.clone(),
        components: initial.clone(),
        weights: prior_weights.clone(),
        prior,
        prior_weights,
        initial,
    })
}

/// Row-stochastic N×K assignment probabilities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    gamma: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(k: usize, gamma: Vec<f64>) -> Result<Self> {
        if k == 0 || !gamma.len().is_multiple_of(k) {
            return Err(Error::InvalidArgument(
                "responsibility matrix is not N×K".into(),
            ));
        }
        Ok(Self {
            n: gamma.len() / k,
            k,
            gamma,
        })
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.gamma
    }
}

/// Per-component weighted sufficient statistics of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStatsDelta {
    dim: usize,
    pub mass: Vec<f64>,
    /// K×D
    pub s_sum: Vec<f64>,
    /// K×D×D
    pub s_outer: Vec<f64>,
    /// K×3
    pub c_sum: Vec<f64>,
}

impl SufficientStatsDelta {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            dim,
            mass: vec![0.0; components],
            s_sum: vec![0.0; components * dim],
            s_outer: vec![0.0; components * dim * dim],
            c_sum: vec![0.0; components * 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn spatial_sum(&self, k: usize) -> &[f64] {
        &self.s_sum[k * self.dim..(k + 1) * self.dim]
    }

    pub fn spatial_outer(&self, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.s_outer[k * dd..(k + 1) * dd]
    }

    pub fn color_sum(&self, k: usize) -> &[f64] {
        &self.c_sum[k * 3..k * 3 + 3]
    }

    #[inline]
    fn add_point(&mut self, k: usize, weight: f64, s: &[f64], c: &[f64]) {
        let d = self.dim;
        self.mass[k] += weight;
        let sum = &mut self.s_sum[k * d..(k + 1) * d];
        for i in 0..d {
            sum[i] += weight * s[i];
        }
        let outer = &mut self.s_outer[k * d * d..(k + 1) * d * d];
        for i in 0..d {
            let ws = weight * s[i];
            for j in 0..d {
                outer[i * d + j] += ws * s[j];
            }
        }
        let cs = &mut self.c_sum[k * 3..k * 3 + 3];
        for i in 0..3 {
            cs[i] += weight * c[i];
        }
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &SufficientStatsDelta) {
        debug_assert_eq!(self.mass.len(), other.mass.len());
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        for (a, b) in self.s_sum.iter_mut().zip(&other.s_sum) {
            *a += b;
        }
        for (a, b) in self.s_outer.iter_mut().zip(&other.s_outer) {
            *a += b;
        }
        for (a, b) in self.c_sum.iter_mut().zip(&other.c_sum) {
            *a += b;
        }
    }
}

/// Per-component terms of the assignment logits, precomputed once per step:
///
/// logit_k(s, c) = E[log N(s | μ_k, Σ_k)] + E[log N(c | μ_{c,k}, εI)] + E[log π_k]
pub struct AssignmentTable {
    dim: usize,
    spatial: Vec<NiwLogLikelihood>,
    color_mean: Vec<[f64; 3]>,
    inv_two_eps: Vec<f64>,
    constant: Vec<f64>,
}

impl AssignmentTable {
    pub fn new(components: &[ComponentState], weights: &Dirichlet) -> Result<Self> {
        let elog_pi = weights.expected_log();
        let mut spatial = Vec::with_capacity(components.len());
        let mut color_mean = Vec::with_capacity(components.len());
        let mut inv_two_eps = Vec::with_capacity(components.len());
        let mut constant = Vec::with_capacity(components.len());
        for (k, comp) in components.iter().enumerate() {
            let terms = comp
                .spatial
                .log_likelihood_terms()
                .map_err(|e| e.in_component(k))?;
            let eps = comp.color.epsilon;
            let color_const =
                -1.5 * (2.0 * std::f64::consts::PI * eps).ln() - 1.5 / comp.color.kappa;
            constant.push(terms.constant + color_const + elog_pi[k]);
            let m = comp.color.mean;
            color_mean.push([m[0], m[1], m[2]]);
            inv_two_eps.push(0.5 / eps);
            spatial.push(terms);
        }
        Ok(Self {
            dim: components.first().map_or(0, |c| c.spatial.dim()),
            spatial,
            color_mean,
            inv_two_eps,
            constant,
        })
    }

    pub fn num_components(&self) -> usize {
        self.constant.len()
    }

    /// Writes the K unnormalized log-responsibilities of one point.
    #[inline]
    pub fn logits(&self, s: &[f64], c: &[f64], out: &mut [f64]) {
        for k in 0..self.constant.len() {
            let m = &self.color_mean[k];
            let dc = (c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2) + (c[2] - m[2]).powi(2);
            out[k] = self.constant[k]
                - 0.5 * self.spatial[k].mahalanobis_sq(s)
                - dc * self.inv_two_eps[k];
        }
    }

    /// Turns logits into a normalized, floored row in place; returns log Z.
    #[inline]
    fn normalize_row(row: &mut [f64]) -> f64 {
        let log_z = logsumexp(row);
        let mut total = 0.0;
        for v in row.iter_mut() {
            let p = (*v - log_z).exp();
            *v = if p < RESPONSIBILITY_FLOOR { 0.0 } else { p };
            total += *v;
        }
        if total > 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        log_z
    }

    /// Assigns and accumulates in one pass without materializing γ.
    /// Returns the statistics and Σ_n log Z_n.
    pub fn accumulate(&self, batch: &DataBatch) -> (SufficientStatsDelta, f64) {
        let k = self.num_components();
        let dim = self.dim.max(batch.dim());
        let partials = map_chunks(batch.len(), CHUNK, |range| {
            let mut stats = SufficientStatsDelta::zeros(k, dim);
            let mut row = vec![0.0; k];
            let mut log_z = 0.0;
            for i in range {
                let (s, c) = (batch.spatial(i), batch.color(i));
                self.logits(s, c, &mut row);
                log_z += Self::normalize_row(&mut row);
                for (j, &g) in row.iter().enumerate() {
                    if g > 0.0 {
                        stats.add_point(j, g, s, c);
                    }
                }
            }
            (stats, log_z)
        });
        let mut total = SufficientStatsDelta::zeros(k, dim);
        let mut log_z = 0.0;
        for (stats, lz) in &partials {
            total.merge(stats);
            log_z += lz;
        }
        (total, log_z)
    }

    /// log Z_n for each point.
    pub fn log_evidence(&self, batch: &DataBatch) -> Vec<f64> {
        let k = self.num_components();
        let parts = map_chunks(batch.len(), CHUNK, |range| {
            let mut row = vec![0.0; k];
            range
                .map(|i| {
                    self.logits(batch.spatial(i), batch.color(i), &mut row);
                    logsumexp(&row)
                })
                .collect::<Vec<f64>>()
        });
        parts.concat()
    }
}

fn check_batch(state: &MixtureState, batch: &DataBatch) -> Result<()> {
    if !batch.is_empty() && batch.dim() != state.spatial_dim() {
        return Err(Error::Dimension {
            expected: state.spatial_dim(),
            found: batch.dim(),
        });
    }
    Ok(())
}

fn reference_table(state: &MixtureState, use_initial: bool) -> Result<AssignmentTable> {
    if use_initial {
        AssignmentTable::new(&state.initial, &state.prior_weights)
    } else {
        AssignmentTable::new(&state.components, &state.weights)
    }
}

/// Responsibilities of every point. With `use_initial`, logits are taken
/// against the frozen initial posterior (streaming mode); otherwise against
/// the current posterior (batch coordinate ascent).
pub fn compute_assignments(
    reference: &MixtureState,
    batch: &DataBatch,
    use_initial: bool,
) -> Result<Responsibilities> {
    check_batch(reference, batch)?;
    let table = reference_table(reference, use_initial)?;
    let k = table.num_components();
    let mut gamma = vec![0.0; batch.len() * k];
    let rows_per_block = CHUNK;
    for_each_row_block(&mut gamma, k, rows_per_block, |first, block| {
        for (offset, row) in block.chunks_mut(k).enumerate() {
            let i = first + offset;
            table.logits(batch.spatial(i), batch.color(i), row);
            AssignmentTable::normalize_row(row);
        }
    });
    Ok(Responsibilities {
        n: batch.len(),
        k,
        gamma,
    })
}

/// Weighted sufficient statistics Σ_n γ_{k,n}·(1, s, s·sᵀ, c).
pub fn accumulate_stats(batch: &DataBatch, gamma: &Responsibilities) -> Result<SufficientStatsDelta> {
    if gamma.num_points() != batch.len() {
        return Err(Error::InvalidArgument(format!(
            "{} responsibility rows for {} points",
            gamma.num_points(),
            batch.len()
        )));
    }
    let k = gamma.num_components();
    let dim = batch.dim();
    let partials = map_chunks(batch.len(), CHUNK, |range| {
        let mut stats = SufficientStatsDelta::zeros(k, dim);
        for i in range {
            let (s, c) = (batch.spatial(i), batch.color(i));
            for (j, &g) in gamma.row(i).iter().enumerate() {
                if g > 0.0 {
                    stats.add_point(j, g, s, c);
                }
            }
        }
        stats
    });
    let mut total = SufficientStatsDelta::zeros(k, dim);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}

/// Streaming update: assignments against the initial posterior, then a
/// conjugate update of the live posterior.
pub fn streaming_update(state: &mut MixtureState, batch: &DataBatch) -> Result<()> {
    check_batch(state, batch)?;
    if batch.is_empty() {
        return Ok(());
    }
    let table = reference_table(state, true)?;
    let (delta, _) = table.accumulate(batch);
    state.apply_update(&delta)
}

/// log Z_n = log Σ_k exp(logit_k) under the current posterior.
pub fn per_point_log_evidence(state: &MixtureState, batch: &DataBatch) -> Result<Vec<f64>> {
    check_batch(state, batch)?;
    Ok(reference_table(state, false)?.log_evidence(batch))
}

/// KL(q(params) ‖ p(params)) summed over components and mixture weights.
pub fn parameter_kl(state: &MixtureState) -> Result<f64> {
    let mut kl = state.weights.kl_divergence(&state.prior_weights);
    for (k, comp) in state.components.iter().enumerate() {
        kl += comp
            .spatial
            .kl_divergence(&state.prior.spatial)
            .map_err(|e| e.in_component(k))?;
        kl += comp.color.kl_divergence(&state.prior.color);
    }
    Ok(kl)
}

/// Mean-field evidence lower bound with q(z) set to its optimum given the
/// parameter posteriors: Σ_n log Z_n − KL(q(params) ‖ p(params)).
///
/// This is the quantity the coordinate ascent maximizes; the sign is that of
/// an ordinary lower bound (≤ log evidence).
pub fn compute_elbo(state: &MixtureState, data: &DataBatch) -> Result<f64> {
    check_batch(state, data)?;
    let table = reference_table(state, false)?;
    let log_z: f64 = table.log_evidence(data).iter().sum();
    Ok(log_z - parameter_kl(state)?)
}

/// Batch coordinate ascent on `data`.
///
/// Each iteration computes assignments against the current posterior and
/// rebuilds every component that has ever received responsibility as
/// `prior + Σ γ·T(x)` over `data`; components that never did keep their
/// initial posterior. Evidence absorbed before the call is discarded, so
/// `data` must be the full data set. Returns the ELBO after every iteration.
pub fn cavi_fit(
    state: &MixtureState,
    data: &DataBatch,
    iters: usize,
) -> Result<(MixtureState, Vec<f64>)> {
    cavi_fit_observed(state, data, iters, |_, _, _| Ok(()))
}

/// [`cavi_fit`] that hands `observe` the iteration number (from 1), the
/// state and its ELBO after every iteration.
pub fn cavi_fit_observed<F>(
    state: &MixtureState,
    data: &DataBatch,
    iters: usize,
    mut observe: F,
) -> Result<(MixtureState, Vec<f64>)>
where
    F: FnMut(usize, &MixtureState, f64) -> Result<()>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    check_batch(state, data)?;
    let mut state = state.clone();
    let k_total = state.num_components();
    let mut touched: Vec<bool> = (0..k_total).map(|k| state.has_evidence(k)).collect();
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let table = reference_table(&state, false)?;
        let (delta, _) = table.accumulate(data);
        let mut components = Vec::with_capacity(k_total);
        for k in 0..k_total {
            touched[k] |= delta.mass[k] > 0.0;
            if touched[k] {
                let mut comp = state.prior.clone();
                comp.absorb(&delta, k);
                comp.check(k)?;
                components.push(comp);
            } else {
                components.push(state.components[k].clone());
            }
        }
        state.components = components;
        let mut alpha = state.prior_weights.alpha.clone();
        for (a, m) in alpha.iter_mut().zip(&delta.mass) {
            *a += m;
        }
        state.weights = Dirichlet { alpha };
        let elbo = compute_elbo(&state, data)?;
        trace.push(elbo);
        observe(trace.len(), &state, elbo)?;
    }
    Ok((state, trace))
}
