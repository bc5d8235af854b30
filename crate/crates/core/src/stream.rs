//! Continual learning: one conjugate update per incoming batch, plus
//! relocation of unused components onto poorly explained points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{per_point_log_evidence, streaming_update, DataBatch, MixtureState};

/// Added to the shifted scores so that equally explained points still form a
/// proper sampling distribution.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct StreamSession {
    pub state: MixtureState,
    pub step: u64,
    pub reassign_fraction: f64,
    pub unused_tolerance: f64,
    pub rng: ChaCha8Rng,
}

impl StreamSession {
    /// Session with fraction, tolerance and seed taken from the state's config.
    pub fn new(state: MixtureState) -> Self {
        let cfg = state.config();
        let (fraction, tau, seed) = (cfg.reassign_fraction, cfg.unused_tolerance, cfg.seed);
        Self {
            state,
            step: 0,
            reassign_fraction: fraction,
            unused_tolerance: tau,
            // offset so the stream does not replay the initialization draws
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
        }
    }

    /// Processes one batch. With `reassign`, unused components are relocated
    /// before the assignments are computed.
    pub fn step(&mut self, batch: &DataBatch, reassign: bool) -> Result<()> {
        if !batch.is_empty() {
            if reassign {
                self.reassign(batch)?;
            }
            streaming_update(&mut self.state, batch)?;
        }
        self.step += 1;
        Ok(())
    }

    /// Moves `ceil(fraction·|U|)` unused components onto batch points drawn
    /// with probability proportional to their shifted negative log evidence.
    /// Returns the moved component indices.
    pub fn reassign(&mut self, batch: &DataBatch) -> Result<Vec<usize>> {
        reassign_components(
            &mut self.state,
            batch,
            self.reassign_fraction,
            self.unused_tolerance,
            &mut self.rng,
        )
    }
}

/// Components whose concentration grew by at most `tau` over the prior.
pub fn find_unused(state: &MixtureState, tau: f64) -> Vec<usize> {
    let prior = &state.prior_weights().alpha;
    state
        .weights
        .alpha
        .iter()
        .zip(prior)
        .enumerate()
        .filter(|(_, (a, a0))| *a - *a0 <= tau)
        .map(|(k, _)| k)
        .collect()
}

/// Sampling weights over the points of `batch`: −log Z_n shifted so the
/// best explained point gets `SCORE_FLOOR`, normalized to sum to one.
pub fn reassignment_scores(state: &MixtureState, batch: &DataBatch) -> Result<Vec<f64>> {
    let log_z = per_point_log_evidence(state, batch)?;
    let max = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scores: Vec<f64> = log_z.iter().map(|&l| max - l + SCORE_FLOOR).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        // an infinitely badly explained point takes all the weight
        for s in scores.iter_mut() {
            *s = if s.is_infinite() { 1.0 } else { 0.0 };
        }
    }
    let total: f64 = scores.iter().sum();
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(scores)
}

/// Draws `n` distinct indices with probabilities proportional to `weights`,
/// equivalent to sequential draws without replacement.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &[f64],
    n: usize,
) -> Vec<usize> {
    // Efraimidis–Spirakis: keep the n largest ln(u)/w
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>();
            // u ∈ [0, 1); ln(0) = −∞ ranks last, which is the right limit
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(n);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Relocates unused components; see [`StreamSession::reassign`].
pub fn reassign_components<R: Rng + ?Sized>(
    state: &mut MixtureState,
    batch: &DataBatch,
    fraction: f64,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "reassign fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let unused = find_unused(state, tau);
    let n = ((fraction * unused.len() as f64).ceil() as usize)
        .min(unused.len())
        .min(batch.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    let scores = reassignment_scores(state, batch)?;
    let points = weighted_sample_without_replacement(rng, &scores, n);
    let moved: Vec<usize> = unused[..points.len()].to_vec();
    for (&k, &i) in moved.iter().zip(&points) {
        state.reinitialize_component(k, batch.spatial(i), batch.color(i))?;
    }
    Ok(moved)
}
