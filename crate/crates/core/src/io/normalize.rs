//! Per-dimension standardization of spatial coordinates and colors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DataBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Sample mean and standard deviation of the data.
    Empirical,
    /// Mean and standard deviation of a uniform distribution over known ranges.
    Assumed,
}

/// Standard range of 8-bit color values.
pub const COLOR_RANGE: (f64, f64) = (0.0, 255.0);
/// Spatial range assumed for single objects.
pub const OBJECT_RANGE: (f64, f64) = (-1.0, 1.0);
/// Spatial range assumed for room-scale scenes.
pub const ROOM_RANGE: (f64, f64) = (-5.0, 5.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    pub spatial_mean: Vec<f64>,
    pub spatial_std: Vec<f64>,
    pub color_mean: [f64; 3],
    pub color_std: [f64; 3],
}

fn uniform_moments((lo, hi): (f64, f64)) -> Result<(f64, f64)> {
    let std = (hi - lo) / 12f64.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "range [{lo}, {hi}] has zero or invalid width"
        )));
    }
    Ok((0.5 * (lo + hi), std))
}

fn sample_moments(values: &[f64], stride: usize, offset: usize) -> (f64, f64) {
    let n = values.len() / stride;
    let mean = (0..n).map(|i| values[i * stride + offset]).sum::<f64>() / n as f64;
    let var = (0..n)
        .map(|i| (values[i * stride + offset] - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

impl NormalizationSpec {
    /// Uniform-range statistics: mean = (min + max)/2, std = (max − min)/√12.
    pub fn assumed(spatial: &[(f64, f64)], color: [(f64, f64); 3]) -> Result<Self> {
        let mut spatial_mean = Vec::with_capacity(spatial.len());
        let mut spatial_std = Vec::with_capacity(spatial.len());
        for &r in spatial {
            let (m, s) = uniform_moments(r)?;
            spatial_mean.push(m);
            spatial_std.push(s);
        }
        let mut color_mean = [0.0; 3];
        let mut color_std = [0.0; 3];
        for i in 0..3 {
            (color_mean[i], color_std[i]) = uniform_moments(color[i])?;
        }
        Ok(Self {
            mode: NormalizationMode::Assumed,
            spatial_mean,
            spatial_std,
            color_mean,
            color_std,
        })
    }

    /// Pixel rows in [0, height], columns in [0, width], 8-bit colors.
    pub fn for_image(height: usize, width: usize) -> Result<Self> {
        Self::assumed(
            &[(0.0, height as f64), (0.0, width as f64)],
            [COLOR_RANGE; 3],
        )
    }

    /// Cube-shaped spatial range shared by every axis, 8-bit colors.
    pub fn for_volume(range: (f64, f64)) -> Result<Self> {
        Self::assumed(&[range; 3], [COLOR_RANGE; 3])
    }

    /// Per-dimension sample statistics; a constant dimension is an error.
    pub fn empirical(data: &DataBatch) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(
                "empirical normalization needs data".into(),
            ));
        }
        let d = data.dim();
        let mut spatial_mean = vec![0.0; d];
        let mut spatial_std = vec![0.0; d];
        for j in 0..d {
            (spatial_mean[j], spatial_std[j]) = sample_moments(data.spatial_values(), d, j);
        }
        let mut color_mean = [0.0; 3];
        let mut color_std = [0.0; 3];
        for j in 0..3 {
            (color_mean[j], color_std[j]) = sample_moments(data.color_values(), 3, j);
        }
        let spec = Self {
            mode: NormalizationMode::Empirical,
            spatial_mean,
            spatial_std,
            color_mean,
            color_std,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_mean.len() != self.spatial_std.len() {
            return Err(Error::InvalidArgument(
                "normalization mean and std lengths differ".into(),
            ));
        }
        for (i, s) in self.spatial_std.iter().chain(&self.color_std).enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "dimension {i} has zero variance; cannot normalize"
                )));
            }
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_mean.len()
    }

    fn check_dim(&self, batch: &DataBatch) -> Result<()> {
        if !batch.is_empty() && batch.dim() != self.spatial_dim() {
            return Err(Error::Dimension {
                expected: self.spatial_dim(),
                found: batch.dim(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, batch: &DataBatch) -> Result<DataBatch> {
        self.check_dim(batch)?;
        let mut out = batch.clone();
        let d = self.spatial_dim();
        for (i, v) in out.spatial_values_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.spatial_mean[j]) / self.spatial_std[j];
        }
        for (i, v) in out.color_values_mut().iter_mut().enumerate() {
            let j = i % 3;
            *v = (*v - self.color_mean[j]) / self.color_std[j];
        }
        Ok(out)
    }

    pub fn denormalize(&self, batch: &DataBatch) -> Result<DataBatch> {
        self.check_dim(batch)?;
        let mut out = batch.clone();
        let d = self.spatial_dim();
        for (i, v) in out.spatial_values_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = *v * self.spatial_std[j] + self.spatial_mean[j];
        }
        for (i, v) in out.color_values_mut().iter_mut().enumerate() {
            let j = i % 3;
            *v = *v * self.color_std[j] + self.color_mean[j];
        }
        Ok(out)
    }

    #[inline]
    pub fn normalize_spatial(&self, s: &[f64], out: &mut [f64]) {
        for j in 0..self.spatial_dim() {
            out[j] = (s[j] - self.spatial_mean[j]) / self.spatial_std[j];
        }
    }

    #[inline]
    pub fn denormalize_spatial(&self, s: &[f64], out: &mut [f64]) {
        for j in 0..self.spatial_dim() {
            out[j] = s[j] * self.spatial_std[j] + self.spatial_mean[j];
        }
    }

    #[inline]
    pub fn denormalize_color(&self, c: &[f64]) -> [f64; 3] {
        [
            c[0] * self.color_std[0] + self.color_mean[0],
            c[1] * self.color_std[1] + self.color_mean[1],
            c[2] * self.color_std[2] + self.color_mean[2],
        ]
    }
}
