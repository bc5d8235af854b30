//! Back-projection of RGBD frames into world-space colored points.

use nalgebra::Vector3;

use crate::io::image::DepthMap;
use crate::model::DataBatch;
use crate::render::{Camera, ImageBuffer};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RgbdFrame {
    pub color: ImageBuffer,
    pub depth: DepthMap,
    pub camera: Camera,
}

impl RgbdFrame {
    pub fn new(color: ImageBuffer, depth: DepthMap, camera: Camera) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        if color.width != w || color.height != h || depth.width != w || depth.height != h {
            return Err(Error::InvalidArgument(format!(
                "frame sizes disagree: color {}x{}, depth {}x{}, camera {w}x{h}",
                color.width, color.height, depth.width, depth.height
            )));
        }
        Ok(Self {
            color,
            depth,
            camera,
        })
    }
}

/// One world point per pixel with positive finite depth; colors on the
/// 0–255 scale.
pub fn rgbd_to_pointcloud(frame: &RgbdFrame) -> DataBatch {
    let cam = &frame.camera;
    let (w, h) = (frame.depth.width, frame.depth.height);
    let mut out = DataBatch::with_capacity(3, w * h);
    for v in 0..h {
        for u in 0..w {
            let d = frame.depth.data[v * w + u];
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let p_cam = Vector3::new(
                (u as f64 - cam.cx) * d / cam.fx,
                (v as f64 - cam.cy) * d / cam.fy,
                d,
            );
            let p = cam.camera_to_world(&p_cam);
            let c = frame.color.pixel(v, u);
            out.push(p.as_slice(), &[c[0] * 255.0, c[1] * 255.0, c[2] * 255.0]);
        }
    }
    out
}
