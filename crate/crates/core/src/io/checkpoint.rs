//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "VBGS" | version u8 | spatial dim u8 | K u32 | step u64
//! | config JSON (u32 length + bytes) | normalization JSON (u32 length + bytes)
//! | prior component | prior α[K] | initial components[K] | components[K] | α[K]
//! | CRC32 of everything above
//! ```
//!
//! A component is eta1[D], eta2[D·D], nu1, nu2, color mean[3], color κ, ε.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::expfam::{ColorPosterior, Dirichlet, NiwNatural};
use crate::io::NormalizationSpec;
use crate::model::{ComponentState, HyperParams, MixtureState};

pub const MAGIC: &[u8; 4] = b"VBGS";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: MixtureState,
    pub normalization: NormalizationSpec,
    pub step: u64,
}

fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_component(out: &mut Vec<u8>, c: &ComponentState) {
    put_f64s(out, c.spatial.eta1.iter().copied());
    // row-major; eta2 is symmetric but written in full for bit-exactness
    put_f64s(out, c.spatial.eta2.transpose().iter().copied());
    put_f64s(out, [c.spatial.nu1, c.spatial.nu2]);
    put_f64s(out, c.color.mean.iter().copied());
    put_f64s(out, [c.color.kappa, c.color.epsilon]);
}

fn put_json(out: &mut Vec<u8>, json: &str) {
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let st = &ck.state;
    let k = st.num_components();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(st.spatial_dim() as u8);
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    let cfg = serde_json::to_string(st.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_json(&mut out, &cfg);
    let norm = serde_json::to_string(&ck.normalization).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_json(&mut out, &norm);
    put_component(&mut out, st.prior());
    put_f64s(&mut out, st.prior_weights().alpha.iter().copied());
    for c in st.initial_posterior() {
        put_component(&mut out, c);
    }
    for c in &st.components {
        put_component(&mut out, c);
    }
    put_f64s(&mut out, st.weights.alpha.iter().copied());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "payload ends at byte {} but {} more were expected",
                self.bytes.len(),
                self.pos + n - self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        serde_json::from_slice(raw).map_err(|e| Error::Checkpoint(format!("bad embedded JSON: {e}")))
    }

    fn component(&mut self, d: usize) -> Result<ComponentState> {
        let eta1 = DVector::from_vec(self.f64s(d)?);
        let eta2 = DMatrix::from_row_slice(d, d, &self.f64s(d * d)?);
        let nu = self.f64s(2)?;
        let m = self.f64s(3)?;
        let rest = self.f64s(2)?;
        Ok(ComponentState {
            spatial: NiwNatural {
                eta1,
                eta2,
                nu1: nu[0],
                nu2: nu[1],
            },
            color: ColorPosterior {
                mean: Vector3::new(m[0], m[1], m[2]),
                kappa: rest[0],
                epsilon: rest[1],
            },
        })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < 5 {
        return Err(Error::Checkpoint("checksum mismatch (file truncated)".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {VERSION})",
            bytes[4]
        )));
    }
    if bytes.len() < 9 {
        return Err(Error::Checkpoint("checksum mismatch (file truncated)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch (corrupted or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 5 };
    let d = r.take(1)?[0] as usize;
    let k = r.u32()? as usize;
    let step = r.u64()?;
    let config: HyperParams = r.json()?;
    let normalization: NormalizationSpec = r.json()?;
    if config.spatial_dim != d || normalization.spatial_dim() != d {
        return Err(Error::Checkpoint("dimension header disagrees with the payload".into()));
    }
    let prior = r.component(d)?;
    let prior_alpha = r.f64s(k)?;
    let initial = (0..k).map(|_| r.component(d)).collect::<Result<Vec<_>>>()?;
    let components = (0..k).map(|_| r.component(d)).collect::<Result<Vec<_>>>()?;
    let alpha = r.f64s(k)?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let state = MixtureState::from_parts(
        config,
        components,
        Dirichlet { alpha },
        prior,
        Dirichlet { alpha: prior_alpha },
        initial,
    )?;
    Ok(Checkpoint {
        state,
        normalization,
        step,
    })
}

/// Writes atomically: a temporary file next to `path`, then a rename.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, streaming_update, DataBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fitted() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = DataBatch::new(3);
        for _ in 0..200 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            data.push(&s, &[rng.random::<f64>(), 0.1, -0.3]);
        }
        let cfg = HyperParams::volume(12);
        let mut st = init_model(&cfg, 12, Some(&data), &mut rng).unwrap();
        streaming_update(&mut st, &data).unwrap();
        Checkpoint {
            state: st,
            normalization: NormalizationSpec::for_volume((-1.0, 1.0)).unwrap(),
            step: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = fitted();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.vbgs");
        save_checkpoint(&ck, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), ck);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn truncated_or_corrupted_is_rejected() {
        let bytes = encode_checkpoint(&fitted()).unwrap();
        for cut in [5, 40, bytes.len() / 2, bytes.len() - 1] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum"), "{msg}"),
                other => panic!("{other:?}"),
            }
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checkpoint(_))));
        let mut version = bytes;
        version[4] = 9;
        match decode_checkpoint(&version) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
