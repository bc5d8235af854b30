//! Image files (binary PPM, PNG, 16-bit PGM depth) and image ↔ point batches.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DataBatch;
use crate::render::ImageBuffer;

/// One point per pixel: s = (row, col) in pixels, c = RGB on the 0–255 scale.
pub fn image_to_batch(img: &ImageBuffer) -> DataBatch {
    region_to_batch(img, 0..img.height, 0..img.width)
}

fn region_to_batch(
    img: &ImageBuffer,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> DataBatch {
    let mut b = DataBatch::with_capacity(2, rows.len() * cols.len());
    for r in rows {
        for c in cols.clone() {
            let p = img.pixel(r, c);
            b.push(&[r as f64, c as f64], &[p[0] * 255.0, p[1] * 255.0, p[2] * 255.0]);
        }
    }
    b
}

/// Scatters points back to their nearest pixel; pixels that receive no
/// point stay black.
pub fn batch_to_image(batch: &DataBatch, width: usize, height: usize) -> Result<ImageBuffer> {
    if !batch.is_empty() && batch.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: batch.dim(),
        });
    }
    let mut img = ImageBuffer::new(width, height);
    for i in 0..batch.len() {
        let s = batch.spatial(i);
        let (r, c) = (s[0].round(), s[1].round());
        if r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
            continue;
        }
        let col = batch.color(i);
        img.set_pixel(
            r as usize,
            c as usize,
            [col[0] / 255.0, col[1] / 255.0, col[2] / 255.0],
        );
    }
    Ok(img)
}

/// Splits an image into patches in row-major order. Edge patches are
/// smaller when the patch size does not divide the image.
pub fn patch_stream(img: &ImageBuffer, (ph, pw): (usize, usize)) -> Result<Vec<DataBatch>> {
    if ph == 0 || pw == 0 || ph > img.height || pw > img.width {
        return Err(Error::InvalidArgument(format!(
            "patch {ph}x{pw} does not fit a {}x{} image",
            img.height, img.width
        )));
    }
    let mut out = Vec::new();
    for r0 in (0..img.height).step_by(ph) {
        for c0 in (0..img.width).step_by(pw) {
            out.push(region_to_batch(
                img,
                r0..(r0 + ph).min(img.height),
                c0..(c0 + pw).min(img.width),
            ));
        }
    }
    Ok(out)
}

/// Header tokens of a netpbm file, skipping `#` comments; returns the
/// tokens, the comments and the offset of the first data byte.
fn netpbm_header(bytes: &[u8], count: usize) -> Result<(Vec<String>, Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        if i >= bytes.len() {
            return Err(Error::parse(i as u64, "truncated header"));
        }
        let b = bytes[i];
        if b == b'#' {
            let start = i + 1;
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            comments.push(String::from_utf8_lossy(&bytes[start..i]).trim().to_string());
        } else if b.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                i += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::parse(i as u64, "expected whitespace after header"));
    }
    Ok((tokens, comments, i + 1))
}

fn header_number(tok: &str, what: &str, offset: usize) -> Result<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::parse(offset as u64, format!("invalid {what} {tok:?}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let (tok, _, data_start) = netpbm_header(bytes, 4)?;
    if tok[0] != "P6" {
        return Err(Error::parse(0, format!("expected P6 magic, found {:?}", tok[0])));
    }
    let width = header_number(&tok[1], "width", 2)?;
    let height = header_number(&tok[2], "height", 2)?;
    let maxval = header_number(&tok[3], "maxval", 2)?;
    if maxval > 65535 {
        return Err(Error::parse(2, format!("maxval {maxval} out of range")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * 3 * bps;
    let raster = &bytes[data_start..];
    if raster.len() < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("raster truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let scale = maxval as f64;
    let data = if bps == 1 {
        raster[..need].iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / scale)
            .collect()
    };
    Ok(ImageBuffer {
        width,
        height,
        data,
    })
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_rgb8());
    out
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = fs::File::open(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(0, format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(0, format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::parse(0, "unexpanded palette image"));
        }
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        match channels {
            1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    ImageBuffer::from_rgb8(w, h, &rgb)
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&img.to_rgb8())
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a PNG or PPM, chosen by extension.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    if is_png(path) {
        read_png(path)
    } else {
        read_ppm(path)
    }
}

/// Writes a PNG or PPM, chosen by extension.
pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    if is_png(path) {
        write_png(path, img)
    } else {
        write_ppm(path, img)
    }
}

/// Depth map in scene units; 0 or NaN marks missing depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// 16-bit binary PGM; depth = raw value · scale, where the scale comes from a
/// `# depth_scale <value>` header comment (default 0.001). Raw 0 is missing.
pub fn decode_depth_pgm(bytes: &[u8]) -> Result<DepthMap> {
    let (tok, comments, data_start) = netpbm_header(bytes, 4)?;
    if tok[0] != "P5" {
        return Err(Error::parse(0, format!("expected P5 magic, found {:?}", tok[0])));
    }
    let width = header_number(&tok[1], "width", 2)?;
    let height = header_number(&tok[2], "height", 2)?;
    let maxval = header_number(&tok[3], "maxval", 2)?;
    let mut scale = 1e-3;
    for c in &comments {
        if let Some(v) = c.strip_prefix("depth_scale") {
            scale = v
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|s| *s > 0.0 && s.is_finite())
                .ok_or_else(|| Error::parse(0, format!("invalid depth_scale {:?}", v.trim())))?;
        }
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let raster = &bytes[data_start..];
    if raster.len() < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("raster truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let data = if bps == 1 {
        raster[..need].iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale)
            .collect()
    };
    Ok(DepthMap {
        width,
        height,
        data,
    })
}

pub fn encode_depth_pgm(depth: &DepthMap, scale: f64) -> Vec<u8> {
    let mut out = format!(
        "P5\n# depth_scale {scale}\n{} {}\n65535\n",
        depth.width, depth.height
    )
    .into_bytes();
    for &d in &depth.data {
        let raw = if d.is_finite() && d > 0.0 {
            (d / scale).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&raw.to_be_bytes());
    }
    out
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth_pgm(&fs::read(path)?)
}

pub fn write_depth(path: &Path, depth: &DepthMap, scale: f64) -> Result<()> {
    fs::write(path, encode_depth_pgm(depth, scale))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_image(w: usize, h: usize) -> ImageBuffer {
        let bytes: Vec<u8> = (0..w * h * 3).map(|i| (i * 37 % 256) as u8).collect();
        ImageBuffer::from_rgb8(w, h, &bytes).unwrap()
    }

    #[test]
    fn tiny_image_points() {
        let b = image_to_batch(&sample_image(2, 2));
        assert_eq!(b.len(), 4);
        let coords: Vec<&[f64]> = (0..4).map(|i| b.spatial(i)).collect();
        assert_eq!(coords, vec![&[0.0, 0.0][..], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let flat = image_to_batch(&ImageBuffer::filled(3, 2, [0.2, 0.4, 0.6]));
        assert!((0..6).all(|i| flat.color(i) == flat.color(0)));
    }

    #[test]
    fn batch_image_round_trip() {
        let img = sample_image(7, 5);
        let back = batch_to_image(&image_to_batch(&img), 7, 5).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn patches_partition_the_image() {
        let img = sample_image(64, 64);
        let patches = patch_stream(&img, (8, 8)).unwrap();
        assert_eq!(patches.len(), 64);
        assert!(patches.iter().all(|p| p.len() == 64));
        assert_eq!(patch_stream(&img, (1, 1)).unwrap().len(), 64 * 64);
        assert!(patch_stream(&img, (65, 8)).is_err());

        let odd = sample_image(10, 7);
        let patches = patch_stream(&odd, (3, 4)).unwrap();
        let mut all: Vec<(u64, u64)> = patches
            .iter()
            .flat_map(|p| (0..p.len()).map(move |i| (p.spatial(i)[0] as u64, p.spatial(i)[1] as u64)))
            .collect();
        all.sort();
        let mut want: Vec<(u64, u64)> = (0..7).flat_map(|r| (0..10).map(move |c| (r, c))).collect();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn ppm_is_bit_exact() {
        let img = sample_image(5, 3);
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&back), bytes);
        let with_comment = b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03";
        assert_eq!(decode_ppm(with_comment).unwrap().to_rgb8(), vec![1, 2, 3]);
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00"), Err(Error::Parse { .. })));
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = sample_image(9, 4);
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap().to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn depth_round_trip_and_missing() {
        let d = DepthMap {
            width: 3,
            height: 1,
            data: vec![1.5, 0.0, f64::NAN],
        };
        let back = decode_depth_pgm(&encode_depth_pgm(&d, 1e-3)).unwrap();
        assert!((back.data[0] - 1.5).abs() < 1e-12);
        assert_eq!(&back.data[1..], &[0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u8>()) {
            let bytes: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(seed).wrapping_add(seed)).collect();
            let img = ImageBuffer::from_rgb8(w, h, &bytes).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap().to_rgb8(), bytes);
        }
    }
}
