//! Raster I/O.
//!
//! Supported formats:
//! - PNG, 8-bit gray or RGB (alpha is dropped, 16-bit is reduced to 8-bit)
//! - binary PGM (`P5`) and PPM (`P6`) with maxval <= 255
//! - `LMCH`, a float container for images with any number of channels:
//!   the magic `LMCH`, then width, height and channels as little-endian
//!   `u32`, then `width * height * channels` little-endian `f32` values in
//!   planar channel order.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const LMCH_MAGIC: &[u8; 4] = b"LMCH";
const PNG_MAGIC: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Pnm,
    Lmch,
}

fn format_from_extension(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(Format::Png),
        "pgm" | "ppm" | "pnm" => Ok(Format::Pnm),
        "lmch" => Ok(Format::Lmch),
        other => Err(Error::UnsupportedFormat(format!("extension '.{other}'"))),
    }
}

fn sniff(bytes: &[u8]) -> Result<Format> {
    if bytes.starts_with(PNG_MAGIC) {
        Ok(Format::Png)
    } else if bytes.starts_with(LMCH_MAGIC) {
        Ok(Format::Lmch)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        Ok(Format::Pnm)
    } else {
        Err(Error::UnsupportedFormat("unrecognized file signature".into()))
    }
}

/// Loads an image, mapping 8-bit samples to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    match sniff(bytes)? {
        Format::Png => decode_png(bytes),
        Format::Pnm => decode_pnm(bytes),
        Format::Lmch => decode_lmch(bytes),
    }
}

/// Writes `img` in the format implied by the file extension.
///
/// Raster formats take one or three channels quantized by `round(v * 255)`;
/// `.lmch` accepts any channel count.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format_from_extension(path)? {
        Format::Png => encode_png(img)?,
        Format::Pnm => encode_pnm(img)?,
        Format::Lmch => encode_lmch(img),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn raster_channels(img: &Image) -> Result<()> {
    match img.channels() {
        1 | 3 => Ok(()),
        c => Err(Error::channels("1 or 3", c)),
    }
}

fn from_u8(width: usize, height: usize, channels: usize, samples: &[u8]) -> Result<Image> {
    let data = samples.iter().map(|&s| f64::from(s) / 255.0).collect();
    Image::new(width, height, channels, data)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    use image::{DynamicImage, ImageFormat};
    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => from_u8(w, h, 1, dynimg.to_luma8().as_raw()),
        other => from_u8(w, h, 3, other.to_rgb8().as_raw()),
    }
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    use image::{ExtendedColorType, ImageEncoder};
    raster_channels(img)?;
    let samples: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&samples, img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(out)
}

/// Splits a PNM header into its four tokens, skipping `#` comments, and
/// returns the offset of the first sample byte.
fn pnm_header(bytes: &[u8]) -> Result<([usize; 3], bool, usize)> {
    let color = &bytes[..2] == b"P6";
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Malformed("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed("bad PNM header field".into()))?;
    }
    // exactly one whitespace byte separates header and raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Malformed("missing PNM header terminator".into()));
    }
    Ok((fields, color, pos + 1))
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let ([w, h, maxval], color, offset) = pnm_header(bytes)?;
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {maxval}")));
    }
    let channels = if color { 3 } else { 1 };
    let n = w * h * channels;
    let raster = bytes
        .get(offset..offset + n)
        .ok_or_else(|| Error::Malformed("truncated PNM raster".into()))?;
    let data = raster
        .iter()
        .map(|&s| f64::from(s) / maxval as f64)
        .collect();
    Image::new(w, h, channels, data)
}

fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    raster_channels(img)?;
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Malformed("truncated LMCH header".into()))
}

fn decode_lmch(bytes: &[u8]) -> Result<Image> {
    let (w, h, c) = (read_u32(bytes, 4)?, read_u32(bytes, 8)?, read_u32(bytes, 12)?);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    if c == 0 {
        return Err(Error::Malformed("LMCH with zero channels".into()));
    }
    let n = w * h;
    let body = bytes
        .get(16..16 + n * c * 4)
        .ok_or_else(|| Error::Malformed("truncated LMCH body".into()))?;
    let mut data = vec![0.0; n * c];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let v = f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Malformed(format!("LMCH sample {v} outside [0, 1]")));
        }
        // planar on disk, interleaved in memory
        let (channel, pixel) = (k / n, k % n);
        data[pixel * c + channel] = v;
    }
    Image::new(w, h, c, data)
}

fn encode_lmch(img: &Image) -> Vec<u8> {
    let (n, c) = (img.pixel_count(), img.channels());
    let mut out = Vec::with_capacity(16 + n * c * 4);
    out.extend_from_slice(LMCH_MAGIC);
    for v in [img.width(), img.height(), c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for channel in 0..c {
        for pixel in 0..n {
            out.extend_from_slice(&(img.data()[pixel * c + channel] as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_u8_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| f64::from(rng.random::<u8>()) / 255.0).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        // round(127.5) = 128
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn png_endpoints_load_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.png");
        let img = Image::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn two_channel_raster_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(2, 2, &[0.1, 0.2]).unwrap();
        assert!(matches!(
            save_image(&img, dir.path().join("x.png")),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(save_image(&img, dir.path().join("x.ppm")).is_err());
        // the float container takes any channel count
        save_image(&img, dir.path().join("x.lmch")).unwrap();
    }

    #[test]
    fn unknown_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_image(&p), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
        assert!(save_image(&Image::filled(1, 1, &[0.0]).unwrap(), dir.path().join("a.bmp")).is_err());
    }

    #[test]
    fn zero_dimension_pnm_rejected() {
        assert!(matches!(decode(b"P5\n0 3\n255\n"), Err(Error::EmptyImage)));
    }

    #[test]
    fn pnm_comments_and_maxval() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n15\n\x0f\x00";
        let img = decode(bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn lmch_layout_is_planar() {
        let img = Image::new(2, 1, 3, vec![0.0, 0.25, 0.5, 1.0, 0.75, 0.125]).unwrap();
        let bytes = encode_lmch(&img);
        assert_eq!(&bytes[..4], b"LMCH");
        assert_eq!(read_u32(&bytes, 4).unwrap(), 2);
        assert_eq!(read_u32(&bytes, 8).unwrap(), 1);
        assert_eq!(read_u32(&bytes, 12).unwrap(), 3);
        let f = |k: usize| f32::from_le_bytes(bytes[16 + 4 * k..20 + 4 * k].try_into().unwrap());
        // channel 0 of both pixels first
        assert_eq!((f(0), f(1)), (0.0, 1.0));
        assert_eq!((f(2), f(3)), (0.25, 0.75));
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn raster_round_trip_is_identity(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u64>(), ext in prop::sample::select(vec!["png", "pnm"])) {
            let c = if rgb { 3 } else { 1 };
            let img = random_u8_image(w, h, c, seed);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join(format!("img.{ext}"));
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
