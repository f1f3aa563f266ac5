use crate::error::{Error, Result};

/// A dense multi-channel image.
///
/// Pixels are stored row-major, channels interleaved: the value of channel
/// `c` at `(x, y)` lives at `(y * width + x) * channels + c`. Values are
/// nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if channels == 0 {
            return Err(Error::InvalidParameter("image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * color.len())
            .collect();
        Image::new(width, height, color.len(), data)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                if px.len() != channels {
                    return Err(Error::channels(channels.to_string(), px.len()));
                }
                data.extend_from_slice(&px);
            }
        }
        Image::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Maps every pixel through `f`, producing an image with `out_channels`.
    pub fn map_pixels(&self, out_channels: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Image {
        let mut data = vec![0.0; self.pixel_count() * out_channels];
        for (src, dst) in self.pixels().zip(data.chunks_exact_mut(out_channels)) {
            f(src, dst);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: out_channels,
            data,
        }
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Result<Image> {
        if c >= self.channels {
            return Err(Error::InvalidParameter(format!(
                "channel {c} out of range for {}-channel image",
                self.channels
            )));
        }
        Ok(self.map_pixels(1, |s, d| d[0] = s[c]))
    }

    /// Extracts a contiguous range of channels.
    pub fn channel_range(&self, range: std::ops::Range<usize>) -> Result<Image> {
        if range.end > self.channels || range.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "channel range {range:?} invalid for {}-channel image",
                self.channels
            )));
        }
        let n = range.len();
        Ok(self.map_pixels(n, |s, d| d.copy_from_slice(&s[range.clone()])))
    }

    /// Stacks images with identical geometry along the channel axis.
    pub fn stack(parts: &[Image]) -> Result<Image> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to stack".into()))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::DimensionMismatch("stacked images differ in size".into()));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(w * h * channels);
        for i in 0..w * h {
            for p in parts {
                data.extend_from_slice(p.pixel(i));
            }
        }
        Image::new(w, h, channels, data)
    }

    /// Gathers the listed pixels into a new `width x height` image.
    pub fn gather(&self, indices: &[usize], width: usize, height: usize) -> Result<Image> {
        if indices.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} indices for a {width}x{height} image",
                indices.len()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.channels);
        for &i in indices {
            data.extend_from_slice(self.pixel(i));
        }
        Image::new(width, height, self.channels, data)
    }

    pub fn min_max(&self, c: usize) -> (f64, f64) {
        self.pixels().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[c]), hi.max(p[c]))
        })
    }
}

/// Resizes so that the long side is at most `max_side`, preserving aspect
/// ratio. Images already small enough are returned unchanged.
///
/// Sampling is bilinear at pixel centers, which averages 2x2 blocks for an
/// exact halving.
pub fn resize_longside(img: &Image, max_side: usize) -> Result<Image> {
    if max_side == 0 {
        return Err(Error::InvalidParameter("max_side must be >= 1".into()));
    }
    let long = img.width.max(img.height);
    if long <= max_side {
        return Ok(img.clone());
    }
    let scale = max_side as f64 / long as f64;
    let nw = ((img.width as f64 * scale).round() as usize).clamp(1, max_side);
    let nh = ((img.height as f64 * scale).round() as usize).clamp(1, max_side);
    Ok(resize_bilinear(img, nw, nh))
}

pub(crate) fn resize_bilinear(img: &Image, nw: usize, nh: usize) -> Image {
    let c = img.channels;
    let sx = img.width as f64 / nw as f64;
    let sy = img.height as f64 / nh as f64;
    let mut data = vec![0.0; nw * nh * c];
    let sample_axis = |pos: f64, len: usize| -> (usize, usize, f64) {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    for y in 0..nh {
        let (y0, y1, fy) = sample_axis((y as f64 + 0.5) * sy - 0.5, img.height);
        for x in 0..nw {
            let (x0, x1, fx) = sample_axis((x as f64 + 0.5) * sx - 0.5, img.width);
            let out = &mut data[(y * nw + x) * c..(y * nw + x + 1) * c];
            let (p00, p10) = (img.at(x0, y0), img.at(x1, y0));
            let (p01, p11) = (img.at(x0, y1), img.at(x1, y1));
            for k in 0..c {
                let top = p00[k] * (1.0 - fx) + p10[k] * fx;
                let bot = p01[k] * (1.0 - fx) + p11[k] * fx;
                out[k] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Image {
        width: nw,
        height: nh,
        channels: c,
        data,
    }
}

/// Min-max normalizes each channel independently to `[0, 1]`.
/// A constant channel becomes all zeros.
pub fn normalize_channels(img: &Image) -> Image {
    let ranges: Vec<(f64, f64)> = (0..img.channels).map(|c| img.min_max(c)).collect();
    img.map_pixels(img.channels, |s, d| {
        for (k, &(lo, hi)) in ranges.iter().enumerate() {
            let span = hi - lo;
            d[k] = if span > 0.0 {
                ((s[k] - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    })
}
