//! Fixed colorspace transforms: luma, xy chromaticity, and simulated
//! color-vision deficiencies.
//!
//! All transforms operate on the stored RGB values directly; there is no
//! sRGB linearization step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Rec. 709 / sRGB luminance weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// sRGB (D65) to CIE XYZ.
pub const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Below this X+Y+Z sum a pixel is treated as black and mapped to the
/// white point chromaticity.
pub const CHROMA_EPS: f64 = 1e-9;

pub type Mat3 = [[f64; 3]; 3];

pub fn mat3_mul_vec(m: &Mat3, v: &[f64]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn expect_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::channels("3", img.channels()));
    }
    Ok(())
}

pub fn rgb_to_luma(img: &Image) -> Result<Image> {
    expect_rgb(img)?;
    Ok(img.map_pixels(1, |s, d| {
        d[0] = LUMA_WEIGHTS[0] * s[0] + LUMA_WEIGHTS[1] * s[1] + LUMA_WEIGHTS[2] * s[2];
    }))
}

/// Chromaticity of the equal-energy RGB white under [`RGB_TO_XYZ`].
pub fn white_point_xy() -> [f64; 2] {
    xyz_to_xy(&mat3_mul_vec(&RGB_TO_XYZ, &[1.0, 1.0, 1.0]))
}

fn xyz_to_xy(xyz: &[f64; 3]) -> [f64; 2] {
    let sum = xyz[0] + xyz[1] + xyz[2];
    [xyz[0] / sum, xyz[1] / sum]
}

pub fn rgb_pixel_to_xy(rgb: &[f64]) -> [f64; 2] {
    let xyz = mat3_mul_vec(&RGB_TO_XYZ, rgb);
    if xyz[0] + xyz[1] + xyz[2] < CHROMA_EPS {
        white_point_xy()
    } else {
        xyz_to_xy(&xyz)
    }
}

pub fn rgb_to_xy_chroma(img: &Image) -> Result<Image> {
    expect_rgb(img)?;
    Ok(img.map_pixels(2, |s, d| d.copy_from_slice(&rgb_pixel_to_xy(s))))
}

fn invert3(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // cofactor transpose
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor * inv_det;
        }
    }
    out
}

/// Rebuilds RGB from xy chromaticity and a per-pixel luminance `Y`,
/// clipping to `[0, 1]`.
pub fn xy_luminance_to_rgb(xy: &Image, luminance: &Image) -> Result<Image> {
    if xy.channels() != 2 || luminance.channels() != 1 {
        return Err(Error::channels("2 (xy) and 1 (Y)", xy.channels()));
    }
    if xy.pixel_count() != luminance.pixel_count() {
        return Err(Error::DimensionMismatch("xy and luminance differ in size".into()));
    }
    let inv = invert3(&RGB_TO_XYZ);
    let mut out = xy.map_pixels(3, |_, _| {});
    for i in 0..xy.pixel_count() {
        let c = xy.pixel(i);
        let y_lum = luminance.pixel(i)[0];
        let rgb = if c[1] > 1e-12 {
            let x_ = c[0] * y_lum / c[1];
            let z_ = (1.0 - c[0] - c[1]) * y_lum / c[1];
            mat3_mul_vec(&inv, &[x_, y_lum, z_])
        } else {
            [0.0; 3]
        };
        for (d, v) in out.pixel_mut(i).iter_mut().zip(rgb) {
            *d = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Dichromat type simulated by a [`CvdTransform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvdKind {
    Protanopia,
    Deuteranopia,
    Tritanopia,
}

impl fmt::Display for CvdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvdKind::Protanopia => "protan",
            CvdKind::Deuteranopia => "deutan",
            CvdKind::Tritanopia => "tritan",
        })
    }
}

impl FromStr for CvdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "protan" | "protanopia" => Ok(CvdKind::Protanopia),
            "deutan" | "deuteranopia" => Ok(CvdKind::Deuteranopia),
            "tritan" | "tritanopia" => Ok(CvdKind::Tritanopia),
            other => Err(Error::Config(format!("unknown cvd kind '{other}'"))),
        }
    }
}

/// RGB to LMS cone response matrix used to derive the dichromat
/// projections (Viénot, Brettel & Mollon 1999; the same matrix as the
/// widely circulated "daltonize" code).
pub const RGB_TO_LMS: Mat3 = [
    [17.8824, 43.5161, 4.11935],
    [3.45565, 27.1554, 3.86714],
    [0.0299566, 0.184309, 1.46709],
];

// The three matrices below are RGB-domain composites LMS->RGB * P * RGB->LMS,
// where P replaces the missing cone response by a combination of the other
// two. P is chosen so that white and one anchor primary are perceived
// unchanged: blue for protanopia and deuteranopia, red for tritanopia.
// Every matrix is idempotent with unit row sums. `tests::matrices_match_lms_derivation`
// recomputes them from RGB_TO_LMS.

const PROTANOPIA: Mat3 = [
    [0.11238291977156371, 0.8876170802284341, 0.0],
    [0.112382919771564, 0.8876170802284364, 0.0],
    [0.004005757155589624, -0.004005757155589618, 1.0],
];

const DEUTERANOPIA: Mat3 = [
    [0.2927500161584964, 0.7072499838415021, 0.0],
    [0.2927500161584969, 0.7072499838415033, 0.0],
    [-0.022336501415870895, 0.022336501415870853, 1.0],
];

const TRITANOPIA: Mat3 = [
    [1.0, 0.14461317079053598, -0.14461317079053704],
    [0.0, 0.8592354944616942, 0.14076450553830602],
    [0.0, 0.859235494461694, 0.140764505538306],
];

/// A linear simulation of dichromatic vision, `x -> A x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvdTransform {
    pub kind: Option<CvdKind>,
    pub matrix: Mat3,
}

impl CvdTransform {
    pub fn new(kind: CvdKind) -> Self {
        let matrix = match kind {
            CvdKind::Protanopia => PROTANOPIA,
            CvdKind::Deuteranopia => DEUTERANOPIA,
            CvdKind::Tritanopia => TRITANOPIA,
        };
        CvdTransform {
            kind: Some(kind),
            matrix,
        }
    }

    pub fn from_matrix(matrix: Mat3) -> Self {
        CvdTransform { kind: None, matrix }
    }

    pub fn apply_pixel(&self, rgb: &[f64]) -> [f64; 3] {
        mat3_mul_vec(&self.matrix, rgb)
    }
}

/// Simulates how a dichromat perceives `img`; outputs are clipped to `[0, 1]`.
pub fn cvd_simulate(img: &Image, t: &CvdTransform) -> Result<Image> {
    expect_rgb(img)?;
    Ok(img.map_pixels(3, |s, d| {
        let v = t.apply_pixel(s);
        for k in 0..3 {
            d[k] = v[k].clamp(0.0, 1.0);
        }
    }))
}
