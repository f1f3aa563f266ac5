//! Images, raster I/O and fixed colorspace conversions.

mod color;
mod image;
mod io;

pub use self::color::{
    cvd_simulate, mat3_mul, mat3_mul_vec, rgb_pixel_to_xy, rgb_to_luma, rgb_to_xy_chroma,
    white_point_xy, xy_luminance_to_rgb, CvdKind, CvdTransform, Mat3, CHROMA_EPS, LUMA_WEIGHTS,
    RGB_TO_LMS, RGB_TO_XYZ,
};
pub use self::image::{normalize_channels, resize_longside, Image};
pub use self::io::{decode, load_image, save_image};
