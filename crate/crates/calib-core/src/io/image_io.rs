//! Loading and saving the 8-bit rasters the remap module warps. Formats
//! follow the file extension (PNG, or binary PGM/PPM); only 8-bit
//! single-channel and RGB images are accepted, never converted.

use super::FileError;
use crate::remap::Raster;
use image::{DynamicImage, GrayImage, ImageError, RgbImage};
use std::path::Path;

fn map_image_error(path: &Path, err: ImageError) -> FileError {
    match err {
        ImageError::IoError(source) => FileError::io(path, source),
        ImageError::Decoding(e) => FileError::parse(path, 0, e.to_string()),
        other => FileError::validation(path, 0, other.to_string()),
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster, FileError> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| map_image_error(path, e))?;
    let (width, height) = (decoded.width(), decoded.height());
    let (channels, data) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1u8, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3u8, buf.into_raw()),
        other => {
            return Err(FileError::validation(
                path,
                0,
                format!(
                    "unsupported pixel format {:?}: need 8-bit grayscale or RGB",
                    other.color()
                ),
            ))
        }
    };
    Raster::new(width, height, channels, data)
        .map_err(|e| FileError::validation(path, 0, e.to_string()))
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<(), FileError> {
    let path = path.as_ref();
    let result = match raster.channels {
        1 => GrayImage::from_raw(raster.width, raster.height, raster.data.clone())
            .expect("raster length invariant")
            .save(path),
        3 => RgbImage::from_raw(raster.width, raster.height, raster.data.clone())
            .expect("raster length invariant")
            .save(path),
        c => return Err(FileError::validation(path, 0, format!("unsupported channel count {c}"))),
    };
    result.map_err(|e| map_image_error(path, e))
}
