//! Dense camera-to-camera pixel remapping and image warping.
//!
//! For every target pixel `u2`, the field stores
//! `map[u2] = project(unproject(u2, target), source)`: where to sample the
//! source image to synthesize the target camera's view. A cell is valid only
//! when the shared ray stays within the valid distortion radius of both
//! models and the source coordinate lands inside the source image.
//!
//! Fields serialize to a little-endian binary layout: magic `RMAP`,
//! u32 width, u32 height, then `width * height` row-major records of
//! (f32 src_x, f32 src_y, u8 valid). In memory coordinates stay f64; f32
//! only appears at the file boundary.

use crate::camera::CameraIntrinsics;
use crate::geometry::Pose;
use crate::PixelPoint;
use std::io::{Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"RMAP";

#[derive(Debug, Error)]
pub enum RemapError {
    #[error("image is {actual_w}x{actual_h} but the field expects {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    UnsupportedChannels(u8),
    #[error("not a remap field: bad magic")]
    BadMagic,
    #[error("corrupt remap field: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense per-target-pixel source coordinates with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapField {
    width: u32,
    height: u32,
    /// Source image size the field was built against; `None` when loaded
    /// from a file, which stores no source geometry.
    source_size: Option<(u32, u32)>,
    map: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl RemapField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.valid[self.index(u, v)]
    }

    /// Source coordinate for a valid target pixel, `None` otherwise.
    pub fn source_coord(&self, u: u32, v: u32) -> Option<[f64; 2]> {
        let i = self.index(u, v);
        self.valid[i].then(|| self.map[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn index(&self, u: u32, v: u32) -> usize {
        assert!(u < self.width && v < self.height, "pixel ({u}, {v}) out of field bounds");
        (v as usize) * (self.width as usize) + (u as usize)
    }

    /// Writes the binary representation. Coordinates are narrowed to f32.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), RemapError> {
        w.write_all(MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for (coord, valid) in self.map.iter().zip(&self.valid) {
            w.write_all(&(coord[0] as f32).to_le_bytes())?;
            w.write_all(&(coord[1] as f32).to_le_bytes())?;
            w.write_all(&[u8::from(*valid)])?;
        }
        Ok(())
    }

    /// Reads the binary representation written by [`write_to`](Self::write_to).
    pub fn read_from(mut r: impl Read) -> Result<RemapField, RemapError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RemapError::BadMagic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word);
        r.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word);
        let count = (width as usize)
            .checked_mul(height as usize)
            .filter(|c| *c <= (1 << 30))
            .ok_or_else(|| RemapError::Corrupt(format!("implausible size {width}x{height}")))?;
        let mut map = Vec::with_capacity(count);
        let mut valid = Vec::with_capacity(count);
        let mut record = [0u8; 9];
        for i in 0..count {
            r.read_exact(&mut record)
                .map_err(|e| RemapError::Corrupt(format!("truncated at record {i}: {e}")))?;
            let sx = f32::from_le_bytes(record[0..4].try_into().unwrap()) as f64;
            let sy = f32::from_le_bytes(record[4..8].try_into().unwrap()) as f64;
            let flag = match record[8] {
                0 => false,
                1 => true,
                other => {
                    return Err(RemapError::Corrupt(format!(
                        "validity flag {other} at record {i}"
                    )))
                }
            };
            map.push([sx, sy]);
            valid.push(flag);
        }
        Ok(RemapField { width, height, source_size: None, map, valid })
    }
}

/// Builds the dense map from the target pixel grid into the source image.
pub fn build_remap(source: &CameraIntrinsics, target: &CameraIntrinsics) -> RemapField {
    let source_r_max = source.max_valid_radius();
    let target_r_max = target.max_valid_radius();
    let identity = Pose::IDENTITY;
    let (sw, sh) = (source.width as f64, source.height as f64);

    let count = (target.width as usize) * (target.height as usize);
    let mut map = vec![[f64::NAN, f64::NAN]; count];
    let mut valid = vec![false; count];
    for v in 0..target.height {
        for u in 0..target.width {
            let i = (v as usize) * (target.width as usize) + (u as usize);
            let pixel = PixelPoint::new(u as f64, v as f64);
            // Rejects rays beyond the target's valid radius.
            let Ok(ray) = target.unproject_with_valid_radius(&pixel, target_r_max) else {
                continue;
            };
            let res = source.project_with_valid_radius(&ray, &identity, source_r_max);
            if !(res.in_front && res.within_valid_radius) {
                continue;
            }
            if res.pixel.u < 0.0 || res.pixel.u >= sw || res.pixel.v < 0.0 || res.pixel.v >= sh {
                continue;
            }
            map[i] = [res.pixel.u, res.pixel.v];
            valid[i] = true;
        }
    }
    RemapField {
        width: target.width,
        height: target.height,
        source_size: Some((source.width, source.height)),
        map,
        valid,
    }
}

/// Interleaved 8-bit raster, 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Raster, RemapError> {
        if channels != 1 && channels != 3 {
            return Err(RemapError::UnsupportedChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RemapError::Corrupt(format!(
                "raster data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster { width, height, channels, data })
    }

    fn sample(&self, x: i64, y: i64, c: usize) -> f64 {
        // Border taps clamp to the edge pixel.
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[(y * self.width as usize + x) * self.channels as usize + c] as f64
    }
}

/// Warps `image` into the target camera's view. Invalid cells are filled
/// with zeros; valid cells are bilinearly interpolated with clamped border
/// taps. The image must match the source dimensions the field was built
/// against (fields loaded from disk carry no source size and accept any).
pub fn warp_image(image: &Raster, field: &RemapField) -> Result<Raster, RemapError> {
    if let Some((sw, sh)) = field.source_size {
        if image.width != sw || image.height != sh {
            return Err(RemapError::DimensionMismatch {
                expected_w: sw,
                expected_h: sh,
                actual_w: image.width,
                actual_h: image.height,
            });
        }
    }
    let channels = image.channels as usize;
    let mut data = vec![0u8; field.width as usize * field.height as usize * channels];
    for v in 0..field.height {
        for u in 0..field.width {
            let i = (v as usize) * (field.width as usize) + (u as usize);
            let Some([sx, sy]) = field.source_coord(u, v) else {
                continue;
            };
            let x0 = sx.floor();
            let y0 = sy.floor();
            let dx = sx - x0;
            let dy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..channels {
                let top = image.sample(x0, y0, c) * (1.0 - dx) + image.sample(x0 + 1, y0, c) * dx;
                let bottom =
                    image.sample(x0, y0 + 1, c) * (1.0 - dx) + image.sample(x0 + 1, y0 + 1, c) * dx;
                let value = top * (1.0 - dy) + bottom * dy;
                data[i * channels + c] = value.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(Raster {
        width: field.width,
        height: field.height,
        channels: image.channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{sample_perturbed_params, PerturbationRanges};
    use crate::residuals::ParamBlock;

    fn small_camera() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 160.0,
            fy: 158.0,
            cx: 81.0,
            cy: 59.5,
            k1: -0.18,
            k2: 0.05,
            k3: -0.002,
            t1: 0.0008,
            t2: -0.0005,
            width: 160,
            height: 120,
        }
    }

    fn undistorted(cam: &CameraIntrinsics) -> CameraIntrinsics {
        CameraIntrinsics { k1: 0.0, k2: 0.0, k3: 0.0, t1: 0.0, t2: 0.0, ..*cam }
    }

    fn gradient_raster(w: u32, h: u32, channels: u8) -> Raster {
        let mut data = Vec::with_capacity(w as usize * h as usize * channels as usize);
        for y in 0..h {
            for x in 0..w {
                for c in 0..channels {
                    let value = (x as f64 * 200.0 / (w - 1) as f64
                        + y as f64 * 55.0 / (h - 1) as f64
                        + c as f64)
                        .min(255.0);
                    data.push(value as u8);
                }
            }
        }
        Raster::new(w, h, channels, data).unwrap()
    }

    #[test]
    fn self_remap_is_the_identity() {
        let cam = small_camera();
        let field = build_remap(&cam, &cam);
        assert!(field.valid_count() > 0);
        for v in 0..field.height() {
            for u in 0..field.width() {
                if let Some([sx, sy]) = field.source_coord(u, v) {
                    assert!(
                        (sx - u as f64).abs() < 1e-6 && (sy - v as f64).abs() < 1e-6,
                        "({u}, {v}) mapped to ({sx}, {sy})"
                    );
                }
            }
        }
    }

    #[test]
    fn principal_point_shift_yields_constant_offset_map() {
        let source = undistorted(&small_camera());
        // map[u2] = u2 + (cx_source - cx_target): shifting the target's
        // principal point moves every sample the opposite way.
        let target = CameraIntrinsics { cx: source.cx - 10.0, cy: source.cy + 4.0, ..source };
        let field = build_remap(&source, &target);
        assert!(field.valid_count() > 0);
        for v in 0..field.height() {
            for u in 0..field.width() {
                if let Some([sx, sy]) = field.source_coord(u, v) {
                    assert!((sx - (u as f64 + 10.0)).abs() < 1e-9);
                    assert!((sy - (v as f64 - 4.0)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn corners_beyond_source_valid_radius_are_masked() {
        // Wide-angle distortion-free target viewing through a strongly
        // barrel-distorted source: corner rays exceed the source's r_max.
        let target = CameraIntrinsics {
            fx: 300.0,
            fy: 300.0,
            cx: 319.5,
            cy: 239.5,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            t1: 0.0,
            t2: 0.0,
            width: 640,
            height: 480,
        };
        let source = CameraIntrinsics { k1: -0.3, width: 640, height: 480, ..target };
        assert!(source.max_valid_radius() < 1.2);
        let field = build_remap(&source, &target);
        assert!(!field.is_valid(0, 0));
        assert!(!field.is_valid(639, 479));
        assert!(field.is_valid(320, 240));
        assert!(field.valid_count() > 0);
    }

    #[test]
    fn valid_cells_never_contain_non_finite_coordinates() {
        let base = ParamBlock::new(small_camera(), crate::geometry::Pose::IDENTITY);
        let ranges = PerturbationRanges::default();
        for seed in 0..20u64 {
            let source = sample_perturbed_params(&base, &ranges, seed * 2 + 1).unwrap().intrinsics;
            let target = sample_perturbed_params(&base, &ranges, seed * 2 + 2).unwrap().intrinsics;
            let field = build_remap(&source, &target);
            for v in 0..field.height() {
                for u in 0..field.width() {
                    if let Some([sx, sy]) = field.source_coord(u, v) {
                        assert!(sx.is_finite() && sy.is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn literal_identity_field_preserves_the_image_bitwise() {
        let cam = small_camera();
        let count = cam.width as usize * cam.height as usize;
        let field = RemapField {
            width: cam.width,
            height: cam.height,
            source_size: Some((cam.width, cam.height)),
            map: (0..count)
                .map(|i| {
                    [
                        (i % cam.width as usize) as f64,
                        (i / cam.width as usize) as f64,
                    ]
                })
                .collect(),
            valid: vec![true; count],
        };
        for channels in [1u8, 3] {
            let image = gradient_raster(cam.width, cam.height, channels);
            let out = warp_image(&image, &field).unwrap();
            assert_eq!(out.data, image.data);
        }
    }

    #[test]
    fn constant_image_stays_constant_on_valid_pixels() {
        let cam = small_camera();
        let target = undistorted(&cam);
        let field = build_remap(&cam, &target);
        let image = Raster::new(
            cam.width,
            cam.height,
            1,
            vec![137u8; cam.width as usize * cam.height as usize],
        )
        .unwrap();
        let out = warp_image(&image, &field).unwrap();
        for v in 0..field.height() {
            for u in 0..field.width() {
                let value = out.data[(v * field.width() + u) as usize];
                if field.is_valid(u, v) {
                    assert_eq!(value, 137);
                } else {
                    assert_eq!(value, 0);
                }
            }
        }
    }

    #[test]
    fn round_trip_warp_preserves_a_gradient_within_one_level() {
        let a = small_camera();
        let b = CameraIntrinsics {
            fx: a.fx * 1.03,
            fy: a.fy * 0.98,
            cx: a.cx + 2.0,
            cy: a.cy - 1.5,
            k1: -0.05,
            k2: 0.0,
            k3: 0.0,
            t1: 0.0,
            t2: 0.0,
            ..a
        };
        let a_to_b = build_remap(&a, &b);
        let b_to_a = build_remap(&b, &a);
        let image = gradient_raster(a.width, a.height, 1);
        let as_b = warp_image(&image, &a_to_b).unwrap();
        let back = warp_image(&as_b, &b_to_a).unwrap();
        let mut checked = 0usize;
        for v in 8..a.height - 8 {
            for u in 8..a.width - 8 {
                // Compare only where both mappings were valid.
                let Some([sx, sy]) = b_to_a.source_coord(u, v) else { continue };
                if !a_to_b.is_valid(sx.round() as u32, sy.round() as u32) {
                    continue;
                }
                let idx = (v * a.width + u) as usize;
                let diff = (back.data[idx] as i16 - image.data[idx] as i16).abs();
                assert!(diff <= 1, "pixel ({u}, {v}) drifted by {diff}");
                checked += 1;
            }
        }
        assert!(checked > 1000, "round trip covered only {checked} pixels");
    }

    #[test]
    fn warp_rejects_mismatched_source_dimensions() {
        let cam = small_camera();
        let field = build_remap(&cam, &cam);
        let wrong = gradient_raster(cam.width + 2, cam.height, 1);
        match warp_image(&wrong, &field) {
            Err(RemapError::DimensionMismatch { expected_w, actual_w, .. }) => {
                assert_eq!(expected_w, cam.width);
                assert_eq!(actual_w, cam.width + 2);
            }
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn field_serialization_round_trips() {
        let cam = small_camera();
        let target = undistorted(&cam);
        let field = build_remap(&cam, &target);
        let mut bytes = Vec::new();
        field.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 12 + 9 * cam.width as usize * cam.height as usize);
        let loaded = RemapField::read_from(bytes.as_slice()).unwrap();
        assert_eq!(loaded.width(), field.width());
        assert_eq!(loaded.height(), field.height());
        assert_eq!(loaded.source_size, None);
        for v in 0..field.height() {
            for u in 0..field.width() {
                assert_eq!(loaded.is_valid(u, v), field.is_valid(u, v));
                if let (Some(a), Some(b)) = (loaded.source_coord(u, v), field.source_coord(u, v)) {
                    // f32 narrowing at the file boundary.
                    assert!((a[0] - b[0]).abs() < 1e-4);
                    assert!((a[1] - b[1]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn corrupt_fields_are_rejected() {
        let cam = small_camera();
        let field = build_remap(&cam, &cam);
        let mut bytes = Vec::new();
        field.write_to(&mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(RemapField::read_from(bad_magic.as_slice()), Err(RemapError::BadMagic)));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(RemapField::read_from(truncated), Err(RemapError::Corrupt(_))));

        let mut bad_flag = bytes.clone();
        let last = bad_flag.len() - 1;
        bad_flag[last] = 7;
        assert!(matches!(RemapField::read_from(bad_flag.as_slice()), Err(RemapError::Corrupt(_))));
    }
}
