//! Pinhole back-projection of masked depth pixels into world coordinates,
//! plus the forward projection used for round-trip checks.
//!
//! Conventions: (u, v) are integer pixel indices addressing pixel centers
//! (no +0.5 offset); the extrinsic transform is camera-to-world.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use thiserror::Error;

use crate::maskops::BinaryMask;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("size mismatch: mask {0}x{1} vs depth {2}x{3} (width x height)")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("depth image: {0}")]
    DepthImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, ProjectionError> {
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(ProjectionError::InvalidIntrinsics(format!(
                "fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }
}

pub const ROTATION_TOL: f64 = 1e-9;

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    matrix: Matrix4<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self, ProjectionError> {
        check_rigid(&matrix).map_err(ProjectionError::InvalidExtrinsics)?;
        Ok(CameraExtrinsics { matrix })
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self, ProjectionError> {
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world coordinates (the translation column).
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)])
    }

    /// Rigid inverse: [R t]^-1 = [R^T, -R^T t].
    pub fn inverse(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let t = Vector3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)]);
        let rt = r.transpose();
        let tinv = -rt * t;
        let mut out = Matrix4::identity();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        out[(0, 3)] = tinv.x;
        out[(1, 3)] = tinv.y;
        out[(2, 3)] = tinv.z;
        out
    }
}

/// Upper-left 3x3 orthonormal with det +1 (tol 1e-9), bottom row (0,0,0,1).
pub fn check_rigid(m: &Matrix4<f64>) -> Result<(), String> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err("non-finite entries".into());
    }
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(format!("bottom row {bottom:?} != [0,0,0,1]"));
    }
    let r = m.fixed_view::<3, 3>(0, 0);
    let should_be_identity = r.transpose() * r;
    let err = (should_be_identity - Matrix3::identity()).abs().max();
    if err > ROTATION_TOL {
        return Err(format!("rotation not orthonormal (max error {err:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(format!("rotation determinant {det} != +1"));
    }
    Ok(())
}

/// Per-pixel metric depth with a validity flag. Invalid pixels are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// Non-finite or non-positive values are stored as invalid holes.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width * height) as usize);
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        DepthImage {
            width,
            height,
            depth: values,
            valid,
        }
    }

    /// 16-bit single-channel PNG, value = millimeters, 0 = invalid.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ProjectionError> {
        let img = image::open(path.as_ref())
            .map_err(|e| ProjectionError::DepthImage(e.to_string()))?
            .into_luma16();
        let (w, h) = img.dimensions();
        let values = img
            .pixels()
            .map(|p| f64::from(p.0[0]) / 1000.0)
            .collect();
        Ok(DepthImage::from_values(w, h, values))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ProjectionError> {
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(
            self.width,
            self.height,
            |x, y| {
                let v = if self.is_valid(x, y) {
                    (self.get(x, y) * 1000.0).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                };
                image::Luma([v])
            },
        );
        img.save(path.as_ref())
            .map_err(|e| ProjectionError::DepthImage(e.to_string()))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[(y * self.width + x) as usize]
    }
}

/// Lifted mask pixels: world points with their source pixels, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffordanceCloud {
    pub points: Vec<Point3<f64>>,
    pub source_pixels: Vec<(u32, u32)>,
}

impl AffordanceCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts one pixel: the camera-frame point ((u-cx)d/fx, (v-cy)d/fy, d)
/// transformed into world coordinates.
pub fn backproject_pixel(
    u: u32,
    v: u32,
    d: f64,
    k: &CameraIntrinsics,
    t: &CameraExtrinsics,
) -> Result<Point3<f64>, ProjectionError> {
    if !(d.is_finite() && d > 0.0) {
        return Err(ProjectionError::InvalidDepth(d));
    }
    let cam = Point3::new(
        (f64::from(u) - k.cx) * d / k.fx,
        (f64::from(v) - k.cy) * d / k.fy,
        d,
    );
    Ok(t.matrix().transform_point(&cam))
}

/// Keeps exactly the points of `points` (or the full row-major grid when
/// `None`) where the mask is set and the depth is valid, lifting each via
/// [`backproject_pixel`]. Output order follows the input point order.
pub fn backproject_masked(
    points: Option<&[(u32, u32)]>,
    mask: &BinaryMask,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    t: &CameraExtrinsics,
) -> Result<AffordanceCloud, ProjectionError> {
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(ProjectionError::SizeMismatch(
            mask.width(),
            mask.height(),
            depth.width(),
            depth.height(),
        ));
    }
    let mut cloud = AffordanceCloud::default();
    let mut lift = |u: u32, v: u32| -> Result<(), ProjectionError> {
        if mask.get(u, v) && depth.is_valid(u, v) {
            let p = backproject_pixel(u, v, depth.get(u, v), k, t)?;
            cloud.points.push(p);
            cloud.source_pixels.push((u, v));
        }
        Ok(())
    };
    match points {
        Some(pts) => {
            for &(u, v) in pts {
                lift(u, v)?;
            }
        }
        None => {
            for v in 0..mask.height() {
                for u in 0..mask.width() {
                    lift(u, v)?;
                }
            }
        }
    }
    Ok(cloud)
}

/// Algebraic inverse of [`backproject_pixel`]: world point to sub-pixel
/// (u, v) and depth.
pub fn project_point(
    p: &Point3<f64>,
    k: &CameraIntrinsics,
    t: &CameraExtrinsics,
) -> Result<(f64, f64, f64), ProjectionError> {
    let inv = t.inverse();
    let cam = inv.transform_point(p);
    if cam.z <= 0.0 {
        return Err(ProjectionError::BehindCamera(cam.z));
    }
    let u = cam.x * k.fx / cam.z + k.cx;
    let v = cam.y * k.fy / cam.z + k.cy;
    Ok((u, v, cam.z))
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;
    use crate::manifest::SplitMix64;
    use nalgebra::{Rotation3, Unit};

    pub fn unit_f64(rng: &mut SplitMix64) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn random_rotation(rng: &mut SplitMix64) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            unit_f64(rng) * 2.0 - 1.0,
            unit_f64(rng) * 2.0 - 1.0,
            unit_f64(rng) * 2.0 - 1.0,
        ));
        let angle = unit_f64(rng) * std::f64::consts::TAU;
        *Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    pub fn random_extrinsics(rng: &mut SplitMix64) -> CameraExtrinsics {
        let r = random_rotation(rng);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m[(0, 3)] = unit_f64(rng) * 2.0 - 1.0;
        m[(1, 3)] = unit_f64(rng) * 2.0 - 1.0;
        m[(2, 3)] = unit_f64(rng) * 2.0 - 1.0;
        CameraExtrinsics::from_matrix(m).expect("constructed rigid")
    }
}

#[cfg(test)]
mod tests {
    use super::test_fixtures::*;
    use super::*;
    use crate::manifest::SplitMix64;
    use crate::maskops::BinaryMask;

    fn k_identity() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    fn k_vga() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn backproject_identity_everything() {
        let p = backproject_pixel(0, 0, 1.0, &k_identity(), &CameraExtrinsics::identity()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let p = backproject_pixel(320, 240, 2.0, &k_vga(), &CameraExtrinsics::identity()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_offset_pixel_matches_matrix_oracle() {
        let k = k_vga();
        let t = CameraExtrinsics::identity();
        let p = backproject_pixel(820, 240, 1.0, &k, &t).unwrap();
        assert_eq!(p, Point3::new(1.0, 0.0, 1.0)); // (820-320)/500 = 1.0

        // explicit 4x4 oracle: T * K^-1 * [u*d, v*d, d, 1]^T
        let k4 = Matrix4::new(
            k.fx, 0.0, k.cx, 0.0, //
            0.0, k.fy, k.cy, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let (u, v, d) = (820.0, 240.0, 1.0);
        let h = t.matrix() * k4.try_inverse().unwrap() * nalgebra::Vector4::new(u * d, v * d, d, 1.0);
        assert!((p.coords - h.fixed_rows::<3>(0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_depth_is_an_error() {
        assert!(matches!(
            backproject_pixel(0, 0, 0.0, &k_identity(), &CameraExtrinsics::identity()),
            Err(ProjectionError::InvalidDepth(_))
        ));
        assert!(backproject_pixel(0, 0, f64::NAN, &k_identity(), &CameraExtrinsics::identity())
            .is_err());
    }

    #[test]
    fn masked_backprojection_cardinality_and_order() {
        let mut mask = BinaryMask::new(4, 4);
        mask.set(0, 0, true);
        mask.set(2, 1, true);
        mask.set(3, 3, true);
        let mut values = vec![1.0; 16];
        values[1 * 4 + 2] = 0.0; // hole at (2,1)
        let depth = DepthImage::from_values(4, 4, values);
        let k = k_vga();
        let t = CameraExtrinsics::identity();
        let cloud = backproject_masked(None, &mask, &depth, &k, &t).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.source_pixels, vec![(0, 0), (3, 3)]);
        for (i, &(u, v)) in cloud.source_pixels.iter().enumerate() {
            let expect = backproject_pixel(u, v, 1.0, &k, &t).unwrap();
            assert_eq!(cloud.points[i], expect);
        }
    }

    #[test]
    fn masked_backprojection_all_zero_and_all_one() {
        let zero = BinaryMask::new(3, 2);
        let depth = DepthImage::from_values(3, 2, vec![1.0; 6]);
        let k = k_identity();
        let t = CameraExtrinsics::identity();
        assert!(backproject_masked(None, &zero, &depth, &k, &t)
            .unwrap()
            .is_empty());
        let mut one = BinaryMask::new(3, 2);
        for y in 0..2 {
            for x in 0..3 {
                one.set(x, y, true);
            }
        }
        assert_eq!(backproject_masked(None, &one, &depth, &k, &t).unwrap().len(), 6);
    }

    #[test]
    fn masked_backprojection_size_mismatch() {
        let mask = BinaryMask::new(3, 2);
        let depth = DepthImage::from_values(2, 2, vec![1.0; 4]);
        let k = k_identity();
        assert!(matches!(
            backproject_masked(None, &mask, &depth, &k, &CameraExtrinsics::identity()),
            Err(ProjectionError::SizeMismatch(..))
        ));
    }

    #[test]
    fn project_point_on_optical_axis() {
        let k = k_vga();
        let t = CameraExtrinsics::identity();
        let (u, v, d) = project_point(&Point3::new(0.0, 0.0, 3.0), &k, &t).unwrap();
        assert_eq!((u, v, d), (320.0, 240.0, 3.0));
    }

    #[test]
    fn project_point_behind_camera() {
        let k = k_vga();
        let t = CameraExtrinsics::identity();
        assert!(matches!(
            project_point(&Point3::new(0.0, 0.0, -1.0), &k, &t),
            Err(ProjectionError::BehindCamera(_))
        ));
    }

    #[test]
    fn round_trip_under_random_rig() {
        let mut rng = SplitMix64::new(11);
        let t = random_extrinsics(&mut rng);
        let k = k_vga();
        let p = backproject_pixel(100, 50, 1.5, &k, &t).unwrap();
        let (u, v, d) = project_point(&p, &k, &t).unwrap();
        assert!((u - 100.0).abs() / 100.0 < 1e-6);
        assert!((v - 50.0).abs() / 50.0 < 1e-6);
        assert!((d - 1.5).abs() / 1.5 < 1e-6);
    }

    #[test]
    fn depth_linearity_under_identity_extrinsics() {
        let k = k_vga();
        let t = CameraExtrinsics::identity();
        let p1 = backproject_pixel(400, 300, 1.0, &k, &t).unwrap();
        let p3 = backproject_pixel(400, 300, 3.0, &k, &t).unwrap();
        assert!((p3.coords - 3.0 * p1.coords).norm() < 1e-12);
    }

    #[test]
    fn depth_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DepthImage::from_values(3, 2, vec![0.001, 0.5, 1.25, 0.0, 65.535, 2.0]);
        d.save_png(&path).unwrap();
        let loaded = DepthImage::load_png(&path).unwrap();
        assert_eq!(loaded, d);
        assert!(!loaded.is_valid(0, 1)); // the 0 mm hole
    }

    #[test]
    fn extrinsics_reject_non_rigid() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(CameraExtrinsics::from_matrix(m).is_err());
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1.0;
        assert!(CameraExtrinsics::from_matrix(m).is_err());
    }
}
