//! Deterministic geometric grasp proposal from an affordance point cloud:
//! PCA of the cloud, camera-ray approach, smallest-extent closing axis.

use nalgebra::{Matrix3, Matrix4, Point3, UnitVector3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{check_rigid, AffordanceCloud, CameraExtrinsics, ROTATION_TOL};

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("too few points: {count} < minimum {min_points}")]
    TooFewPoints { count: usize, min_points: usize },
    #[error("non-rigid transform: {0}")]
    NonRigidTransform(String),
}

/// Parallel-jaw gripper limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperSpec {
    pub max_width: f64,
    pub finger_margin: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        // typical parallel-jaw gripper: 85 mm opening, 5 mm finger margin
        GripperSpec {
            max_width: 0.085,
            finger_margin: 0.005,
        }
    }
}

pub const DEFAULT_MIN_POINTS: usize = 50;

/// Grasp frame: axes are the columns (approach, closing, orthogonal) of a
/// right-handed orthonormal rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspPose {
    pub position: Point3<f64>,
    pub rotation: Matrix3<f64>,
    pub width: f64,
    pub score: f64,
}

impl GraspPose {
    pub fn approach_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn closing_axis(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn orthogonal_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Orthonormality and right-handedness at the 1e-9 tolerance.
    pub fn rotation_is_valid(&self) -> bool {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        err <= ROTATION_TOL && (r.determinant() - 1.0).abs() <= ROTATION_TOL
    }

    pub fn to_json(&self) -> PoseJson {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        PoseJson {
            position: [self.position.x, self.position.y, self.position.z],
            rotation,
            width: self.width,
            score: self.score,
        }
    }
}

/// Wire form: `{"position":[x,y,z],"rotation":[9 row-major],"width":w,"score":s}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub width: f64,
    pub score: f64,
}

/// PCA of the cloud: mean, orthonormal eigenvectors sorted by descending
/// variance, and max-min projection extents per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAxes {
    pub centroid: Point3<f64>,
    pub axes: [UnitVector3<f64>; 3],
    /// Eigenvalues (variances), same order as `axes`.
    pub variances: [f64; 3],
    pub extents: [f64; 3],
}

/// Axis signs are fixed so each eigenvector has a non-negative dot with
/// world +x, falling back to +y then +z when the earlier components vanish.
fn fix_sign(v: Vector3<f64>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    for i in 0..3 {
        if v[i].abs() > EPS {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

pub fn principal_axes(
    cloud: &AffordanceCloud,
    min_points: usize,
) -> Result<PrincipalAxes, GraspError> {
    let n = cloud.len();
    if n < min_points {
        return Err(GraspError::TooFewPoints {
            count: n,
            min_points,
        });
    }
    let mut mean = Vector3::zeros();
    for p in &cloud.points {
        mean += p.coords;
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n as f64;

    let eig = cov.symmetric_eigen();
    // sort descending by eigenvalue
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut axes_v = [Vector3::zeros(); 3];
    let mut variances = [0.0; 3];
    for (slot, &i) in order.iter().enumerate() {
        axes_v[slot] = fix_sign(eig.eigenvectors.column(i).into_owned());
        variances[slot] = eig.eigenvalues[i].max(0.0);
    }
    // re-orthonormalize (Gram-Schmidt) against accumulated numerical drift
    axes_v[0] = axes_v[0].normalize();
    axes_v[1] = (axes_v[1] - axes_v[0] * axes_v[0].dot(&axes_v[1])).normalize();
    axes_v[2] = (axes_v[2]
        - axes_v[0] * axes_v[0].dot(&axes_v[2])
        - axes_v[1] * axes_v[1].dot(&axes_v[2]))
    .normalize();
    let axes_v = axes_v.map(fix_sign);

    let mut extents = [0.0; 3];
    for (i, axis) in axes_v.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &cloud.points {
            let t = axis.dot(&(p.coords - mean));
            lo = lo.min(t);
            hi = hi.max(t);
        }
        extents[i] = hi - lo;
    }
    Ok(PrincipalAxes {
        centroid: Point3::from(mean),
        axes: axes_v.map(UnitVector3::new_unchecked),
        variances,
        extents,
    })
}

/// Deterministic sign canonicalization of the closing axis: non-negative dot
/// with world +x (then +y, +z). The parallel jaw is symmetric under closing
/// negation, so this picks one representative of the two equivalent frames.
fn canonicalize_closing(approach: Vector3<f64>, closing: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let closing = fix_sign(closing);
    let third = approach.cross(&closing);
    (closing, third)
}

/// Geometric grasp proposal: position at the centroid, approach along the
/// camera ray, closing along the tightest principal direction.
pub fn propose_grasp(
    cloud: &AffordanceCloud,
    t: &CameraExtrinsics,
    gripper: &GripperSpec,
    min_points: usize,
) -> Result<GraspPose, GraspError> {
    let pca = principal_axes(cloud, min_points)?;
    let camera_center = t.camera_center();
    let approach = (pca.centroid - camera_center).normalize();

    // smallest-extent axis; near-ties (relative gap < 1e-9) prefer the axis
    // most orthogonal to the approach, then the lowest index
    let min_extent = pca.extents.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = pca.extents.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut best: Option<usize> = None;
    for i in 0..3 {
        if (pca.extents[i] - min_extent) / scale < 1e-9 {
            best = match best {
                None => Some(i),
                Some(j) => {
                    let di = pca.axes[i].dot(&approach).abs();
                    let dj = pca.axes[j].dot(&approach).abs();
                    if di + 1e-12 < dj {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
    }
    let closing_idx = best.expect("three extents");
    let raw_closing = pca.axes[closing_idx].into_inner();
    let closing = (raw_closing - approach * approach.dot(&raw_closing)).normalize();
    let (closing, third) = canonicalize_closing(approach, closing);

    let mut rotation = Matrix3::zeros();
    rotation.set_column(0, &approach);
    rotation.set_column(1, &closing);
    rotation.set_column(2, &third);

    // the chosen principal axis's extent, not one re-measured after the
    // approach re-orthogonalization: when that axis is nearly parallel to the
    // approach ray, re-orthogonalization amplifies its sampling tilt and the
    // re-measured extent picks up the object's long dimension
    let closing_extent = pca.extents[closing_idx];
    let width = (closing_extent + 2.0 * gripper.finger_margin).min(gripper.max_width);

    // fraction of cloud points inside the closing slab of thickness `width`
    let inside = cloud
        .points
        .iter()
        .filter(|p| closing.dot(&(p.coords - pca.centroid.coords)).abs() <= width / 2.0)
        .count();
    let score = inside as f64 / cloud.len() as f64;

    Ok(GraspPose {
        position: pca.centroid,
        rotation,
        width,
        score,
    })
}

/// Applies a rigid 4x4 to the pose frame; width and score are unchanged.
pub fn transform_grasp(pose: &GraspPose, rigid: &Matrix4<f64>) -> Result<GraspPose, GraspError> {
    check_rigid(rigid).map_err(GraspError::NonRigidTransform)?;
    let r = rigid.fixed_view::<3, 3>(0, 0).into_owned();
    let position = rigid.transform_point(&pose.position);
    Ok(GraspPose {
        position,
        rotation: r * pose.rotation,
        width: pose.width,
        score: pose.score,
    })
}

/// Flips the closing/orthogonal pair, when needed, onto the canonical sign
/// choice used by [`propose_grasp`]. The two frames describe the same
/// physical parallel-jaw grasp.
pub fn canonicalize_grasp(pose: &GraspPose) -> GraspPose {
    let approach = pose.approach_axis();
    let (closing, third) = canonicalize_closing(approach, pose.closing_axis());
    let mut rotation = Matrix3::zeros();
    rotation.set_column(0, &approach);
    rotation.set_column(1, &closing);
    rotation.set_column(2, &third);
    GraspPose {
        position: pose.position,
        rotation,
        width: pose.width,
        score: pose.score,
    }
}


#[cfg(test)]
mod tests {
    use super::test_fixtures::cylinder_cloud;
    use super::*;
    use crate::manifest::SplitMix64;
    use crate::projection::test_fixtures::{random_rotation, unit_f64};

    fn cloud_from(points: Vec<Point3<f64>>) -> AffordanceCloud {
        let n = points.len();
        AffordanceCloud {
            points,
            source_pixels: (0..n as u32).map(|i| (i, 0)).collect(),
        }
    }

    #[test]
    fn axes_of_a_segment() {
        let points: Vec<_> = (0..101)
            .map(|i| Point3::new(f64::from(i) / 100.0, 0.0, 0.0))
            .collect();
        let pca = principal_axes(&cloud_from(points), 50).unwrap();
        assert!((pca.centroid - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((pca.axes[0].into_inner() - Vector3::x()).norm() < 1e-9);
        assert!((pca.extents[0] - 1.0).abs() < 1e-12);
        assert!(pca.extents[1].abs() < 1e-12 && pca.extents[2].abs() < 1e-12);
    }

    #[test]
    fn axes_of_cube_corners() {
        let mut points = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    points.push(Point3::new(x, y, z));
                }
            }
        }
        let pca = principal_axes(&cloud_from(points), 8).unwrap();
        assert!((pca.centroid - Point3::new(0.5, 0.5, 0.5)).norm() < 1e-12);
        for e in pca.extents {
            assert!((e - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn axes_recover_anisotropic_gaussian() {
        // box-muller over splitmix for seeded normals
        let mut rng = SplitMix64::new(42);
        let mut normal = || {
            let u1: f64 = unit_f64(&mut rng).max(1e-12);
            let u2: f64 = unit_f64(&mut rng);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let points: Vec<_> = (0..1000)
            .map(|_| Point3::new(3.0 * normal(), 2.0 * normal(), 1.0 * normal()))
            .collect();
        let pca = principal_axes(&cloud_from(points), 50).unwrap();
        let world = [Vector3::x(), Vector3::y(), Vector3::z()];
        for (axis, expect) in pca.axes.iter().zip(world) {
            let angle = axis.dot(&expect).abs().clamp(-1.0, 1.0).acos();
            assert!(angle < 5f64.to_radians(), "axis off by {} deg", angle.to_degrees());
        }
    }

    #[test]
    fn too_few_points() {
        let points = vec![Point3::origin(); 10];
        assert!(matches!(
            principal_axes(&cloud_from(points), 50),
            Err(GraspError::TooFewPoints {
                count: 10,
                min_points: 50
            })
        ));
    }

    #[test]
    fn grasp_on_cylinder() {
        // horizontal cylinder 0.5 m below the camera, axis along world x
        let cloud = cylinder_cloud(Point3::new(0.0, 0.0, 0.5), 0.015, 0.2, 5000, 9);
        let t = CameraExtrinsics::identity();
        let g = GripperSpec::default();
        let pose = propose_grasp(&cloud, &t, &g, DEFAULT_MIN_POINTS).unwrap();
        assert!(pose.rotation_is_valid());
        // closing perpendicular to the cylinder axis (world x) within 10 deg
        let angle_from_cross_section = pose.closing_axis().dot(&Vector3::x()).abs().asin();
        assert!(angle_from_cross_section < 10f64.to_radians());
        // width = diameter + 2 * margin, within a millimeter
        assert!((pose.width - (0.03 + 2.0 * g.finger_margin)).abs() < 1e-3);
        // position within the cloud bounding box
        for i in 0..3 {
            let lo = cloud.points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            let hi = cloud
                .points
                .iter()
                .map(|p| p[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(pose.position[i] >= lo && pose.position[i] <= hi);
        }
    }

    #[test]
    fn grasp_width_from_tight_cluster() {
        // ball of extent 0.04 m with margin 0.005 -> width 0.05
        let mut rng = SplitMix64::new(3);
        let points: Vec<_> = (0..500)
            .map(|_| {
                let theta = unit_f64(&mut rng) * std::f64::consts::TAU;
                let phi = (unit_f64(&mut rng) * 2.0 - 1.0).acos();
                Point3::new(
                    0.02 * phi.sin() * theta.cos(),
                    0.02 * phi.sin() * theta.sin(),
                    0.5 + 0.02 * phi.cos(),
                )
            })
            .collect();
        let pose = propose_grasp(
            &cloud_from(points),
            &CameraExtrinsics::identity(),
            &GripperSpec::default(),
            50,
        )
        .unwrap();
        assert!((pose.width - 0.05).abs() < 2e-3);
    }

    #[test]
    fn grasp_width_clamps_to_max() {
        let mut rng = SplitMix64::new(5);
        let points: Vec<_> = (0..2000)
            .map(|_| {
                Point3::new(
                    unit_f64(&mut rng) * 0.5,
                    unit_f64(&mut rng) * 0.4,
                    0.5 + unit_f64(&mut rng) * 0.3,
                )
            })
            .collect();
        let g = GripperSpec::default();
        let pose = propose_grasp(&cloud_from(points), &CameraExtrinsics::identity(), &g, 50)
            .unwrap();
        assert_eq!(pose.width, g.max_width);
        assert!(pose.score < 1.0);
    }

    #[test]
    fn transform_identity_translation_rotation() {
        let cloud = cylinder_cloud(Point3::new(0.0, 0.0, 0.5), 0.015, 0.2, 1000, 1);
        let pose = propose_grasp(
            &cloud,
            &CameraExtrinsics::identity(),
            &GripperSpec::default(),
            50,
        )
        .unwrap();

        let same = transform_grasp(&pose, &Matrix4::identity()).unwrap();
        assert_eq!(same, pose);

        let mut shift = Matrix4::identity();
        shift[(0, 3)] = 1.0;
        let moved = transform_grasp(&pose, &shift).unwrap();
        assert_eq!(moved.rotation, pose.rotation);
        assert!((moved.position.x - (pose.position.x + 1.0)).abs() < 1e-15);

        // 90 degree world-z rotation, checked component-wise against the matrix
        let rz = Matrix4::from_row_slice(&[
            0.0, -1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ]);
        let rotated = transform_grasp(&pose, &rz).unwrap();
        let r3 = rz.fixed_view::<3, 3>(0, 0);
        assert!((rotated.rotation - r3 * pose.rotation).abs().max() < 1e-15);
        assert!((rotated.position.coords
            - r3 * pose.position.coords)
            .norm()
            < 1e-15);
        assert_eq!(rotated.width, pose.width);
        assert_eq!(rotated.score, pose.score);
    }

    #[test]
    fn transform_rejects_non_rigid() {
        let cloud = cylinder_cloud(Point3::new(0.0, 0.0, 0.5), 0.015, 0.2, 200, 1);
        let pose = propose_grasp(
            &cloud,
            &CameraExtrinsics::identity(),
            &GripperSpec::default(),
            50,
        )
        .unwrap();
        let mut scaled = Matrix4::identity();
        scaled[(1, 1)] = 2.0;
        assert!(matches!(
            transform_grasp(&pose, &scaled),
            Err(GraspError::NonRigidTransform(_))
        ));
    }

    #[test]
    fn proposal_is_deterministic() {
        let cloud = cylinder_cloud(Point3::new(0.1, -0.2, 0.7), 0.015, 0.2, 3000, 77);
        let t = CameraExtrinsics::identity();
        let g = GripperSpec::default();
        let a = propose_grasp(&cloud, &t, &g, 50).unwrap();
        let b = propose_grasp(&cloud, &t, &g, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equivariance_under_rigid_motion() {
        let cloud = cylinder_cloud(Point3::new(0.05, 0.1, 0.6), 0.015, 0.2, 4000, 13);
        let t = CameraExtrinsics::identity();
        let g = GripperSpec::default();
        let pose = propose_grasp(&cloud, &t, &g, 50).unwrap();

        let mut rng = SplitMix64::new(99);
        let r3 = random_rotation(&mut rng);
        let mut rigid = Matrix4::identity();
        rigid.fixed_view_mut::<3, 3>(0, 0).copy_from(&r3);
        rigid[(0, 3)] = 0.3;
        rigid[(2, 3)] = -0.1;

        let moved_cloud = AffordanceCloud {
            points: cloud.points.iter().map(|p| rigid.transform_point(p)).collect(),
            source_pixels: cloud.source_pixels.clone(),
        };
        let moved_t = CameraExtrinsics::from_matrix(rigid * t.matrix()).unwrap();
        let direct = propose_grasp(&moved_cloud, &moved_t, &g, 50).unwrap();
        let via_transform = canonicalize_grasp(&transform_grasp(&pose, &rigid).unwrap());

        assert!((direct.position - via_transform.position).norm() < 1e-6);
        assert!((direct.rotation - via_transform.rotation).abs().max() < 1e-6);
        assert!((direct.width - via_transform.width).abs() < 1e-6);
        assert!((direct.score - via_transform.score).abs() < 1e-6);
    }
}
