//! Pinhole cameras, rigid camera-to-world poses, pixel rays and cross-view
//! depth warping.
//!
//! Conventions: right-handed, camera looks down +z with x right and y down.
//! Pixel `(x, y)` of a raster has its center at continuous coordinates
//! `(x + 0.5, y + 0.5)`. Ray directions are not normalized: the camera-frame
//! direction has unit z, so the ray parameter is the z-depth of the point.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DepthMap;

pub type Vec3 = Vector3<f64>;

/// Largest deviation from orthonormality a rotation may have.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidInput(format!("field of view {hfov_deg} deg")));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Continuous coordinates of the center of raster pixel `(x, y)`.
    #[inline]
    pub fn pixel_center(x: usize, y: usize) -> (f64, f64) {
        (x as f64 + 0.5, y as f64 + 0.5)
    }
}

/// Rigid camera-to-world transform: `world = rotation * camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let dev = rotation_deviation(&rotation);
        if !(dev <= ROTATION_TOLERANCE) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "rotation deviates from SO(3) by {dev:e}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`; `down` is the world direction that
    /// should appear downward in the image.
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidInput("look-at target coincides with eye".into()));
        }
        let forward = forward.normalize();
        let right = down.cross(&forward);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidInput("viewing direction parallel to down vector".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a 4×4 camera-to-world matrix. Rotations within `tolerance` of
    /// SO(3) are accepted and, if needed, projected back onto it.
    pub fn from_matrix(m: &Matrix4<f64>, tolerance: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(format!(
                "last matrix row must be 0 0 0 1, got {bottom:?}"
            )));
        }
        let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
        let dev = rotation_deviation(&rotation);
        if !(dev <= tolerance) {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (deviation {dev:e} > {tolerance:e})"
            )));
        }
        let rotation = if dev > ROTATION_TOLERANCE {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        Self::new(rotation, translation)
    }
}

/// Max of `‖RᵀR − I‖∞` and `|det R − 1|`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Ray `origin + t * direction`; `t` equals camera-space z-depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// A posed pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl Camera {
    pub fn new(pose: Pose, intrinsics: Intrinsics) -> Self {
        Self { pose, intrinsics }
    }

    /// Ray through the center of pixel `(x, y)`.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        pixel_ray(&self.intrinsics, &self.pose, Intrinsics::pixel_center(x, y))
    }
}

/// Transform taking camera-`i` coordinates to camera-`j` coordinates.
pub fn relative_pose(pose_i: &Pose, pose_j: &Pose) -> Pose {
    pose_j.inverse().compose(pose_i)
}

pub fn unproject(k: &Intrinsics, pixel: (f64, f64), depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidInput(format!("depth must be positive, got {depth}")));
    }
    Ok(unproject_unchecked(k, pixel, depth))
}

#[inline]
fn unproject_unchecked(k: &Intrinsics, (u, v): (f64, f64), depth: f64) -> Vec3 {
    Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: (f64, f64),
    pub depth: f64,
    pub in_bounds: bool,
}

pub fn project(k: &Intrinsics, point: &Vec3) -> Projection {
    let z = point.z;
    let u = k.fx * point.x / z + k.cx;
    let v = k.fy * point.y / z + k.cy;
    let in_bounds = z > 0.0
        && u >= 0.0
        && u < k.width as f64
        && v >= 0.0
        && v < k.height as f64;
    Projection {
        pixel: (u, v),
        depth: z,
        in_bounds,
    }
}

pub fn pixel_ray(k: &Intrinsics, pose: &Pose, (u, v): (f64, f64)) -> Ray {
    let dir_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    Ray {
        origin: *pose.translation(),
        direction: pose.rotation() * dir_cam,
    }
}

/// Per-pixel result of warping a depth map into another view.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthWarp {
    pub width: usize,
    pub height: usize,
    /// Continuous pixel coordinates in the target view.
    pub coords: Vec<(f64, f64)>,
    /// Depth of the warped point in the target camera.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Unprojects every valid pixel of `depth_i`, moves it by `t_ij` and projects
/// it into view `j` (same intrinsics).
pub fn warp_depth(k: &Intrinsics, t_ij: &Pose, depth_i: &DepthMap) -> Result<DepthWarp> {
    if depth_i.width != k.width || depth_i.height != k.height {
        return Err(Error::SizeMismatch(format!(
            "depth map {}x{} vs intrinsics {}x{}",
            depth_i.width, depth_i.height, k.width, k.height
        )));
    }
    let n = k.pixel_count();
    let mut out = DepthWarp {
        width: k.width,
        height: k.height,
        coords: vec![(f64::NAN, f64::NAN); n],
        depth: vec![0.0; n],
        valid: vec![false; n],
    };
    for y in 0..k.height {
        for x in 0..k.width {
            let idx = y * k.width + x;
            if !depth_i.valid[idx] {
                continue;
            }
            let p_cam = unproject_unchecked(k, Intrinsics::pixel_center(x, y), depth_i.values[idx]);
            let proj = project(k, &t_ij.transform_point(&p_cam));
            out.coords[idx] = proj.pixel;
            out.depth[idx] = proj.depth;
            out.valid[idx] = proj.in_bounds && proj.depth > 0.0;
        }
    }
    Ok(out)
}
