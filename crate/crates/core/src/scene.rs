//! Procedural indoor scenes with analytic ground truth.
//!
//! A scene is a closed axis-aligned room plus boxes, spheres and rectangular
//! panels. Surfaces emit view-independent procedural color, so rendered
//! images, depth and simulated sparse reconstructions are exact functions of
//! the scene description and its seed.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, Camera, Intrinsics, Pose, Ray, Vec3};
use crate::image::{DepthMap, Image, Rgb};
use crate::rng::{rng_from, substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    Solid,
    Checker,
    Stripes,
    Noise,
}

/// Surface color: `color + amplitude / 2 * pattern`, pattern in `[-1, 1]`,
/// clamped to `[0, 1]`. Amplitude 0 is perfectly textureless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    pub color: Rgb,
    #[serde(default)]
    pub amplitude: f64,
    /// Pattern period in meters.
    #[serde(default = "default_texture_scale")]
    pub scale: f64,
}

fn default_texture_scale() -> f64 {
    0.25
}

impl TextureSpec {
    pub fn solid(color: Rgb) -> Self {
        Self {
            kind: TextureKind::Solid,
            color,
            amplitude: 0.0,
            scale: default_texture_scale(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::InvalidSpec(format!(
                "{what}: amplitude {} outside [0, 1]",
                self.amplitude
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidSpec(format!("{what}: texture scale must be > 0")));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidSpec(format!("{what}: color outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallTextures {
    /// -x
    pub left: TextureSpec,
    /// +x
    pub right: TextureSpec,
    /// -y (y points down)
    pub ceiling: TextureSpec,
    /// +y
    pub floor: TextureSpec,
    /// -z
    pub back: TextureSpec,
    /// +z
    pub front: TextureSpec,
}

impl WallTextures {
    fn by_face(&self, axis: usize, positive: bool) -> &TextureSpec {
        match (axis, positive) {
            (0, false) => &self.left,
            (0, true) => &self.right,
            (1, false) => &self.ceiling,
            (1, true) => &self.floor,
            (2, false) => &self.back,
            _ => &self.front,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectSpec {
    Box {
        min: [f64; 3],
        max: [f64; 3],
        texture: TextureSpec,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: TextureSpec,
    },
    /// Two-sided rectangle perpendicular to `axis` at `position`; `min`/`max`
    /// bound the remaining two axes in x, y, z order.
    Plane {
        axis: Axis,
        position: f64,
        min: [f64; 2],
        max: [f64; 2],
        texture: TextureSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Evenly spaced centers from `start` to `end`.
    Line { start: [f64; 3], end: [f64; 3] },
    /// Centers on a horizontal arc `center + radius * (sin a, 0, -cos a)`.
    Arc {
        center: [f64; 3],
        radius: f64,
        start_deg: f64,
        end_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub path: TrajectoryKind,
    pub views: usize,
    pub look_at: [f64; 3],
    /// Uniform per-axis jitter of camera centers, meters.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Sub-pixel grid per axis for color anti-aliasing; depth uses the pixel center.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
}

fn default_supersample() -> usize {
    1
}

/// Complete description of a synthetic scene and its camera trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    /// Room extent in meters; the room is centered at the origin.
    pub room: [f64; 3],
    pub walls: WallTextures,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub trajectory: TrajectorySpec,
    pub image: ImageSpec,
    pub seed: u64,
}

const TEXTURED_JSON: &str = include_str!("../scenes/textured.json");
const TEXTURELESS_JSON: &str = include_str!("../scenes/textureless.json");

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    /// Bundled 60×80, 20-view room with textured walls and objects.
    pub fn textured() -> Self {
        Self::from_json(TEXTURED_JSON).expect("bundled textured scene")
    }

    /// Bundled 96×128, 20-view room whose walls, floor and ceiling are flat colors.
    pub fn textureless() -> Self {
        Self::from_json(TEXTURELESS_JSON).expect("bundled textureless scene")
    }

    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "textured" => Some(Self::textured()),
            "textureless" => Some(Self::textureless()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidSpec(format!(
                "room dimensions must be positive, got {:?}",
                self.room
            )));
        }
        if self.trajectory.views < 2 {
            return Err(Error::InvalidSpec("trajectory needs at least 2 views".into()));
        }
        if self.image.width == 0 || self.image.height == 0 || self.image.supersample == 0 {
            return Err(Error::InvalidSpec("image size and supersample must be positive".into()));
        }
        if !(self.trajectory.jitter >= 0.0) {
            return Err(Error::InvalidSpec("jitter must be >= 0".into()));
        }
        for (name, t) in [
            ("left wall", &self.walls.left),
            ("right wall", &self.walls.right),
            ("ceiling", &self.walls.ceiling),
            ("floor", &self.walls.floor),
            ("back wall", &self.walls.back),
            ("front wall", &self.walls.front),
        ] {
            t.validate(name)?;
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let what = format!("object {i}");
            match obj {
                ObjectSpec::Box { min, max, texture } => {
                    if (0..3).any(|a| !(max[a] > min[a])) {
                        return Err(Error::InvalidSpec(format!("{what}: box max must exceed min")));
                    }
                    texture.validate(&what)?;
                }
                ObjectSpec::Sphere { radius, texture, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidSpec(format!("{what}: radius must be > 0")));
                    }
                    texture.validate(&what)?;
                }
                ObjectSpec::Plane { min, max, texture, .. } => {
                    if (0..2).any(|a| !(max[a] > min[a])) {
                        return Err(Error::InvalidSpec(format!("{what}: plane max must exceed min")));
                    }
                    texture.validate(&what)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Primitive {
    Box { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    Plane { axis: usize, position: f64, min: [f64; 2], max: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
struct Object {
    shape: Primitive,
    texture: TextureSpec,
}

/// A renderable scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    half: Vec3,
    walls: WallTextures,
    objects: Vec<Object>,
    noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub color: Rgb,
    /// Ray parameter of the hit; z-depth for pixel rays.
    pub depth: f64,
}

/// Builds the scene and its trajectory cameras.
pub fn build_scene(spec: &SceneSpec) -> Result<(Scene, Vec<Camera>)> {
    spec.validate()?;
    let half = Vec3::from(spec.room) * 0.5;
    let objects = spec
        .objects
        .iter()
        .map(|o| match *o {
            ObjectSpec::Box { min, max, texture } => Object {
                shape: Primitive::Box {
                    min: Vec3::from(min),
                    max: Vec3::from(max),
                },
                texture,
            },
            ObjectSpec::Sphere {
                center,
                radius,
                texture,
            } => Object {
                shape: Primitive::Sphere {
                    center: Vec3::from(center),
                    radius,
                },
                texture,
            },
            ObjectSpec::Plane {
                axis,
                position,
                min,
                max,
                texture,
            } => Object {
                shape: Primitive::Plane {
                    axis: axis.index(),
                    position,
                    min,
                    max,
                },
                texture,
            },
        })
        .collect();
    let scene = Scene {
        half,
        walls: spec.walls,
        objects,
        noise_seed: substream(spec.seed, "texture"),
    };

    let k = Intrinsics::from_fov(spec.image.width, spec.image.height, spec.image.hfov_deg)
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let traj = &spec.trajectory;
    let n = traj.views;
    let mut jitter_rng = rng_from(substream(spec.seed, "trajectory"));
    let target = Vec3::from(traj.look_at);
    let mut cameras = Vec::with_capacity(n);
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let mut eye = match &traj.path {
            TrajectoryKind::Line { start, end } => {
                Vec3::from(*start) + (Vec3::from(*end) - Vec3::from(*start)) * s
            }
            TrajectoryKind::Arc {
                center,
                radius,
                start_deg,
                end_deg,
            } => {
                let a = (start_deg + (end_deg - start_deg) * s).to_radians();
                Vec3::from(*center) + Vec3::new(a.sin(), 0.0, -a.cos()) * *radius
            }
        };
        if traj.jitter > 0.0 {
            for c in eye.iter_mut() {
                *c += jitter_rng.gen_range(-traj.jitter..=traj.jitter);
            }
        }
        if !scene.contains_free_point(&eye) {
            return Err(Error::InvalidSpec(format!(
                "camera {i} at {:?} is outside the room or inside an object",
                eye.as_slice()
            )));
        }
        let pose = Pose::look_at(eye, target, Vec3::y()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        cameras.push(Camera::new(pose, k));
    }
    Ok((scene, cameras))
}

impl Scene {
    fn contains_free_point(&self, p: &Vec3) -> bool {
        let inside_room = (0..3).all(|a| p[a].abs() < self.half[a] - 1e-6);
        let in_object = self.objects.iter().any(|o| match &o.shape {
            Primitive::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Primitive::Sphere { center, radius } => (p - center).norm() <= *radius,
            Primitive::Plane { .. } => false,
        });
        inside_room && !in_object
    }

    /// Axis-aligned bounds of the room interior.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        (-self.half, self.half)
    }

    /// Nearest hit with positive ray parameter, or `None` if the ray escapes.
    pub fn raycast(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<(f64, Vec3, Surface)> = None;
        let mut consider = |t: f64, s: Surface| {
            if t > 0.0 && t.is_finite() && best.as_ref().map_or(true, |b| t < b.0) {
                best = Some((t, ray.at(t), s));
            }
        };

        // Room interior: exit point of the slab.
        let mut t_exit = f64::INFINITY;
        let mut exit_face = None;
        for a in 0..3 {
            let d = ray.direction[a];
            if d != 0.0 {
                let bound = if d > 0.0 { self.half[a] } else { -self.half[a] };
                let t = (bound - ray.origin[a]) / d;
                if t < t_exit {
                    t_exit = t;
                    exit_face = Some((a, d > 0.0));
                }
            }
        }
        if let Some((axis, positive)) = exit_face {
            consider(t_exit, Surface::Wall { axis, positive });
        }

        for (idx, obj) in self.objects.iter().enumerate() {
            match &obj.shape {
                Primitive::Box { min, max } => {
                    if let Some((t, axis)) = ray_box(ray, min, max) {
                        consider(t, Surface::Box { idx, axis });
                    }
                }
                Primitive::Sphere { center, radius } => {
                    if let Some(t) = ray_sphere(ray, center, *radius) {
                        consider(t, Surface::Sphere { idx });
                    }
                }
                Primitive::Plane {
                    axis,
                    position,
                    min,
                    max,
                } => {
                    let d = ray.direction[*axis];
                    if d != 0.0 {
                        let t = (position - ray.origin[*axis]) / d;
                        let p = ray.at(t);
                        let (a, b) = other_axes(*axis);
                        if p[a] >= min[0] && p[a] <= max[0] && p[b] >= min[1] && p[b] <= max[1] {
                            consider(t, Surface::Plane { idx });
                        }
                    }
                }
            }
        }

        best.map(|(t, p, surface)| Hit {
            color: self.shade(&p, surface),
            depth: t,
        })
    }

    fn shade(&self, p: &Vec3, surface: Surface) -> Rgb {
        match surface {
            Surface::Wall { axis, positive } => {
                let (a, b) = other_axes(axis);
                let tex = self.walls.by_face(axis, positive);
                let face_id = (axis * 2 + positive as usize) as u64;
                texture_color(tex, p[a], p[b], self.noise_seed ^ face_id)
            }
            Surface::Box { idx, axis } => {
                let (a, b) = other_axes(axis);
                let seed = self.noise_seed ^ (100 + idx as u64);
                texture_color(&self.objects[idx].texture, p[a], p[b], seed)
            }
            Surface::Sphere { idx } => {
                let Primitive::Sphere { center, radius } = &self.objects[idx].shape else {
                    unreachable!("surface/primitive mismatch")
                };
                let q = (p - center) / *radius;
                let u = q.z.atan2(q.x) * radius;
                let v = q.y.clamp(-1.0, 1.0).asin() * radius;
                texture_color(&self.objects[idx].texture, u, v, self.noise_seed ^ (100 + idx as u64))
            }
            Surface::Plane { idx } => {
                let Primitive::Plane { axis, .. } = &self.objects[idx].shape else {
                    unreachable!("surface/primitive mismatch")
                };
                let (a, b) = other_axes(*axis);
                texture_color(&self.objects[idx].texture, p[a], p[b], self.noise_seed ^ (100 + idx as u64))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Wall { axis: usize, positive: bool },
    Box { idx: usize, axis: usize },
    Sphere { idx: usize },
    Plane { idx: usize },
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Entry parameter and entry axis of a ray hitting a solid box from outside.
fn ray_box(ray: &Ray, min: &Vec3, max: &Vec3) -> Option<(f64, usize)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        let d = ray.direction[a];
        if d == 0.0 {
            if ray.origin[a] < min[a] || ray.origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((min[a] - ray.origin[a]) / d, (max[a] - ray.origin[a]) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
        }
        t1 = t1.min(tb);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

fn ray_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let a = ray.direction.norm_squared();
    let half_b = oc.dot(&ray.direction);
    let c = oc.norm_squared() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let near = (-half_b - sq) / a;
    let far = (-half_b + sq) / a;
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

fn texture_color(tex: &TextureSpec, u: f64, v: f64, seed: u64) -> Rgb {
    if tex.amplitude == 0.0 {
        return tex.color;
    }
    let (su, sv) = (u / tex.scale, v / tex.scale);
    let pattern = match tex.kind {
        TextureKind::Solid => 0.0,
        TextureKind::Checker => {
            if (su.floor() as i64 + sv.floor() as i64).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            }
        }
        TextureKind::Stripes => {
            if su.floor() as i64 % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        TextureKind::Noise => {
            (0.65 * value_noise(su, sv, seed) + 0.35 * value_noise(2.0 * su, 2.0 * sv, seed ^ 0x5bd1)).clamp(-1.0, 1.0)
        }
    };
    tex.color.map(|c| (c + 0.5 * tex.amplitude * pattern).clamp(0.0, 1.0))
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smoothstep-interpolated lattice noise in `[-1, 1]`.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Renders color (averaged over the supersample grid) and pixel-center depth.
pub fn render_view(scene: &Scene, pose: &Pose, k: &Intrinsics, supersample: usize) -> Result<(Image, DepthMap)> {
    let ss = supersample.max(1);
    let rows: Vec<Result<Vec<(Rgb, f64)>>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            (0..k.width)
                .map(|x| {
                    let center = pixel_ray(k, pose, (x as f64 + 0.5, y as f64 + 0.5));
                    let hit = scene.raycast(&center).ok_or_else(|| {
                        Error::InvalidSpec(format!("pixel ({x}, {y}) ray escapes the scene"))
                    })?;
                    if ss == 1 {
                        return Ok((hit.color, hit.depth));
                    }
                    let mut acc = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                            let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                            let c = scene
                                .raycast(&pixel_ray(k, pose, (u, v)))
                                .map_or(hit.color, |h| h.color);
                            for ch in 0..3 {
                                acc[ch] += c[ch];
                            }
                        }
                    }
                    let n = (ss * ss) as f64;
                    Ok((acc.map(|c| c / n), hit.depth))
                })
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity(k.pixel_count());
    let mut depth = Vec::with_capacity(k.pixel_count());
    for row in rows {
        for (c, d) in row? {
            pixels.push(c);
            depth.push(d);
        }
    }
    Ok((Image::from_pixels(k.width, k.height, pixels)?, DepthMap::from_values(k.width, k.height, depth)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Keep probability proportional to local image gradient, mimicking MVS.
    Gradient,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseDepthSpec {
    pub keep_fraction: f64,
    pub selection: Selection,
    /// Relative multiplicative noise standard deviation.
    pub noise_sigma: f64,
    /// Global scale of the reconstruction frame.
    pub scale: f64,
    /// Gradient selection weight floor, as a fraction of the mean gradient;
    /// lets a few samples land on flat regions.
    #[serde(default = "default_gradient_floor")]
    pub gradient_floor: f64,
}

fn default_gradient_floor() -> f64 {
    0.05
}

impl Default for SparseDepthSpec {
    fn default() -> Self {
        Self {
            keep_fraction: 0.05,
            selection: Selection::Gradient,
            noise_sigma: 0.0,
            scale: 1.0,
            gradient_floor: default_gradient_floor(),
        }
    }
}

impl SparseDepthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep fraction {} outside (0, 1]", self.keep_fraction)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("sparse noise sigma must be >= 0".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("sparse scale must be > 0".into()));
        }
        if !(self.gradient_floor >= 0.0) {
            return Err(Error::Config("gradient floor must be >= 0".into()));
        }
        Ok(())
    }
}

fn luminance(c: &Rgb) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Central-difference luminance gradient magnitude (one-sided at borders).
fn gradient_magnitude(image: &Image) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let lum: Vec<f64> = image.pixels.iter().map(luminance).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = (lum[y * w + xr] - lum[y * w + xl]) / (xr - xl).max(1) as f64;
            let gy = (lum[yd * w + x] - lum[yu * w + x]) / (yd - yu).max(1) as f64;
            out[y * w + x] = gx.hypot(gy);
        }
    }
    out
}

/// Samples a sparse, noisy, globally scaled subset of a ground-truth depth map.
pub fn simulate_sparse_depth(gt: &DepthMap, image: &Image, spec: &SparseDepthSpec, rng: &mut Rng) -> Result<DepthMap> {
    spec.validate()?;
    crate::image::ensure_same_size(gt, image, "sparse depth simulation")?;
    let n = gt.len();
    let probs: Vec<f64> = match spec.selection {
        Selection::Uniform => vec![spec.keep_fraction; n],
        Selection::Gradient => {
            let grad = gradient_magnitude(image);
            let mean = grad.iter().sum::<f64>() / n as f64;
            if mean <= 0.0 {
                vec![spec.keep_fraction; n]
            } else {
                let floor = spec.gradient_floor * mean;
                let total: f64 = grad.iter().map(|g| g + floor).sum();
                grad.iter()
                    .map(|g| (spec.keep_fraction * n as f64 * (g + floor) / total).min(1.0))
                    .collect()
            }
        }
    };
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut out = DepthMap::empty(gt.width, gt.height);
    for i in 0..n {
        let keep = rng.gen::<f64>() < probs[i];
        let eps = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        if keep && gt.valid[i] {
            let v = spec.scale * gt.values[i] * (1.0 + eps);
            out.values[i] = if v > 0.0 { v } else { 1e-3 * spec.scale * gt.values[i] };
            out.valid[i] = true;
        }
    }
    Ok(out)
}
