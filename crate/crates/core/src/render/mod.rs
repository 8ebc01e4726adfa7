//! Pinhole projection, spherical-harmonics shading and z-buffered
//! rasterization of vertex-colored meshes.
//!
//! Camera space follows the usual vision convention: x right, y down,
//! z forward. Model space has the face looking along +z with +y up, so the
//! frontal pose is a half turn about x.

mod raster;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{mask_png_bytes, pfm_bytes, ImageRGB, Point2};
use crate::mesh::{TriMesh, Vec3};

pub use raster::{rasterize, rasterize_colors, rasterize_geometry, Fragments};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub principal: Point2,
}

impl Camera {
    /// Principal point at the image center.
    pub fn new(width: usize, height: usize, focal: f64) -> Self {
        Camera {
            width,
            height,
            focal,
            principal: Point2::new(width as f64 / 2.0, height as f64 / 2.0),
        }
    }

    /// Focal length defaults to the larger image dimension.
    pub fn with_default_focal(width: usize, height: usize) -> Self {
        Camera::new(width, height, width.max(height) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = (0.0..=self.width as f64).contains(&self.principal.x)
            && (0.0..=self.height as f64).contains(&self.principal.y);
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0 && self.focal.is_finite()) || !inside {
            return Err(Error::InvalidArgument(format!("invalid camera {self:?}")));
        }
        Ok(())
    }

    /// Pixel of a camera-space point; `None` at or behind the image plane.
    pub fn to_pixel(&self, p: &Vec3) -> Option<Point2> {
        (p.z > 0.0).then(|| {
            Point2::new(
                self.focal * p.x / p.z + self.principal.x,
                self.focal * p.y / p.z + self.principal.y,
            )
        })
    }

    /// Camera-space point at `depth` behind pixel `px`.
    pub fn back_project(&self, px: &Point2, depth: f64) -> Vec3 {
        Vec3::new(
            (px.x - self.principal.x) * depth / self.focal,
            (px.y - self.principal.y) * depth / self.focal,
            depth,
        )
    }
}

/// Rigid model-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    /// Millimetres.
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// `[w, x, y, z]`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;

    fn try_from(r: PoseRepr) -> std::result::Result<Self, String> {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0 && q.norm().is_finite()) || r.translation.iter().any(|v| !v.is_finite()) {
            return Err("pose must be finite with a nonzero quaternion".into());
        }
        Ok(Pose {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vec3::from(r.translation),
        })
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    /// Face-on view from `distance` mm.
    pub fn frontal(distance: f64) -> Self {
        Pose::turned(0.0, distance)
    }

    /// Frontal view with the head turned by `yaw` radians about its up axis.
    pub fn turned(yaw: f64, distance: f64) -> Self {
        let flip = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
        let turn = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw);
        Pose::new(flip * turn, Vec3::new(0.0, 0.0, distance))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Left-multiply the rotation by `exp(ω)`.
    pub fn rotated(&self, omega: &Vec3) -> Pose {
        Pose::new(UnitQuaternion::from_scaled_axis(*omega) * self.rotation, self.translation)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Pose) -> Pose {
        Pose::new(self.rotation * inner.rotation, self.rotation * inner.translation + self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

impl From<Rotation3<f64>> for Pose {
    fn from(r: Rotation3<f64>) -> Self {
        Pose::new(UnitQuaternion::from_rotation_matrix(&r), Vec3::zeros())
    }
}

/// Pixel and camera-space depth of a model-space point.
pub fn project(camera: &Camera, pose: &Pose, point: &Vec3) -> Result<(Point2, f64)> {
    let p = pose.apply(point);
    camera.to_pixel(&p).map(|px| (px, p.z)).ok_or(Error::BehindCamera(p.z))
}

/// Landmark pixels; landmarks behind the camera map to `None`.
pub fn project_landmarks(mesh: &TriMesh, pose: &Pose, camera: &Camera) -> BTreeMap<String, Option<Point2>> {
    mesh.landmarks
        .iter()
        .map(|(name, &i)| (name.clone(), project(camera, pose, &mesh.vertices[i]).ok().map(|(px, _)| px)))
        .collect()
}

const Y0: f64 = 0.282_094_791_773_878_14;
const Y1: f64 = 0.488_602_511_902_919_9;
const Y2: f64 = 1.092_548_430_592_079_2;
const Y20: f64 = 0.315_391_565_252_520_05;
const Y22: f64 = 0.546_274_215_296_039_6;
/// Clamped-cosine convolution weights per band.
pub const LAMBERT_BANDS: [f64; 3] = [PI, 2.0 * PI / 3.0, PI / 4.0];

/// Real spherical harmonics up to band 2 in the order
/// `(0,0) (1,-1) (1,0) (1,1) (2,-2) (2,-1) (2,0) (2,1) (2,2)`.
pub fn sh_basis(n: &Vec3) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Y0,
        Y1 * y,
        Y1 * z,
        Y1 * x,
        Y2 * x * y,
        Y2 * y * z,
        Y20 * (3.0 * z * z - 1.0),
        Y2 * x * z,
        Y22 * (x * x - y * y),
    ]
}

fn band(k: usize) -> usize {
    match k {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

/// Irradiance basis `B_k(n)`: spherical harmonics scaled by the Lambertian
/// convolution constants.
pub fn irradiance_basis(n: &Vec3) -> [f64; 9] {
    let mut b = sh_basis(n);
    for (k, v) in b.iter_mut().enumerate() {
        *v *= LAMBERT_BANDS[band(k)];
    }
    b
}

/// Nine lighting coefficients per color channel, indexed `[k][channel]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SHIllumination {
    pub coeffs: [[f64; 3]; 9],
}

impl Default for SHIllumination {
    fn default() -> Self {
        SHIllumination::ambient(1.0)
    }
}

impl SHIllumination {
    pub fn zero() -> Self {
        SHIllumination { coeffs: [[0.0; 3]; 9] }
    }

    /// Uniform light; `ambient(1.0)` reproduces albedo exactly.
    pub fn ambient(level: f64) -> Self {
        let mut sh = SHIllumination::zero();
        sh.coeffs[0] = [level / (PI * Y0); 3];
        sh
    }

    /// White light whose radiance is the clamped cosine lobe `max(0, ω·d)`
    /// scaled by `intensity`.
    pub fn directional(direction: &Vec3, intensity: f64) -> Self {
        let d = direction.normalize();
        let y = sh_basis(&d);
        let mut sh = SHIllumination::zero();
        for k in 0..9 {
            sh.coeffs[k] = [intensity * LAMBERT_BANDS[band(k)] * y[k]; 3];
        }
        sh
    }

    /// Coefficients flattened channel-major: 9 red, 9 green, 9 blue.
    pub fn to_vec(&self) -> Vec<f64> {
        (0..3).flat_map(|c| (0..9).map(move |k| self.coeffs[k][c])).collect()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 27 {
            return Err(Error::DimensionMismatch { expected: 27, got: v.len() });
        }
        let mut sh = SHIllumination::zero();
        for c in 0..3 {
            for k in 0..9 {
                sh.coeffs[k][c] = v[9 * c + k];
            }
        }
        Ok(sh)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| v.is_finite())
    }

    /// Per-channel irradiance `Σ_k sh_k · B_k(n)`, unclamped.
    pub fn irradiance(&self, normal: &Vec3) -> Vec3 {
        let b = irradiance_basis(normal);
        let mut e = Vec3::zeros();
        for k in 0..9 {
            for c in 0..3 {
                e[c] += self.coeffs[k][c] * b[k];
            }
        }
        e
    }
}

/// Radiance before any clamping; linear in the lighting coefficients.
pub fn shade_linear(albedo: &Vec3, normal: &Vec3, sh: &SHIllumination) -> Vec3 {
    albedo.component_mul(&sh.irradiance(normal))
}

/// Displayable radiance in `[0, 1]`.
pub fn shade(albedo: &Vec3, normal: &Vec3, sh: &SHIllumination) -> Vec3 {
    shade_linear(albedo, normal, sh).map(|v| v.clamp(0.0, 1.0))
}

/// Result of rendering one view. `mask[i]`, `triangle[i].is_some()` and a
/// finite `depth[i]` always agree.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: ImageRGB,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub triangle: Vec<Option<u32>>,
}

impl RenderOutput {
    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_png(&self) -> Result<Vec<u8>> {
        mask_png_bytes(self.color.width, self.color.height, &self.mask)
    }

    pub fn depth_pfm(&self) -> Vec<u8> {
        pfm_bytes(self.color.width, self.color.height, &self.depth)
    }

    /// Rendering composited over `background` (same size).
    pub fn composite(&self, background: &ImageRGB) -> ImageRGB {
        let mut out = background.clone();
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                out.pixels[i] = self.color.pixels[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> Camera {
        Camera {
            width: 640,
            height: 480,
            focal: 500.0,
            principal: Point2::new(320.0, 240.0),
        }
    }

    #[test]
    fn on_axis_projection() {
        let (px, d) = project(&cam(), &Pose::default(), &Vec3::new(0.0, 0.0, 1000.0)).unwrap();
        assert_eq!((px.x, px.y, d), (320.0, 240.0, 1000.0));
    }

    #[test]
    fn off_axis_projection() {
        let (px, _) = project(&cam(), &Pose::default(), &Vec3::new(100.0, 0.0, 1000.0)).unwrap();
        assert_relative_eq!(px.x, 370.0, epsilon = 1e-12);
        assert_relative_eq!(px.y, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            project(&cam(), &Pose::default(), &Vec3::new(0.0, 0.0, -5.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(project(&cam(), &Pose::default(), &Vec3::zeros()).is_err());
    }

    #[test]
    fn frontal_pose_faces_the_camera() {
        let pose = Pose::frontal(500.0);
        // Model +z (towards the viewer) maps to camera -z, model +y (up) to image up.
        assert_relative_eq!(pose.apply(&Vec3::new(0.0, 0.0, 10.0)).z, 490.0, epsilon = 1e-9);
        assert!(pose.apply(&Vec3::new(0.0, 10.0, 0.0)).y < 0.0);
        assert_relative_eq!(pose.apply(&Vec3::new(10.0, 0.0, 0.0)).x, 10.0, epsilon = 1e-9);
        assert!((pose.rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn landmarks_behind_camera_are_absent() {
        let mut mesh = crate::synthetic::icosphere(1, 10.0, Vec3::new(0.5, 0.5, 0.5));
        mesh.vertices[0] = Vec3::new(0.0, 0.0, 1000.0);
        mesh.vertices[1] = Vec3::new(100.0, 0.0, 1000.0);
        mesh.vertices[2] = Vec3::new(0.0, 0.0, -1000.0);
        mesh.landmarks = [("a", 0), ("b", 1), ("c", 2)].iter().map(|(n, i)| (n.to_string(), *i)).collect();
        let lm = project_landmarks(&mesh, &Pose::default(), &cam());
        assert_eq!(lm["a"], Some(Point2::new(320.0, 240.0)));
        assert_relative_eq!(lm["b"].unwrap().x, 370.0, epsilon = 1e-12);
        assert_eq!(lm["c"], None);
    }

    #[test]
    fn pose_serde_round_trip() {
        let p = Pose::turned(0.3, 400.0);
        let back: Pose = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert!((back.rotation.angle_to(&p.rotation)) < 1e-12);
        assert_eq!(back.translation, p.translation);
    }

    #[test]
    fn ambient_identity() {
        let a = Vec3::new(0.2, 0.5, 0.9);
        let n = Vec3::new(0.3, -0.4, 0.866).normalize();
        assert_relative_eq!(shade(&a, &n, &SHIllumination::ambient(1.0)), a, epsilon = 1e-12);
    }

    #[test]
    fn odd_band_flips_with_normal() {
        let mut sh = SHIllumination::zero();
        sh.coeffs[2] = [0.7, 0.4, 0.1];
        let a = Vec3::new(0.5, 0.6, 0.7);
        let n = Vec3::new(0.2, 0.3, 0.9).normalize();
        assert_relative_eq!(shade_linear(&a, &n, &sh), -shade_linear(&a, &-n, &sh), epsilon = 1e-14);
    }

    #[test]
    fn shading_is_linear_in_coefficients() {
        let a = Vec3::new(0.3, 0.6, 0.2);
        let n = Vec3::new(-0.5, 0.1, 0.7).normalize();
        let s1 = SHIllumination::directional(&Vec3::new(0.0, 0.0, -1.0), 0.8);
        let s2 = SHIllumination::ambient(0.4);
        let mut sum = SHIllumination::zero();
        for k in 0..9 {
            for c in 0..3 {
                sum.coeffs[k][c] = 2.0 * s1.coeffs[k][c] - 3.0 * s2.coeffs[k][c];
            }
        }
        assert_relative_eq!(
            shade_linear(&a, &n, &sum),
            2.0 * shade_linear(&a, &n, &s1) - 3.0 * shade_linear(&a, &n, &s2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sh_basis_is_orthonormal() {
        // Midpoint quadrature over the sphere.
        let (nt, np) = (200, 400);
        let mut gram = [[0.0; 9]; 9];
        for i in 0..nt {
            let theta = (i as f64 + 0.5) * PI / nt as f64;
            for j in 0..np {
                let phi = (j as f64 + 0.5) * 2.0 * PI / np as f64;
                let w = theta.sin() * (PI / nt as f64) * (2.0 * PI / np as f64);
                let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let y = sh_basis(&n);
                for a in 0..9 {
                    for b in 0..9 {
                        gram[a][b] += w * y[a] * y[b];
                    }
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - expected).abs() < 1e-3, "{a} {b} {}", gram[a][b]);
            }
        }
    }

    #[test]
    fn directional_light_matches_quadrature() {
        let d = Vec3::new(0.3, -0.5, 0.8).normalize();
        let sh = SHIllumination::directional(&d, 1.0);
        // Direct integration of ∫ max(0, ω·d) max(0, ω·n) dω.
        let (nt, np) = (180, 360);
        let mut dirs = Vec::with_capacity(nt * np);
        for i in 0..nt {
            let theta = (i as f64 + 0.5) * PI / nt as f64;
            for j in 0..np {
                let phi = (j as f64 + 0.5) * 2.0 * PI / np as f64;
                let w = theta.sin() * (PI / nt as f64) * (2.0 * PI / np as f64);
                let omega = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let l = omega.dot(&d).max(0.0);
                if l > 0.0 {
                    dirs.push((omega, w * l));
                }
            }
        }
        let grid = 64;
        let mut worst = 0.0f64;
        let mut peak = 0.0f64;
        for i in 0..grid {
            let theta = (i as f64 + 0.5) * PI / grid as f64;
            for j in 0..grid {
                let phi = (j as f64 + 0.5) * 2.0 * PI / grid as f64;
                let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let exact: f64 = dirs.iter().map(|(o, w)| w * o.dot(&n).max(0.0)).sum();
                let approx = sh.irradiance(&n).x;
                worst = worst.max((exact - approx).abs());
                peak = peak.max(exact);
            }
        }
        assert!(worst <= 0.02 * peak, "worst {worst} peak {peak}");
    }
}
