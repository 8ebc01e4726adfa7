//! Analysis-by-synthesis fitting of a model to an image by
//! Metropolis–Hastings, and recognition from the fitted latents.

pub(crate) mod chain;
mod fit;
mod recognition;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRGB, Point2};
use crate::mesh::{vertex_normals, TriMesh, Vec3};
use crate::model::{Latents, MorphableModel};
use crate::render::{
    irradiance_basis, project_landmarks, rasterize, rasterize_geometry, Camera, Pose, RenderOutput, SHIllumination,
};

pub use chain::{drift_block, metropolis_accept, AcceptanceStats, ProposalKind};
pub use fit::{fit_image, initialize, FitResult};
pub use recognition::{kde_recognize, recognize, recognize_images, ComponentOutcome, KdeRecognition, Match};

/// Penalty offset (px) charged for an annotated landmark that projects
/// behind the camera.
const BEHIND_CAMERA_OFFSET: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    /// Rotation drift, radians.
    pub rotation_sigma: f64,
    /// Translation drift, millimetres.
    pub translation_sigma: f64,
    pub shape_sigma: f64,
    pub albedo_sigma: f64,
    /// Each proposal multiplies its σ by one of these, chosen uniformly.
    pub step_scales: Vec<f64>,
    /// Latent coefficients perturbed per block proposal.
    pub block_size: usize,
    /// Probabilities of pose, shape and albedo proposals.
    pub mixture: [f64; 3],
    /// Foreground noise, RGB units.
    pub sigma_fg: f64,
    /// Landmark noise, pixels.
    pub sigma_lm: f64,
    pub histogram_bins: usize,
    pub seed: u64,
    /// Accepted steps between illumination re-solves.
    pub illumination_period: usize,
    /// Landmark-only steps used to refine the initial pose.
    pub init_steps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 3000,
            rotation_sigma: 0.005,
            translation_sigma: 0.5,
            shape_sigma: 0.1,
            albedo_sigma: 0.1,
            step_scales: vec![1.0, 0.3, 0.1, 0.03],
            block_size: 10,
            mixture: [0.3, 0.35, 0.35],
            sigma_fg: 0.043,
            sigma_lm: 2.0,
            histogram_bins: 8,
            seed: 0,
            illumination_period: 50,
            init_steps: 500,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.rotation_sigma, self.translation_sigma, self.shape_sigma, self.albedo_sigma];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("proposal σ must be finite and non-negative".into()));
        }
        if !(self.sigma_fg > 0.0 && self.sigma_lm > 0.0) {
            return Err(Error::InvalidArgument("likelihood σ must be positive".into()));
        }
        if self.iterations == 0 || self.histogram_bins == 0 || self.block_size == 0 || self.illumination_period == 0 {
            return Err(Error::InvalidArgument("iterations, bins, block size and period must be ≥ 1".into()));
        }
        if self.step_scales.is_empty() || self.step_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("step scales must be non-empty and non-negative".into()));
        }
        if self.mixture.iter().any(|w| !(*w >= 0.0)) || self.mixture.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("proposal mixture weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub pose: Pose,
    pub camera: Camera,
    pub sh: SHIllumination,
    pub latents: Latents,
}

impl SceneParams {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.sh.is_finite() && self.latents.is_finite()
    }
}

/// Additive pieces of the log posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTerms {
    /// `-Σ ‖rendered − observed‖² / (2σ²)` over foreground pixels.
    pub foreground_residual: f64,
    /// Gaussian normalization for the foreground pixels.
    pub foreground_normalization: f64,
    pub background: f64,
    pub landmarks: f64,
    pub prior: f64,
}

impl LikelihoodTerms {
    pub fn total(&self) -> f64 {
        self.foreground_residual + self.foreground_normalization + self.background + self.landmarks + self.prior
    }
}

/// Color histogram of a whole image, used as the density of pixels the
/// model does not explain.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundModel {
    pub bins: usize,
    log_density: Vec<f64>,
}

impl BackgroundModel {
    /// Laplace-smoothed histogram, normalized as a density on the unit cube.
    pub fn new(image: &ImageRGB, bins: usize) -> Self {
        let cells = bins * bins * bins;
        let mut counts = vec![0usize; cells];
        for p in &image.pixels {
            counts[Self::cell(bins, p)] += 1;
        }
        let total = (image.pixels.len() + cells) as f64;
        let log_density = counts
            .iter()
            .map(|&c| ((c as f64 + 1.0) / total * cells as f64).ln())
            .collect();
        BackgroundModel { bins, log_density }
    }

    fn cell(bins: usize, p: &Vec3) -> usize {
        let idx = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        (idx(p.x) * bins + idx(p.y)) * bins + idx(p.z)
    }

    pub fn log_density(&self, p: &Vec3) -> f64 {
        self.log_density[Self::cell(self.bins, p)]
    }
}

/// Cached per-image quantities shared by every likelihood evaluation.
pub struct ImageTarget<'a> {
    pub image: &'a ImageRGB,
    pixel_background: Vec<f64>,
    background_total: f64,
}

impl<'a> ImageTarget<'a> {
    pub fn new(image: &'a ImageRGB, bins: usize) -> Self {
        let hist = BackgroundModel::new(image, bins);
        let pixel_background: Vec<f64> = image.pixels.iter().map(|p| hist.log_density(p)).collect();
        let background_total = pixel_background.iter().sum();
        ImageTarget {
            image,
            pixel_background,
            background_total,
        }
    }

    /// Foreground Gaussian and background histogram terms for a rendering.
    pub fn pixel_terms(&self, render: &RenderOutput, sigma_fg: f64) -> LikelihoodTerms {
        let mut residual = 0.0;
        let mut fg_background = 0.0;
        let mut count = 0usize;
        for (i, &m) in render.mask.iter().enumerate() {
            if m {
                residual += (render.color.pixels[i] - self.image.pixels[i]).norm_squared();
                fg_background += self.pixel_background[i];
                count += 1;
            }
        }
        let norm = -((3 * count) as f64) * (sigma_fg * (2.0 * std::f64::consts::PI).sqrt()).ln();
        LikelihoodTerms {
            foreground_residual: -residual / (2.0 * sigma_fg * sigma_fg),
            foreground_normalization: norm,
            background: self.background_total - fg_background,
            ..Default::default()
        }
    }
}

/// Isotropic Gaussian log density of projected-vs-annotated landmarks over
/// names present in both.
pub fn landmark_log_likelihood(
    mesh: &TriMesh,
    pose: &Pose,
    camera: &Camera,
    annotated: &BTreeMap<String, Point2>,
    sigma: f64,
) -> f64 {
    let projected = project_landmarks(mesh, pose, camera);
    let norm = -(2.0 * std::f64::consts::PI * sigma * sigma).ln();
    annotated
        .iter()
        .filter_map(|(name, target)| projected.get(name).map(|p| (p, target)))
        .map(|(p, target)| {
            let d2 = match p {
                Some(p) => (p.x - target.x).powi(2) + (p.y - target.y).powi(2),
                None => 2.0 * BEHIND_CAMERA_OFFSET * BEHIND_CAMERA_OFFSET,
            };
            norm - d2 / (2.0 * sigma * sigma)
        })
        .sum()
}

/// Standard-normal log density of all latents.
pub fn latent_log_prior(latents: &Latents) -> f64 {
    let d = (latents.shape.len() + latents.albedo.len()) as f64;
    latents.log_prior() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// Instance and rendering of a scene.
pub fn render_scene(model: &MorphableModel, scene: &SceneParams) -> Result<(TriMesh, RenderOutput)> {
    let mesh = model.instance(&scene.latents)?;
    let out = rasterize(&mesh, &scene.pose, &scene.camera, &scene.sh);
    Ok((mesh, out))
}

pub(crate) fn evaluate(
    model: &MorphableModel,
    target: &ImageTarget,
    scene: &SceneParams,
    cfg: &FitConfig,
) -> Result<(LikelihoodTerms, RenderOutput)> {
    let (mesh, render) = render_scene(model, scene)?;
    let mut terms = target.pixel_terms(&render, cfg.sigma_fg);
    terms.landmarks = landmark_log_likelihood(&mesh, &scene.pose, &scene.camera, &target.image.landmarks, cfg.sigma_lm);
    terms.prior = latent_log_prior(&scene.latents);
    Ok((terms, render))
}

/// Full log posterior (up to the evidence) of `scene` given `image`.
pub fn log_likelihood(scene: &SceneParams, model: &MorphableModel, image: &ImageRGB, cfg: &FitConfig) -> Result<LikelihoodTerms> {
    let target = ImageTarget::new(image, cfg.histogram_bins);
    Ok(evaluate(model, &target, scene, cfg)?.0)
}

/// Outcome of a closed-form illumination estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationSolve {
    pub sh: SHIllumination,
    /// The normal equations were singular and a ridge was added.
    pub regularized: bool,
}

const RIDGE: f64 = 1e-6;

/// Least-squares lighting for fixed geometry and albedo, using the
/// unclamped shading model at every foreground pixel.
pub fn solve_illumination(scene: &SceneParams, model: &MorphableModel, image: &ImageRGB) -> Result<IlluminationSolve> {
    let mesh = model.instance(&scene.latents)?;
    solve_illumination_for(&mesh, &scene.pose, &scene.camera, image)
}

pub fn solve_illumination_for(mesh: &TriMesh, pose: &Pose, camera: &Camera, image: &ImageRGB) -> Result<IlluminationSolve> {
    if image.width != camera.width || image.height != camera.height {
        return Err(Error::DimensionMismatch {
            expected: camera.width * camera.height,
            got: image.width * image.height,
        });
    }
    let frags = rasterize_geometry(&mesh.vertices, &mesh.triangles, pose, camera);
    let basis: Vec<[f64; 9]> = vertex_normals(mesh).iter().map(|n| irradiance_basis(&(pose.rotation * n))).collect();
    let pixels: Vec<usize> = frags.foreground().collect();
    if pixels.len() < 9 {
        return Err(Error::InvalidArgument(format!(
            "illumination needs at least 9 foreground pixels, got {}",
            pixels.len()
        )));
    }
    let mut sh = SHIllumination::zero();
    let mut regularized = false;
    for c in 0..3 {
        let mut ata = DMatrix::<f64>::zeros(9, 9);
        let mut atb = DVector::<f64>::zeros(9);
        for &i in &pixels {
            let t = mesh.triangles[frags.triangle[i].unwrap() as usize];
            let mut row = [0.0; 9];
            for (corner, &w) in t.iter().zip(&frags.bary[i]) {
                let v = *corner as usize;
                let a = mesh.albedo[v][c] * w;
                for k in 0..9 {
                    row[k] += a * basis[v][k];
                }
            }
            let obs = image.pixels[i][c];
            for a in 0..9 {
                atb[a] += row[a] * obs;
                for b in 0..9 {
                    ata[(a, b)] += row[a] * row[b];
                }
            }
        }
        let eig = ata.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let x = if hi > 0.0 && lo > 1e-12 * hi {
            ata.clone().cholesky().map(|ch| ch.solve(&atb))
        } else {
            None
        };
        let x = match x {
            Some(x) => x,
            None => {
                regularized = true;
                let ridge = &ata + DMatrix::identity(9, 9) * RIDGE;
                ridge
                    .cholesky()
                    .ok_or_else(|| Error::InvalidArgument("illumination system is not solvable".into()))?
                    .solve(&atb)
            }
        };
        for k in 0..9 {
            sh.coeffs[k][c] = x[k];
        }
    }
    Ok(IlluminationSolve { sh, regularized })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernels::{builtin_pair, HyperParams};
    use crate::lowrank::NystromConfig;
    use crate::mesh::MirrorTransform;
    use crate::model::build_model;
    use crate::synthetic::SyntheticFace;

    pub(crate) fn face_model() -> MorphableModel {
        let face = SyntheticFace::small().build();
        let pair = builtin_pair("standard-full", &HyperParams::default(), MirrorTransform::default()).unwrap();
        build_model(
            "t",
            &face,
            &pair.shape,
            &pair.albedo,
            &NystromConfig::new(150, 12, 1),
            &NystromConfig::new(150, 12, 2),
        )
        .unwrap()
    }

    pub(crate) fn scene(model: &MorphableModel, size: usize) -> SceneParams {
        SceneParams {
            pose: Pose::frontal(400.0),
            camera: Camera::with_default_focal(size, size),
            sh: SHIllumination::ambient(1.0),
            latents: model.zero_latents(),
        }
    }

    fn noise_image(size: usize, seed: u64) -> ImageRGB {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..size * size).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        ImageRGB::from_pixels(size, size, pixels).unwrap()
    }

    #[test]
    fn exact_rendering_has_zero_residual() {
        let model = face_model();
        let s = scene(&model, 48);
        let (mesh, out) = render_scene(&model, &s).unwrap();
        let mut image = out.composite(&noise_image(48, 1));
        image.landmarks = project_landmarks(&mesh, &s.pose, &s.camera)
            .into_iter()
            .map(|(k, v)| (k, v.unwrap()))
            .collect();
        let cfg = FitConfig::default();
        let terms = log_likelihood(&s, &model, &image, &cfg).unwrap();
        assert_eq!(terms.foreground_residual, 0.0);
        let lm_max = image.landmarks.len() as f64 * -(2.0 * std::f64::consts::PI * cfg.sigma_lm * cfg.sigma_lm).ln();
        assert!((terms.landmarks - lm_max).abs() < 1e-9);

        // One channel of one foreground pixel off by Δ.
        let i = out.mask.iter().position(|&m| m).unwrap();
        let delta = 0.1;
        let mut shifted = image.clone();
        shifted.pixels[i].x += delta;
        let moved = log_likelihood(&s, &model, &shifted, &cfg).unwrap();
        let expected = -delta * delta / (2.0 * cfg.sigma_fg * cfg.sigma_fg);
        assert!((moved.foreground_residual - expected).abs() < 1e-9);
    }

    #[test]
    fn background_only_scene_matches_histogram() {
        let model = face_model();
        let mut s = scene(&model, 24);
        s.pose.translation = Vec3::new(1e5, 0.0, 400.0);
        let image = noise_image(24, 2);
        let cfg = FitConfig::default();
        let terms = log_likelihood(&s, &model, &image, &cfg).unwrap();
        // Direct evaluation: count colors into 8³ cells, smooth, normalize.
        let bins = 8usize;
        let cell = |v: &Vec3| {
            let q = |c: f64| ((c * bins as f64).floor() as usize).min(bins - 1);
            q(v.x) * 64 + q(v.y) * 8 + q(v.z)
        };
        let mut counts = vec![0.0; 512];
        for p in &image.pixels {
            counts[cell(p)] += 1.0;
        }
        let n = image.pixels.len() as f64;
        let expected: f64 = image
            .pixels
            .iter()
            .map(|p| ((counts[cell(p)] + 1.0) / (n + 512.0) * 512.0f64).ln())
            .sum();
        assert!((terms.background - expected).abs() < 1e-9);
        assert_eq!(terms.foreground_residual, 0.0);
    }

    #[test]
    fn landmark_term_vanishes_for_broad_noise() {
        let model = face_model();
        let s = scene(&model, 48);
        let mut image = ImageRGB::new(48, 48, Vec3::zeros());
        image.landmarks.insert("nose_tip".into(), Point2::new(10.0, 12.0));
        let mut other = s.clone();
        other.pose.translation.x += 30.0;
        let mesh = model.instance(&s.latents).unwrap();
        let gap = |sigma: f64| {
            landmark_log_likelihood(&mesh, &s.pose, &s.camera, &image.landmarks, sigma)
                - landmark_log_likelihood(&mesh, &other.pose, &other.camera, &image.landmarks, sigma)
        };
        assert!(gap(1.0).abs() > 1.0);
        assert!(gap(1e6).abs() < 1e-6);
    }

    fn lit_scene(model: &MorphableModel) -> (SceneParams, ImageRGB) {
        let mut s = scene(model, 64);
        s.sh = SHIllumination::directional(&Vec3::new(0.3, -0.4, -1.0), 0.35);
        s.sh.coeffs[0] = [0.6, 0.55, 0.58];
        let (_, out) = render_scene(model, &s).unwrap();
        (s, out.composite(&noise_image(64, 3)))
    }

    #[test]
    fn illumination_is_recovered() {
        let model = face_model();
        let (s, image) = lit_scene(&model);
        // The test light must stay inside the unclamped range for exact recovery.
        let mesh = model.instance(&s.latents).unwrap();
        let lin = vertex_normals(&mesh)
            .iter()
            .zip(&mesh.albedo)
            .map(|(n, a)| crate::render::shade_linear(a, &(s.pose.rotation * n), &s.sh))
            .fold(0.0f64, |m, c| m.max(c.max()));
        assert!(lin < 1.0);
        let solved = solve_illumination(&s, &model, &image).unwrap();
        assert!(!solved.regularized);
        let scale = s.sh.to_vec().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in solved.sh.to_vec().iter().zip(s.sh.to_vec()) {
            assert!((a - b).abs() <= 1e-4 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn ambient_illumination_is_recovered() {
        let model = face_model();
        let s = scene(&model, 64);
        let (_, out) = render_scene(&model, &s).unwrap();
        let image = out.composite(&noise_image(64, 4));
        let solved = solve_illumination(&s, &model, &image).unwrap().sh;
        for c in 0..3 {
            assert!((solved.coeffs[0][c] - s.sh.coeffs[0][c]).abs() < 1e-4 * s.sh.coeffs[0][c]);
            for k in 1..9 {
                assert!(solved.coeffs[k][c].abs() < 1e-4);
            }
        }
    }

    #[test]
    fn solved_illumination_beats_grid_search() {
        let model = face_model();
        let (s, mut image) = lit_scene(&model);
        // Perturb the observation so the optimum is not the generating light.
        for (i, p) in image.pixels.iter_mut().enumerate() {
            p.x = (p.x + 0.05 * ((i * 37 % 11) as f64 / 10.0 - 0.5)).clamp(0.0, 1.0);
        }
        let solved = solve_illumination(&s, &model, &image).unwrap().sh;
        // Restrict to the red band-0 and band-1 z coefficients; the rest fixed at the solution.
        let mesh = model.instance(&s.latents).unwrap();
        let frags = rasterize_geometry(&mesh.vertices, &mesh.triangles, &s.pose, &s.camera);
        let normals: Vec<Vec3> = vertex_normals(&mesh).iter().map(|n| s.pose.rotation * n).collect();
        let sse = |c0: f64, c2: f64| {
            let mut sh = solved;
            sh.coeffs[0][0] = c0;
            sh.coeffs[2][0] = c2;
            let lin: Vec<Vec3> = normals
                .iter()
                .zip(&mesh.albedo)
                .map(|(n, a)| crate::render::shade_linear(a, n, &sh))
                .collect();
            frags
                .foreground()
                .map(|i| (frags.interpolate(i, &mesh.triangles, &lin).x - image.pixels[i].x).powi(2))
                .sum::<f64>()
        };
        let (b0, b2) = (solved.coeffs[0][0], solved.coeffs[2][0]);
        let best = sse(b0, b2);
        let step = 0.01;
        for i in -10..=10 {
            for j in -10..=10 {
                let (c0, c2) = (b0 + step * i as f64, b2 + step * j as f64);
                assert!(sse(c0, c2) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn solved_illumination_maximizes_likelihood() {
        use rand::{Rng, SeedableRng};
        let model = face_model();
        let (mut s, image) = lit_scene(&model);
        let cfg = FitConfig::default();
        s.sh = solve_illumination(&s, &model, &image).unwrap().sh;
        let best = log_likelihood(&s, &model, &image, &cfg).unwrap().total();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut t = s.clone();
            for k in 0..9 {
                for c in 0..3 {
                    t.sh.coeffs[k][c] += 0.02 * (rng.random::<f64>() - 0.5);
                }
            }
            assert!(log_likelihood(&t, &model, &image, &cfg).unwrap().total() <= best + 1e-9);
        }
    }

    #[test]
    fn constant_normals_fall_back_to_ridge() {
        let v = vec![
            Vec3::new(-100.0, -100.0, 0.0),
            Vec3::new(100.0, -100.0, 0.0),
            Vec3::new(100.0, 100.0, 0.0),
            Vec3::new(-100.0, 100.0, 0.0),
        ];
        let mesh = TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], vec![Vec3::new(0.5, 0.5, 0.5); 4]).unwrap();
        let image = ImageRGB::new(32, 32, Vec3::new(0.4, 0.4, 0.4));
        let solved = solve_illumination_for(&mesh, &Pose::frontal(400.0), &Camera::with_default_focal(32, 32), &image).unwrap();
        assert!(solved.regularized);
        assert!(solved.sh.is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            sigma_fg: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
