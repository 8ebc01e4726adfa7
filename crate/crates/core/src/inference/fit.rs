use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::chain::{run_chain, AcceptanceStats, ProposalKind};
use super::{evaluate, landmark_log_likelihood, solve_illumination, FitConfig, ImageTarget, LikelihoodTerms, SceneParams};
use crate::align::umeyama;
use crate::error::{Error, Result};
use crate::image::{ImageRGB, Point2};
use crate::mesh::Vec3;
use crate::model::MorphableModel;
use crate::render::{Camera, Pose, RenderOutput, SHIllumination};

/// Alternations of back-projection and similarity alignment in the
/// landmark pose initialization.
const INIT_ROUNDS: usize = 20;

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Best state seen by the chain.
    pub scene: SceneParams,
    pub log_posterior: f64,
    pub terms: LikelihoodTerms,
    pub acceptance: BTreeMap<ProposalKind, AcceptanceStats>,
    /// Rendering of the best state (black background).
    pub render: RenderOutput,
    /// Best-seen log posterior after each iteration.
    pub trace: Vec<f64>,
}

/// Model and image landmark positions for names present in both.
fn landmark_pairs(model: &MorphableModel, image: &ImageRGB) -> Result<(Vec<Vec3>, Vec<Point2>)> {
    let (mut points, mut pixels) = (Vec::new(), Vec::new());
    for (name, &v) in &model.reference.landmarks {
        if let Some(px) = image.landmarks.get(name) {
            points.push(model.reference.vertices[v]);
            pixels.push(*px);
        }
    }
    if points.len() < 3 {
        return Err(Error::MissingLandmarks(format!(
            "need at least 3 landmarks shared by model and image, found {}",
            points.len()
        )));
    }
    Ok((points, pixels))
}

fn rms_spread<const D: usize>(points: &[[f64; D]]) -> f64 {
    let n = points.len() as f64;
    let mut c = [0.0; D];
    for p in points {
        for k in 0..D {
            c[k] += p[k] / n;
        }
    }
    (points.iter().map(|p| (0..D).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>()).sum::<f64>() / n).sqrt()
}

/// Pose from landmarks alone: back-project the image landmarks to a
/// nominal depth, align the model landmarks by similarity, and repeat with
/// per-landmark depths from the current pose.
pub fn landmark_pose(model: &MorphableModel, image: &ImageRGB, camera: &Camera) -> Result<Pose> {
    let (points, pixels) = landmark_pairs(model, image)?;
    let spread3 = rms_spread(&points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>());
    let spread2 = rms_spread(&pixels.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>());
    if !(spread2 > 0.0 && spread3 > 0.0) {
        return Err(Error::MissingLandmarks("landmarks are degenerate".into()));
    }
    let mut depths = vec![camera.focal * spread3 / spread2; points.len()];
    let mut pose = Pose::default();
    for _ in 0..INIT_ROUNDS {
        let rays: Vec<Vec3> = pixels.iter().zip(&depths).map(|(px, &d)| camera.back_project(px, d)).collect();
        let sim = umeyama(&points, &rays, true)?;
        // s·R·p + t and R·p + t/s project identically.
        pose = Pose::new(
            nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(sim.rotation)),
            sim.translation / sim.scale,
        );
        depths = points.iter().map(|p| pose.apply(p).z.max(1.0)).collect();
    }
    Ok(pose)
}

/// Starting scene for [`fit_image`]: landmark pose, refined by
/// landmark-only Metropolis steps, zero latents, and solved lighting.
pub fn initialize(model: &MorphableModel, image: &ImageRGB, camera: &Camera, cfg: &FitConfig) -> Result<SceneParams> {
    cfg.validate()?;
    camera.validate()?;
    let pose = landmark_pose(model, image, camera)?;
    let mut scene = SceneParams {
        pose,
        camera: *camera,
        sh: SHIllumination::ambient(1.0),
        latents: model.zero_latents(),
    };
    if cfg.init_steps > 0 {
        let mean = &model.reference;
        let mut lm = |s: &SceneParams| {
            let l = landmark_log_likelihood(mean, &s.pose, &s.camera, &image.landmarks, cfg.sigma_lm);
            l.is_finite().then_some(l)
        };
        let init_log = lm(&scene).ok_or(Error::NonFiniteInit)?;
        let pose_only = FitConfig {
            mixture: [1.0, 0.0, 0.0],
            ..cfg.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a4d);
        scene = run_chain(scene, init_log, &pose_only, cfg.init_steps, &mut rng, &mut lm, None).best;
    }
    if let Ok(solved) = solve_illumination(&scene, model, image) {
        scene.sh = solved.sh;
    }
    Ok(scene)
}

/// Metropolis–Hastings fit of pose, latents and lighting, starting at `init`.
pub fn fit_image(model: &MorphableModel, image: &ImageRGB, init: &SceneParams, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    init.camera.validate()?;
    landmark_pairs(model, image)?;
    if image.width != init.camera.width || image.height != init.camera.height {
        return Err(Error::InvalidArgument("camera and image sizes differ".into()));
    }
    if !init.is_finite() {
        return Err(Error::NonFiniteInit);
    }
    let target = ImageTarget::new(image, cfg.histogram_bins);
    let init_log = evaluate(model, &target, init, cfg)?.0.total();
    if !init_log.is_finite() {
        return Err(Error::NonFiniteInit);
    }
    let mut log_target = |s: &SceneParams| {
        evaluate(model, &target, s, cfg)
            .ok()
            .map(|(t, _)| t.total())
            .filter(|l| l.is_finite())
    };
    let mut relight = |s: &SceneParams| {
        solve_illumination(s, model, image)
            .ok()
            .map(|r| r.sh)
            .filter(SHIllumination::is_finite)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = run_chain(
        init.clone(),
        init_log,
        cfg,
        cfg.iterations,
        &mut rng,
        &mut log_target,
        Some(&mut relight),
    );
    let (terms, render) = evaluate(model, &target, &outcome.best, cfg)?;
    Ok(FitResult {
        scene: outcome.best,
        log_posterior: outcome.best_log,
        terms,
        acceptance: outcome.stats,
        render,
        trace: outcome.trace,
    })
}
