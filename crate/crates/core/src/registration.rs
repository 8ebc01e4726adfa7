//! Registration of a scan into a model's topology by Metropolis–Hastings
//! over a chamfer likelihood plus a multi-view rendered-pixel likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::umeyama;
use crate::error::{Error, Result};
use crate::inference::chain::{run_chain, AcceptanceStats, ProposalKind};
use crate::inference::{latent_log_prior, FitConfig, ImageTarget, SceneParams};
use crate::mesh::{vertex_normals, TriMesh, Vec3};
use crate::model::{Latents, MorphableModel};
use crate::render::{rasterize, Camera, Pose, SHIllumination};
use crate::spatial::{NearestIndex, TriangleBvh};
use std::collections::BTreeMap;

/// Distances from every point of `from` to its nearest vertex in `to`.
fn nearest_distances(from: &[Vec3], to: &NearestIndex) -> Vec<f64> {
    from.iter()
        .map(|p| to.nearest_vertex(p).expect("index is non-empty").1)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn standard_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn check_nonempty(a: &TriMesh, b: &TriMesh) -> Result<()> {
    if a.vertices.is_empty() || b.vertices.is_empty() {
        return Err(Error::EmptyIndex);
    }
    Ok(())
}

/// Symmetric chamfer distance between vertex sets: the two directed mean
/// nearest-vertex distances, averaged.
pub fn chamfer(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    check_nonempty(a, b)?;
    let (ia, ib) = (NearestIndex::new(&a.vertices), NearestIndex::new(&b.vertices));
    Ok(0.5 * (mean(&nearest_distances(&a.vertices, &ib)) + mean(&nearest_distances(&b.vertices, &ia))))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    /// Symmetric Hausdorff distance between vertex sets.
    pub vertex_hausdorff: f64,
    /// Mean distance from each registered vertex to the nearest scan vertex.
    pub mean_distance: f64,
    pub mean_distance_stderr: f64,
    pub landmark_hausdorff: Option<f64>,
    /// Mean distance from each registered landmark to the nearest scan landmark.
    pub landmark_mean: Option<f64>,
    pub landmark_mean_stderr: Option<f64>,
}

fn hausdorff(a: &[Vec3], b: &[Vec3]) -> f64 {
    let (ia, ib) = (NearestIndex::new(a), NearestIndex::new(b));
    let ab = nearest_distances(a, &ib).into_iter().fold(0.0, f64::max);
    let ba = nearest_distances(b, &ia).into_iter().fold(0.0, f64::max);
    ab.max(ba)
}

/// Vertex metrics always; landmark metrics when both meshes carry
/// landmarks. `require_landmarks` turns their absence into an error.
pub fn registration_metrics(registered: &TriMesh, target: &TriMesh, require_landmarks: bool) -> Result<RegistrationMetrics> {
    check_nonempty(registered, target)?;
    let d = nearest_distances(&registered.vertices, &NearestIndex::new(&target.vertices));
    let mut m = RegistrationMetrics {
        vertex_hausdorff: hausdorff(&registered.vertices, &target.vertices),
        mean_distance: mean(&d),
        mean_distance_stderr: standard_error(&d),
        landmark_hausdorff: None,
        landmark_mean: None,
        landmark_mean_stderr: None,
    };
    let lr: Vec<Vec3> = registered.landmarks.values().map(|&i| registered.vertices[i]).collect();
    let lt: Vec<Vec3> = target.landmarks.values().map(|&i| target.vertices[i]).collect();
    if lr.is_empty() || lt.is_empty() {
        if require_landmarks {
            return Err(Error::MissingLandmarks("landmark metrics need landmarks on both meshes".into()));
        }
        return Ok(m);
    }
    let dl = nearest_distances(&lr, &NearestIndex::new(&lt));
    m.landmark_hausdorff = Some(hausdorff(&lr, &lt));
    m.landmark_mean = Some(mean(&dl));
    m.landmark_mean_stderr = Some(standard_error(&dl));
    Ok(m)
}

/// Remove the net translation between `registered` and its nearest scan
/// points. The rigid fit is computed in full; with `full_rigid` false only
/// its centroid translation is applied.
pub fn postprocess_align(registered: &TriMesh, target: &TriMesh, full_rigid: bool) -> Result<TriMesh> {
    check_nonempty(registered, target)?;
    let index = NearestIndex::new(&target.vertices);
    let pairs: Vec<Vec3> = registered
        .vertices
        .iter()
        .map(|p| target.vertices[index.nearest_vertex(p).expect("non-empty").0])
        .collect();
    let sim = umeyama(&registered.vertices, &pairs, false)?;
    let vertices = if full_rigid {
        registered.vertices.iter().map(|p| sim.apply(p)).collect()
    } else {
        let n = pairs.len() as f64;
        let shift = pairs.iter().sum::<Vec3>() / n - registered.vertices.iter().sum::<Vec3>() / n;
        registered.vertices.iter().map(|p| p + shift).collect()
    };
    Ok(registered.with_fields(vertices, registered.albedo.clone()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlbedoTransfer {
    pub mesh: TriMesh,
    /// Vertices whose rays missed and took the nearest scan vertex's albedo.
    pub fallback: Vec<usize>,
}

/// Set each vertex's albedo from the scan surface hit along `±normal`
/// (nearest hit within `max_dist`), falling back to the nearest scan vertex.
pub fn transfer_albedo(registered: &TriMesh, target: &TriMesh, max_dist: f64) -> Result<AlbedoTransfer> {
    check_nonempty(registered, target)?;
    let bvh = TriangleBvh::new(&target.vertices, &target.triangles);
    let index = NearestIndex::new(&target.vertices);
    let normals = vertex_normals(registered);
    let mut albedo = Vec::with_capacity(registered.vertices.len());
    let mut fallback = Vec::new();
    for (i, (p, n)) in registered.vertices.iter().zip(&normals).enumerate() {
        let hit = if n.norm_squared() > 0.0 {
            let fwd = bvh.raycast(p, n, max_dist);
            let back = bvh.raycast(p, &-n, max_dist);
            match (fwd, back) {
                (Some(a), Some(b)) => Some(if b.t < a.t { b } else { a }),
                (a, b) => a.or(b),
            }
        } else {
            None
        };
        match hit {
            Some(h) => {
                let t = target.triangles[h.triangle];
                let c: Vec3 = (0..3).map(|k| target.albedo[t[k] as usize] * h.bary[k]).sum();
                albedo.push(c.map(|v| v.clamp(0.0, 1.0)));
            }
            None => {
                fallback.push(i);
                albedo.push(target.albedo[index.nearest_vertex(p)?.0]);
            }
        }
    }
    Ok(AlbedoTransfer {
        mesh: registered.with_fields(registered.vertices.clone(), albedo),
        fallback,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegMode {
    ShapeOnly,
    ShapeAlbedo,
}

/// One synthetic camera of the pixel-term rig.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegView {
    pub pose: Pose,
    pub camera: Camera,
}

/// Frontal and ±45° yaw views.
pub fn default_rig(size: usize, distance: f64) -> Vec<RegView> {
    let camera = Camera::new(size, size, 2.0 * size as f64);
    [0.0f64, 45.0, -45.0]
        .iter()
        .map(|deg| RegView {
            pose: Pose::turned(deg.to_radians(), distance),
            camera,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    pub mode: RegMode,
    /// Chamfer noise, millimetres.
    pub sigma_ch: f64,
    /// Weight of the pixel term; 0 disables it.
    pub pixel_weight: f64,
    pub views: Vec<RegView>,
    /// Chain settings; landmark and illumination fields are unused.
    pub fit: FitConfig,
    pub max_ray_distance: f64,
    /// Rigid initialization; centroid alignment when absent.
    pub init_pose: Option<Pose>,
    /// Apply the full rigid post-alignment instead of translation only.
    pub full_rigid: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            mode: RegMode::ShapeAlbedo,
            sigma_ch: 1.0,
            pixel_weight: 1.0,
            views: default_rig(64, 500.0),
            fit: FitConfig::default(),
            max_ray_distance: 10.0,
            init_pose: None,
            full_rigid: false,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_ch > 0.0) || !(self.pixel_weight >= 0.0) || !(self.max_ray_distance > 0.0) {
            return Err(Error::InvalidArgument("σ_ch and ray distance must be positive, pixel weight ≥ 0".into()));
        }
        if self.views.is_empty() {
            return Err(Error::InvalidArgument("registration needs at least one view".into()));
        }
        for v in &self.views {
            v.camera.validate()?;
        }
        let mut fit = self.fit.clone();
        fit.iterations = fit.iterations.max(1);
        fit.validate()
    }

    fn uses_pixels(&self) -> bool {
        self.mode == RegMode::ShapeAlbedo && self.pixel_weight > 0.0
    }
}

#[derive(Clone, Debug)]
pub struct RegResult {
    /// Post-aligned mesh in the model's topology with transferred albedo.
    pub registered: TriMesh,
    pub latents: Latents,
    pub pose: Pose,
    pub chamfer: f64,
    pub metrics: RegistrationMetrics,
    pub albedo_fallback: Vec<usize>,
    pub log_posterior: f64,
    pub acceptance: BTreeMap<ProposalKind, AcceptanceStats>,
}

/// Gaussian log density of the nearest-vertex residuals in both
/// directions, averaged so each direction counts half.
fn chamfer_log_likelihood(mesh: &[Vec3], target: &[Vec3], target_index: &NearestIndex, sigma: f64) -> f64 {
    let own = NearestIndex::new(mesh);
    let ab: f64 = nearest_distances(mesh, target_index).iter().map(|d| d * d).sum();
    let ba: f64 = nearest_distances(target, &own).iter().map(|d| d * d).sum();
    -(ab + ba) / (4.0 * sigma * sigma)
}

fn posed(mesh: &TriMesh, pose: &Pose) -> TriMesh {
    mesh.with_fields(mesh.vertices.iter().map(|p| pose.apply(p)).collect(), mesh.albedo.clone())
}

/// Register `target` into `model`'s topology without landmarks.
pub fn register(model: &MorphableModel, target: &TriMesh, cfg: &RegConfig) -> Result<RegResult> {
    cfg.validate()?;
    target.validate()?;
    if target.vertices.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let init_pose = cfg
        .init_pose
        .unwrap_or_else(|| Pose::new(Default::default(), target.centroid() - model.reference.centroid()));
    let ambient = SHIllumination::ambient(1.0);
    let observed: Vec<_> = if cfg.uses_pixels() {
        cfg.views
            .iter()
            .map(|v| rasterize(target, &v.pose, &v.camera, &ambient).color)
            .collect()
    } else {
        Vec::new()
    };
    let targets: Vec<ImageTarget> = observed.iter().map(|img| ImageTarget::new(img, cfg.fit.histogram_bins)).collect();
    let target_index = NearestIndex::new(&target.vertices);
    let mut log_target = |s: &SceneParams| -> Option<f64> {
        let mesh = posed(&model.instance(&s.latents).ok()?, &s.pose);
        let mut log = chamfer_log_likelihood(&mesh.vertices, &target.vertices, &target_index, cfg.sigma_ch);
        for (view, t) in cfg.views.iter().zip(&targets) {
            let out = rasterize(&mesh, &view.pose, &view.camera, &ambient);
            log += cfg.pixel_weight * t.pixel_terms(&out, cfg.fit.sigma_fg).total();
        }
        log += latent_log_prior(&s.latents);
        log.is_finite().then_some(log)
    };
    let init = SceneParams {
        pose: init_pose,
        camera: cfg.views[0].camera,
        sh: ambient,
        latents: model.zero_latents(),
    };
    let init_log = log_target(&init).ok_or(Error::NonFiniteInit)?;
    let mut chain_cfg = cfg.fit.clone();
    if cfg.mode == RegMode::ShapeOnly {
        chain_cfg.mixture[2] = 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fit.seed);
    let outcome = run_chain(init, init_log, &chain_cfg, cfg.fit.iterations, &mut rng, &mut log_target, None);
    let best = &outcome.best;
    let fitted = posed(&model.instance(&best.latents)?, &best.pose);
    let aligned = postprocess_align(&fitted, target, cfg.full_rigid)?;
    let transfer = transfer_albedo(&aligned, target, cfg.max_ray_distance)?;
    Ok(RegResult {
        chamfer: chamfer(&transfer.mesh, target)?,
        metrics: registration_metrics(&transfer.mesh, target, false)?,
        registered: transfer.mesh,
        latents: best.latents.clone(),
        pose: best.pose,
        albedo_fallback: transfer.fallback,
        log_posterior: outcome.best_log,
        acceptance: outcome.stats,
    })
}
