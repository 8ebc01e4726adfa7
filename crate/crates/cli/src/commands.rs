use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ss3dmm::eval::eval_report;
use ss3dmm::image::{read_image_landmarks, write_image_landmarks, ImageRGB};
use ss3dmm::inference::{self, AcceptanceStats, LikelihoodTerms, Match, ProposalKind, SceneParams};
use ss3dmm::kernels::{builtin_pair, HyperParams};
use ss3dmm::lowrank::NystromConfig;
use ss3dmm::mesh::{read_mesh_landmarks, MirrorTransform, TriMesh, Vec3};
use ss3dmm::model::{build_model, load_model, save_model, KdeModel, Latents, MorphableModel};
use ss3dmm::registration::{register, RegistrationMetrics};
use ss3dmm::render::{project_landmarks, rasterize, Camera, Pose, SHIllumination};
use ss3dmm::synthetic::SyntheticFace;
use ss3dmm::write_atomic;

use crate::config::RunConfig;
use crate::{BuildArgs, CliError, EvalArgs, FitImageArgs, FitMeshArgs, InfoArgs, KdeRecognizeArgs, KdeSampleArgs};
use crate::{RecognizeArgs, SampleArgs};

/// Version of every JSON document this tool writes.
pub const SCHEMA_VERSION: u32 = 1;

type CliResult = Result<(), CliError>;

fn usage(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    write_atomic(path, &json_bytes(value)?)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    print!("{}", String::from_utf8_lossy(&json_bytes(value)?));
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn open_model(path: &Path) -> Result<MorphableModel, CliError> {
    if !path.exists() {
        return Err(usage(path, "no such model file"));
    }
    Ok(load_model(path)?)
}

fn read_image(path: &Path, landmarks: &Path) -> Result<ImageRGB, CliError> {
    if !path.exists() {
        return Err(usage(path, "no such image"));
    }
    let mut image = ImageRGB::load_png(path)?;
    image.landmarks = read_image_landmarks(landmarks).map_err(|e| usage(landmarks, e))?;
    Ok(image)
}

fn sibling_landmarks(image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    image.with_file_name(format!("{stem}_landmarks.json"))
}

/// Files in `dir` with one of `extensions`, sorted by name.
fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| extensions.iter().any(|e| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Frontal view that fits the reference in the frame.
fn framing(model: &MorphableModel, size: usize) -> (Pose, Camera) {
    let camera = Camera::with_default_focal(size, size);
    let (lo, hi) = model.reference.bounding_box().unwrap_or_default();
    let mut pose = Pose::frontal(1.2 * (hi - lo).norm().max(1.0));
    pose.translation -= pose.rotation * model.reference.centroid();
    (pose, camera)
}

#[derive(Serialize)]
struct Spectrum<'a> {
    rank: usize,
    total_variance: f64,
    eigenvalues: &'a [f64],
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    schema_version: u32,
    name: &'a str,
    vertices: usize,
    triangles: usize,
    landmarks: Vec<&'a str>,
    shape: Spectrum<'a>,
    albedo: Spectrum<'a>,
    provenance: &'a ss3dmm::model::Provenance,
}

fn summary(model: &MorphableModel) -> ModelSummary<'_> {
    ModelSummary {
        schema_version: SCHEMA_VERSION,
        name: &model.name,
        vertices: model.reference.num_vertices(),
        triangles: model.reference.triangles.len(),
        landmarks: model.reference.landmarks.keys().map(String::as_str).collect(),
        shape: Spectrum {
            rank: model.shape_rank(),
            total_variance: model.shape.eigenvalues.sum(),
            eigenvalues: model.shape.eigenvalues.as_slice(),
        },
        albedo: Spectrum {
            rank: model.albedo_rank(),
            total_variance: model.albedo.eigenvalues.sum(),
            eigenvalues: model.albedo.eigenvalues.as_slice(),
        },
        provenance: &model.provenance,
    }
}

pub fn build(a: BuildArgs) -> CliResult {
    let mut reference = match &a.reference {
        Some(path) => {
            if !path.exists() {
                return Err(usage(path, "no such reference mesh"));
            }
            TriMesh::load(path, None)?
        }
        None => SyntheticFace::default().build(),
    };
    if let Some(path) = &a.landmarks {
        let landmarks = read_mesh_landmarks(path).map_err(|e| usage(path, e))?;
        reference = reference.with_landmarks(landmarks).map_err(|e| usage(path, e))?;
    }
    let hyper = match &a.hyperparams {
        Some(path) => HyperParams::load(path).map_err(|e| usage(path, e))?,
        None => HyperParams::default(),
    };
    let pair = builtin_pair(&a.kernel, &hyper, MirrorTransform::default()).map_err(|e| CliError::Usage(e.to_string()))?;
    let inducing = a.inducing.min(reference.num_vertices());
    let shape_cfg = NystromConfig::new(inducing, a.shape_rank, a.seed);
    let albedo_cfg = NystromConfig::new(inducing, a.albedo_rank, a.seed.wrapping_add(1));
    let name = a.name.clone().unwrap_or_else(|| a.kernel.clone());
    log::info!("decomposing {} vertices with {inducing} inducing points", reference.num_vertices());
    let mut model = build_model(&name, &reference, &pair.shape, &pair.albedo, &shape_cfg, &albedo_cfg)?;
    model.provenance.kernel = Some(a.kernel.clone());
    model.provenance.hyperparams = Some(hyper);
    save_model(&model, &a.out)?;
    print_json(&summary(&model))
}

pub fn info(a: InfoArgs) -> CliResult {
    let model = open_model(&a.model)?;
    print_json(&summary(&model))
}

#[derive(Serialize)]
struct SampleRecord {
    schema_version: u32,
    seed: u64,
    latents: Latents,
}

pub fn sample(a: SampleArgs) -> CliResult {
    if a.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let model = open_model(&a.model)?;
    if a.count == 0 {
        return Ok(());
    }
    create_dir(&a.out_dir)?;
    let (pose, camera) = framing(&model, a.size);
    let ambient = SHIllumination::ambient(1.0);
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let (latents, mesh) = model.sample(seed);
        let base = a.out_dir.join(format!("sample_{i}"));
        mesh.save(base.with_extension("ply"))?;
        let render = rasterize(&mesh, &pose, &camera, &ambient);
        write_atomic(&base.with_extension("png"), &render.color.png_bytes()?)?;
        let landmarks = project_landmarks(&mesh, &pose, &camera)
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        write_image_landmarks(&a.out_dir.join(format!("sample_{i}_landmarks.json")), &landmarks)?;
        write_json(&base.with_extension("json"), &SampleRecord {
            schema_version: SCHEMA_VERSION,
            seed,
            latents,
        })?;
    }
    Ok(())
}

/// Contents of a `fit.json` file.
#[derive(Serialize, Deserialize)]
pub struct FitRecord {
    pub schema_version: u32,
    pub model: String,
    pub image: String,
    pub scene: SceneParams,
    pub log_posterior: f64,
    pub terms: LikelihoodTerms,
    pub acceptance: BTreeMap<ProposalKind, AcceptanceStats>,
    /// Rendering of the fit, relative to the fit file when possible.
    pub render: String,
}

fn fit_config(cfg: &RunConfig, iterations: Option<usize>, seed: Option<u64>) -> Result<inference::FitConfig, CliError> {
    let mut fit = cfg.fit.clone();
    if let Some(n) = iterations {
        fit.iterations = n;
    }
    if let Some(s) = seed {
        fit.seed = s;
    }
    fit.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(fit)
}

fn camera_for(image: &ImageRGB, focal: Option<f64>) -> Result<Camera, CliError> {
    match focal {
        Some(f) if !(f > 0.0 && f.is_finite()) => Err(CliError::Usage("--focal must be positive".into())),
        Some(f) => Ok(Camera::new(image.width, image.height, f)),
        None => Ok(Camera::with_default_focal(image.width, image.height)),
    }
}

pub fn fit_image(a: FitImageArgs, cfg: RunConfig) -> CliResult {
    let fit_cfg = fit_config(&cfg, a.iterations, a.seed)?;
    let model = open_model(&a.model)?;
    let image = read_image(&a.image, &a.landmarks)?;
    let camera = camera_for(&image, a.focal)?;
    let init = inference::initialize(&model, &image, &camera, &fit_cfg)?;
    let fit = inference::fit_image(&model, &image, &init, &fit_cfg)?;
    let render_path = a.render.clone().unwrap_or_else(|| a.out.with_extension("png"));
    write_atomic(&render_path, &fit.render.color.png_bytes()?)?;
    let render = match (render_path.parent(), a.out.parent()) {
        (Some(r), Some(o)) if r == o => render_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        _ => render_path.display().to_string(),
    };
    write_json(&a.out, &FitRecord {
        schema_version: SCHEMA_VERSION,
        model: model.name.clone(),
        image: a.image.display().to_string(),
        scene: fit.scene,
        log_posterior: fit.log_posterior,
        terms: fit.terms,
        acceptance: fit.acceptance,
        render,
    })
}

#[derive(Serialize)]
struct MeshFitRecord {
    schema_version: u32,
    model: String,
    target: String,
    mode: ss3dmm::registration::RegMode,
    chamfer: f64,
    metrics: RegistrationMetrics,
    log_posterior: f64,
    latents: Latents,
    pose: Pose,
    albedo_fallback_vertices: usize,
    acceptance: BTreeMap<ProposalKind, AcceptanceStats>,
}

pub fn fit_mesh(a: FitMeshArgs, cfg: RunConfig) -> CliResult {
    let mut reg = cfg.registration.clone();
    reg.fit = fit_config(&RunConfig { fit: reg.fit.clone(), ..cfg.clone() }, a.iterations, a.seed)?;
    if let Some(mode) = a.mode {
        reg.mode = mode.into();
    }
    let model = open_model(&a.model)?;
    if !a.target.exists() {
        return Err(usage(&a.target, "no such target mesh"));
    }
    let mut target = TriMesh::load(&a.target, None)?;
    if let Some(path) = &a.target_landmarks {
        let landmarks = read_mesh_landmarks(path).map_err(|e| usage(path, e))?;
        target = target.with_landmarks(landmarks).map_err(|e| usage(path, e))?;
    }
    let result = register(&model, &target, &reg)?;
    result.registered.save(&a.out)?;
    let record = MeshFitRecord {
        schema_version: SCHEMA_VERSION,
        model: model.name.clone(),
        target: a.target.display().to_string(),
        mode: reg.mode,
        chamfer: result.chamfer,
        metrics: result.metrics,
        log_posterior: result.log_posterior,
        latents: result.latents,
        pose: result.pose,
        albedo_fallback_vertices: result.albedo_fallback.len(),
        acceptance: result.acceptance,
    };
    match &a.metrics {
        Some(path) => write_json(path, &record),
        None => print_json(&record),
    }
}

fn read_fit(path: &Path) -> Result<FitRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(path, e))?;
    serde_json::from_str(&text).map_err(|e| usage(path, e))
}

#[derive(Serialize)]
struct ProbeRanking {
    probe: String,
    ranking: Vec<Match>,
}

#[derive(Serialize)]
struct RecognitionRecord {
    schema_version: u32,
    gallery: Vec<String>,
    probes: Vec<ProbeRanking>,
}

pub fn recognize(a: RecognizeArgs) -> CliResult {
    let gallery: Vec<(String, Latents)> = list_files(&a.gallery, &["json"])?
        .iter()
        .map(|p| read_fit(p).map(|f| (stem(p), f.scene.latents)))
        .collect::<Result<_, _>>()?;
    if gallery.is_empty() {
        return Err(usage(&a.gallery, "no fit files in gallery"));
    }
    let probes = if a.probe.is_dir() {
        list_files(&a.probe, &["json"])?
    } else {
        vec![a.probe.clone()]
    };
    let mut out = Vec::with_capacity(probes.len());
    for p in &probes {
        let fit = read_fit(p)?;
        let ranking = inference::recognize(&fit.scene.latents, &gallery).map_err(|e| usage(p, e))?;
        out.push(ProbeRanking { probe: stem(p), ranking });
    }
    let record = RecognitionRecord {
        schema_version: SCHEMA_VERSION,
        gallery: gallery.into_iter().map(|(id, _)| id).collect(),
        probes: out,
    };
    match &a.out {
        Some(path) => write_json(path, &record),
        None => print_json(&record),
    }
}

fn open_kde(paths: &[PathBuf]) -> Result<KdeModel, CliError> {
    let components = paths.iter().map(|p| open_model(p)).collect::<Result<Vec<_>, _>>()?;
    KdeModel::new(components).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct KdeSampleRecord {
    schema_version: u32,
    seed: u64,
    /// Mixture component drawn for each sample.
    components: Vec<usize>,
}

pub fn kde_sample(a: KdeSampleArgs) -> CliResult {
    let kde = open_kde(&a.models)?;
    if a.count == 0 {
        return Ok(());
    }
    create_dir(&a.out_dir)?;
    let mut components = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let (k, mesh) = kde.sample(a.seed.wrapping_add(i as u64));
        mesh.save(a.out_dir.join(format!("kde_sample_{i}.ply")))?;
        components.push(k);
    }
    write_json(&a.out_dir.join("kde_samples.json"), &KdeSampleRecord {
        schema_version: SCHEMA_VERSION,
        seed: a.seed,
        components,
    })
}

#[derive(Serialize)]
struct KdeRecord {
    schema_version: u32,
    probe: String,
    #[serde(flatten)]
    result: inference::KdeRecognition,
}

pub fn kde_recognize(a: KdeRecognizeArgs, cfg: RunConfig) -> CliResult {
    let fit_cfg = fit_config(&cfg, a.iterations, a.seed)?;
    let kde = open_kde(&a.models)?;
    let probe_landmarks = a.probe_landmarks.clone().unwrap_or_else(|| sibling_landmarks(&a.probe));
    let probe = read_image(&a.probe, &probe_landmarks)?;
    let gallery: Vec<(String, ImageRGB)> = list_files(&a.gallery, &["png"])?
        .iter()
        .map(|p| read_image(p, &sibling_landmarks(p)).map(|img| (stem(p), img)))
        .collect::<Result<_, _>>()?;
    if gallery.is_empty() {
        return Err(usage(&a.gallery, "no gallery images"));
    }
    if let Some(f) = a.focal {
        camera_for(&probe, Some(f))?;
    }
    let result = inference::kde_recognize(&kde, &probe, &gallery, a.focal, &fit_cfg)?;
    let record = KdeRecord {
        schema_version: SCHEMA_VERSION,
        probe: stem(&a.probe),
        result,
    };
    match &a.out {
        Some(path) => write_json(path, &record),
        None => print_json(&record),
    }
}

fn parse_ranks(ranks: &[String]) -> Result<Vec<usize>, CliError> {
    ranks
        .iter()
        .map(|r| match r.trim() {
            "full" => Ok(usize::MAX),
            s => match s.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(CliError::Usage(format!("invalid rank {s:?}"))),
            },
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> CliResult {
    let ranks = parse_ranks(&a.ranks)?;
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let model = open_model(&a.model)?;
    let files = list_files(&a.dataset, &["ply", "obj"])?;
    if let Some(i) = a.exclude {
        if i >= files.len() {
            return Err(CliError::Usage(format!("--exclude {i} out of range for {} meshes", files.len())));
        }
    }
    let default_albedo = Some(Vec3::new(0.5, 0.5, 0.5));
    let dataset = files
        .iter()
        .map(|p| TriMesh::load(p, default_albedo))
        .collect::<Result<Vec<_>, _>>()?;
    let report = eval_report(&model, &dataset, &ranks, a.samples, a.seed, a.exclude)?;
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    if let Some(plot) = &a.plot {
        write_atomic(plot, report.to_svg().as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_accept_full_and_reject_zero() {
        let r: Vec<String> = ["1", "5", "full"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_ranks(&r).unwrap(), vec![1, 5, usize::MAX]);
        assert!(parse_ranks(&["0".to_string()]).is_err());
        assert!(parse_ranks(&["x".to_string()]).is_err());
    }

    #[test]
    fn landmark_sibling_name() {
        assert_eq!(sibling_landmarks(Path::new("g/a.png")), PathBuf::from("g/a_landmarks.json"));
    }
}
