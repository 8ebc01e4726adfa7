//! Morphable models: a reference mesh plus shape and albedo Gaussian
//! processes sharing its topology.

mod format;
mod pca;
mod stats;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{mesh_features, HyperParams, KernelSpec};
use crate::lowrank::{nystrom_decompose, LowRankGP, NystromConfig};
use crate::mesh::{unflatten, TriMesh};

pub use format::{load_model, save_model, model_bytes, model_from_bytes, FORMAT_VERSION, MAGIC};
pub use pca::pca_model;
pub use stats::{channel_correlation, mirror_correlation, mirror_pairs};

/// How a model's covariance was obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `"gaussian-process"` or `"pca"`.
    pub source: String,
    /// Builtin pairing name, when one was used.
    pub kernel: Option<String>,
    pub hyperparams: Option<HyperParams>,
    pub shape_spec: Option<KernelSpec>,
    pub albedo_spec: Option<KernelSpec>,
    pub shape_nystrom: Option<NystromConfig>,
    pub albedo_nystrom: Option<NystromConfig>,
    /// Number of meshes a PCA model was built from.
    pub training_meshes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphableModel {
    pub name: String,
    pub reference: TriMesh,
    pub shape: LowRankGP,
    pub albedo: LowRankGP,
    pub provenance: Provenance,
}

/// Latent coefficients; the prior on both blocks is standard normal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub shape: Vec<f64>,
    pub albedo: Vec<f64>,
}

impl Latents {
    pub fn zeros(shape_rank: usize, albedo_rank: usize) -> Self {
        Latents {
            shape: vec![0.0; shape_rank],
            albedo: vec![0.0; albedo_rank],
        }
    }

    /// Shape followed by albedo coefficients.
    pub fn joint(&self) -> Vec<f64> {
        self.shape.iter().chain(&self.albedo).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.joint().iter().all(|v| v.is_finite())
    }

    /// `-½‖c‖²` (unnormalized standard-normal log density).
    pub fn log_prior(&self) -> f64 {
        -0.5 * self.shape.iter().chain(&self.albedo).map(|c| c * c).sum::<f64>()
    }
}

/// Build a model whose mean is `reference`, decomposing both kernels over
/// the reference's vertices.
pub fn build_model(
    name: &str,
    reference: &TriMesh,
    shape_spec: &KernelSpec,
    albedo_spec: &KernelSpec,
    shape_cfg: &NystromConfig,
    albedo_cfg: &NystromConfig,
) -> Result<MorphableModel> {
    reference.validate()?;
    let features = mesh_features(reference);
    let shape = nystrom_decompose(shape_spec, &features, &reference.flat_positions(), shape_cfg)?;
    let albedo = nystrom_decompose(albedo_spec, &features, &reference.flat_albedo(), albedo_cfg)?;
    Ok(MorphableModel {
        name: name.to_string(),
        reference: reference.clone(),
        shape,
        albedo,
        provenance: Provenance {
            source: "gaussian-process".into(),
            shape_spec: Some(shape_spec.clone()),
            albedo_spec: Some(albedo_spec.clone()),
            shape_nystrom: Some(shape_cfg.clone()),
            albedo_nystrom: Some(albedo_cfg.clone()),
            ..Default::default()
        },
    })
}

impl MorphableModel {
    /// Assemble a model, checking that both processes live on the
    /// reference's vertices and are centred on it.
    pub fn new(name: &str, reference: TriMesh, shape: LowRankGP, albedo: LowRankGP, provenance: Provenance) -> Result<Self> {
        let n = reference.num_vertices();
        for gp in [&shape, &albedo] {
            if gp.num_vertices() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: gp.num_vertices(),
                });
            }
        }
        if shape.mean.as_slice() != reference.flat_positions().as_slice()
            || albedo.mean.as_slice() != reference.flat_albedo().as_slice()
        {
            return Err(Error::InvalidArgument("model means must equal the reference mesh".into()));
        }
        Ok(MorphableModel {
            name: name.to_string(),
            reference,
            shape,
            albedo,
            provenance,
        })
    }

    pub fn shape_rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn albedo_rank(&self) -> usize {
        self.albedo.rank()
    }

    pub fn zero_latents(&self) -> Latents {
        Latents::zeros(self.shape_rank(), self.albedo_rank())
    }

    fn check(&self, latents: &Latents) -> Result<()> {
        if latents.shape.len() != self.shape_rank() {
            return Err(Error::DimensionMismatch {
                expected: self.shape_rank(),
                got: latents.shape.len(),
            });
        }
        if latents.albedo.len() != self.albedo_rank() {
            return Err(Error::DimensionMismatch {
                expected: self.albedo_rank(),
                got: latents.albedo.len(),
            });
        }
        Ok(())
    }

    pub fn shape_field(&self, coeffs: &[f64]) -> Result<DVector<f64>> {
        self.shape.reconstruct(coeffs)
    }

    /// Albedo field clamped into `[0, 1]`.
    pub fn albedo_field(&self, coeffs: &[f64]) -> Result<DVector<f64>> {
        Ok(self.albedo.reconstruct(coeffs)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// The mesh for `latents`. Albedo is clamped to `[0, 1]` here, not in
    /// the process itself.
    pub fn instance(&self, latents: &Latents) -> Result<TriMesh> {
        self.check(latents)?;
        let positions = self.shape_field(&latents.shape)?;
        let albedo = self.albedo_field(&latents.albedo)?;
        Ok(self
            .reference
            .with_fields(unflatten(positions.as_slice()), unflatten(albedo.as_slice())))
    }

    pub fn sample_latents<R: Rng>(&self, rng: &mut R) -> Latents {
        Latents {
            shape: (0..self.shape_rank()).map(|_| rng.sample(StandardNormal)).collect(),
            albedo: (0..self.albedo_rank()).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    /// Draw standard-normal latents and instantiate them.
    pub fn sample(&self, seed: u64) -> (Latents, TriMesh) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> (Latents, TriMesh) {
        let latents = self.sample_latents(rng);
        let mesh = self.instance(&latents).expect("sampled latents have model ranks");
        (latents, mesh)
    }

    /// Copy restricted to the leading components of each process.
    pub fn truncated(&self, shape_rank: usize, albedo_rank: usize) -> MorphableModel {
        MorphableModel {
            shape: self.shape.truncated(shape_rank),
            albedo: self.albedo.truncated(albedo_rank),
            ..self.clone()
        }
    }
}

/// Uniform mixture of independently built models.
#[derive(Clone, Debug)]
pub struct KdeModel {
    components: Vec<MorphableModel>,
}

impl KdeModel {
    pub fn new(components: Vec<MorphableModel>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("a mixture needs at least one component".into()));
        }
        Ok(KdeModel { components })
    }

    pub fn components(&self) -> &[MorphableModel] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.components.len() as f64; self.components.len()]
    }

    /// Pick a component uniformly, then sample it. Returns the component index.
    pub fn sample(&self, seed: u64) -> (usize, TriMesh) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> (usize, TriMesh) {
        // A single component consumes no randomness for the choice, so it
        // reproduces that component's own sample stream.
        let k = if self.components.len() == 1 {
            0
        } else {
            rng.random_range(0..self.components.len())
        };
        (k, self.components[k].sample_with(rng).1)
    }
}
