//! Specificity, generalization and compactness of a model against a
//! dataset of meshes in its topology.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::LowRankGP;
use crate::mesh::{TriMesh, Vec3};
use crate::model::MorphableModel;

pub const DEFAULT_SAMPLES: usize = 100;

/// Mean of a set of per-item values with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn of(values: &[f64]) -> Estimate {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr }
    }
}

/// Shape values are millimetres, albedo values RGB distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub shape: Estimate,
    pub albedo: Estimate,
}

/// Mean per-vertex Euclidean distance between two equally long lists.
fn mean_vertex_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

fn check_dataset(model: &MorphableModel, dataset: &[TriMesh]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for m in dataset {
        if m.num_vertices() != model.reference.num_vertices() {
            return Err(Error::TopologyMismatch(format!(
                "dataset mesh has {} vertices, model has {}",
                m.num_vertices(),
                model.reference.num_vertices()
            )));
        }
    }
    Ok(())
}

/// Average over `samples` random instances of the distance to the closest
/// dataset mesh.
pub fn specificity(model: &MorphableModel, dataset: &[TriMesh], samples: usize, seed: u64) -> Result<PairEstimate> {
    check_dataset(model, dataset)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("specificity needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<_> = (0..samples).map(|_| model.sample_latents(&mut rng)).collect();
    let minima: Vec<(f64, f64)> = latents
        .par_iter()
        .map(|l| {
            let inst = model.instance(l).expect("sampled latents have model ranks");
            let shape = dataset
                .iter()
                .map(|m| mean_vertex_distance(&inst.vertices, &m.vertices))
                .fold(f64::INFINITY, f64::min);
            let albedo = dataset
                .iter()
                .map(|m| mean_vertex_distance(&inst.albedo, &m.albedo))
                .fold(f64::INFINITY, f64::min);
            (shape, albedo)
        })
        .collect();
    Ok(PairEstimate {
        shape: Estimate::of(&minima.iter().map(|m| m.0).collect::<Vec<_>>()),
        albedo: Estimate::of(&minima.iter().map(|m| m.1).collect::<Vec<_>>()),
    })
}

fn reconstruction_error(gp: &LowRankGP, field: &[f64]) -> Result<f64> {
    let c = gp.project(field)?;
    let back = gp.reconstruct(c.as_slice())?;
    let a: Vec<Vec3> = field.chunks_exact(3).map(Vec3::from_column_slice).collect();
    let b: Vec<Vec3> = back.as_slice().chunks_exact(3).map(Vec3::from_column_slice).collect();
    Ok(mean_vertex_distance(&a, &b))
}

/// Mean per-vertex error of projecting each dataset mesh into the model and
/// reconstructing it.
pub fn generalization(model: &MorphableModel, dataset: &[TriMesh]) -> Result<PairEstimate> {
    check_dataset(model, dataset)?;
    let errors = dataset
        .iter()
        .map(|m| {
            Ok((
                reconstruction_error(&model.shape, &m.flat_positions())?,
                reconstruction_error(&model.albedo, &m.flat_albedo())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairEstimate {
        shape: Estimate::of(&errors.iter().map(|e| e.0).collect::<Vec<_>>()),
        albedo: Estimate::of(&errors.iter().map(|e| e.1).collect::<Vec<_>>()),
    })
}

/// Fraction of total variance in the leading `r` components.
pub fn compactness(gp: &LowRankGP, r: usize) -> Result<f64> {
    if r > gp.rank() {
        return Err(Error::RankDeficient {
            requested: r,
            available: gp.rank(),
        });
    }
    let total: f64 = gp.eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("spectrum is all zero".into()));
    }
    if r == gp.rank() {
        return Ok(1.0);
    }
    Ok(gp.eigenvalues.rows(0, r).sum() / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Requested number of components; each process is capped at its rank.
    pub rank: usize,
    pub shape_rank: usize,
    pub albedo_rank: usize,
    pub specificity: PairEstimate,
    pub generalization: PairEstimate,
    pub compactness_shape: f64,
    pub compactness_albedo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub samples: usize,
    pub seed: u64,
    pub dataset_size: usize,
    /// Dataset index left out because the model was built from it.
    pub excluded: Option<usize>,
}

/// Compactness that tolerates a process with no variance (rank 0).
fn compactness_or_one(gp: &LowRankGP, r: usize) -> Result<f64> {
    if gp.eigenvalues.iter().sum::<f64>() > 0.0 {
        compactness(gp, r)
    } else {
        Ok(1.0)
    }
}

/// Evaluate every rank in `ranks` (`usize::MAX` meaning full rank). Each
/// rank uses the same seed, so a single-rank call reproduces its row.
pub fn eval_report(
    model: &MorphableModel,
    dataset: &[TriMesh],
    ranks: &[usize],
    samples: usize,
    seed: u64,
    exclude: Option<usize>,
) -> Result<EvalReport> {
    let kept: Vec<TriMesh> = dataset
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, m)| m.clone())
        .collect();
    check_dataset(model, &kept)?;
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let (rs, ra) = (rank.min(model.shape_rank()), rank.min(model.albedo_rank()));
        let truncated = model.truncated(rs, ra);
        rows.push(EvalRow {
            rank,
            shape_rank: rs,
            albedo_rank: ra,
            specificity: specificity(&truncated, &kept, samples, seed)?,
            generalization: generalization(&truncated, &kept)?,
            compactness_shape: compactness_or_one(&model.shape, rs)?,
            compactness_albedo: compactness_or_one(&model.albedo, ra)?,
        });
    }
    Ok(EvalReport {
        rows,
        samples,
        seed,
        dataset_size: kept.len(),
        excluded: exclude,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# distances are mean per-vertex Euclidean: mm for shape, RGB units for albedo\n");
        let _ = writeln!(
            out,
            "# samples={} seed={} dataset={} excluded={}",
            self.samples,
            self.seed,
            self.dataset_size,
            self.excluded.map_or("none".to_string(), |i| i.to_string())
        );
        out.push_str(
            "rank,shape_rank,albedo_rank,specificity_shape,specificity_shape_se,specificity_albedo,specificity_albedo_se,\
generalization_shape,generalization_shape_se,generalization_albedo,generalization_albedo_se,compactness_shape,compactness_albedo\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                if r.rank == usize::MAX { "full".to_string() } else { r.rank.to_string() },
                r.shape_rank,
                r.albedo_rank,
                r.specificity.shape.mean,
                r.specificity.shape.stderr,
                r.specificity.albedo.mean,
                r.specificity.albedo.stderr,
                r.generalization.shape.mean,
                r.generalization.shape.stderr,
                r.generalization.albedo.mean,
                r.generalization.albedo.stderr,
                r.compactness_shape,
                r.compactness_albedo
            );
        }
        out
    }

    /// Three panels (specificity, generalization, compactness) against the
    /// effective shape rank; shape solid, albedo dashed, each series scaled
    /// to its panel.
    pub fn to_svg(&self) -> String {
        let (pw, ph, pad) = (260.0, 200.0, 30.0);
        let panels: [(&str, Vec<(f64, f64)>); 3] = [
            (
                "specificity",
                self.rows.iter().map(|r| (r.specificity.shape.mean, r.specificity.albedo.mean)).collect(),
            ),
            (
                "generalization",
                self.rows.iter().map(|r| (r.generalization.shape.mean, r.generalization.albedo.mean)).collect(),
            ),
            (
                "compactness",
                self.rows.iter().map(|r| (r.compactness_shape, r.compactness_albedo)).collect(),
            ),
        ];
        let n = self.rows.len().max(2) as f64 - 1.0;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            3.0 * pw,
            ph + pad
        );
        for (k, (title, values)) in panels.iter().enumerate() {
            let x0 = k as f64 * pw;
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
                x0 + pad,
                pw - 2.0 * pad,
                ph - pad
            );
            let _ = writeln!(svg, "<text x=\"{}\" y=\"18\">{title}</text>", x0 + pad);
            for (series, dash) in [(0usize, ""), (1, " stroke-dasharray=\"4 3\"")] {
                let ys: Vec<f64> = values.iter().map(|v| if series == 0 { v.0 } else { v.1 }).collect();
                let max = ys.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
                let points: Vec<String> = ys
                    .iter()
                    .enumerate()
                    .map(|(i, y)| {
                        let px = x0 + pad + (pw - 2.0 * pad) * i as f64 / n;
                        let py = ph - (ph - 2.0 * pad) * y / max;
                        format!("{px:.2},{py:.2}")
                    })
                    .collect();
                let _ = writeln!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fa0\"{dash}/>",
                    points.join(" ")
                );
            }
            for (i, r) in self.rows.iter().enumerate() {
                let px = x0 + pad + (pw - 2.0 * pad) * i as f64 / n;
                let _ = writeln!(svg, "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", ph + 14.0, r.shape_rank);
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pca_model, Provenance};
    use crate::synthetic::icosphere;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn dataset(count: usize, seed: u64) -> Vec<TriMesh> {
        let base = icosphere(1, 30.0, Vec3::new(0.5, 0.5, 0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let s = Vec3::new(rng.random_range(0.8..1.2), rng.random_range(0.8..1.2), rng.random_range(0.8..1.2));
                let tint: f64 = rng.random_range(-0.2..0.2);
                base.with_fields(
                    base.vertices.iter().map(|v| v.component_mul(&s)).collect(),
                    base.albedo.iter().map(|a| a.map(|c| c + tint)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn zero_variance_model_has_zero_specificity() {
        let data = dataset(5, 1);
        let model = pca_model("p", &data).unwrap();
        let mean_only = model.truncated(0, 0);
        let mut with_mean = data.clone();
        with_mean.push(model.reference.clone());
        let s = specificity(&mean_only, &with_mean, 10, 3).unwrap();
        assert_eq!(s.shape.mean, 0.0);
        assert_eq!(s.albedo.mean, 0.0);
    }

    #[test]
    fn specificity_is_reproducible() {
        let data = dataset(6, 2);
        let model = pca_model("p", &data).unwrap();
        assert_eq!(specificity(&model, &data, 20, 9).unwrap(), specificity(&model, &data, 20, 9).unwrap());
    }

    #[test]
    fn rank_one_specificity_matches_folded_normal() {
        let base = icosphere(1, 30.0, Vec3::new(0.5, 0.5, 0.5));
        let n3 = 3 * base.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = DVector::from_fn(n3, |_, _| rng.random::<f64>() - 0.5).normalize();
        let lambda: f64 = 40.0;
        let mean = DVector::from_vec(base.flat_positions());
        let gp = LowRankGP::from_parts(mean.clone(), DMatrix::from_column_slice(n3, 1, u.as_slice()), DVector::from_element(1, lambda)).unwrap();
        let albedo = LowRankGP::from_parts(DVector::from_vec(base.flat_albedo()), DMatrix::zeros(n3, 0), DVector::zeros(0)).unwrap();
        let model = MorphableModel::new("r1", base.clone(), gp, albedo, Provenance::default()).unwrap();
        let shifted = |sign: f64| {
            let f = &mean + &u * (sign * lambda.sqrt());
            base.with_fields(crate::mesh::unflatten(f.as_slice()), base.albedo.clone())
        };
        let data = vec![shifted(1.0), shifted(-1.0)];
        // Per-vertex mean distance for latent c to mean + s√λu is √λ·|c − s|·k.
        let k: f64 = u.as_slice().chunks_exact(3).map(|b| Vec3::from_column_slice(b).norm()).sum::<f64>() / base.num_vertices() as f64;
        // E| |c| − 1 | for c ~ N(0, 1), by midpoint quadrature on the folded normal.
        let steps = 200_000;
        let h = 10.0 / steps as f64;
        let folded: f64 = (0..steps)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                (x - 1.0).abs() * 2.0 * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        let expected = lambda.sqrt() * k * folded;
        let got = specificity(&model, &data, 20_000, 5).unwrap().shape.mean;
        assert!((got - expected).abs() <= 0.05 * expected, "{got} vs {expected}");
    }

    #[test]
    fn generalization_in_span_is_exact_and_monotone() {
        let data = dataset(6, 3);
        let model = pca_model("p", &data).unwrap();
        let g = generalization(&model, &data).unwrap();
        assert!(g.shape.mean <= 1e-6 && g.albedo.mean <= 1e-6);
        for m in &data {
            let mut last = f64::INFINITY;
            for r in 0..=model.shape_rank() {
                let e = reconstruction_error(&model.shape.truncated(r), &m.flat_positions()).unwrap();
                assert!(e <= last + 1e-12);
                last = e;
            }
        }
    }

    #[test]
    fn rank_zero_generalization_is_distance_to_mean() {
        let data = dataset(4, 5);
        let model = pca_model("p", &data).unwrap();
        let g = generalization(&model.truncated(0, 0), &data).unwrap();
        let direct: f64 = data
            .iter()
            .map(|m| mean_vertex_distance(&m.vertices, &model.reference.vertices))
            .sum::<f64>()
            / data.len() as f64;
        assert!((g.shape.mean - direct).abs() < 1e-12);
    }

    #[test]
    fn compactness_values() {
        let gp = LowRankGP::from_parts(
            DVector::zeros(6),
            DMatrix::identity(6, 4),
            DVector::from_vec(vec![4.0, 2.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(compactness(&gp, 2).unwrap(), 0.75);
        assert_eq!(compactness(&gp, 0).unwrap(), 0.0);
        assert_eq!(compactness(&gp, 4).unwrap(), 1.0);
        assert!(compactness(&gp, 5).is_err());
        let zero = LowRankGP::from_parts(DVector::zeros(6), DMatrix::identity(6, 1), DVector::zeros(1)).unwrap();
        assert!(compactness(&zero, 1).is_err());
    }

    #[test]
    fn report_rows_match_single_rank_calls() {
        let data = dataset(8, 6);
        let model = pca_model("p", &data).unwrap();
        let ranks = [1, 2, 5, usize::MAX];
        let report = eval_report(&model, &data, &ranks, 15, 11, None).unwrap();
        assert_eq!(report, eval_report(&model, &data, &ranks, 15, 11, None).unwrap());
        let single = eval_report(&model, &data, &[2], 15, 11, None).unwrap();
        assert_eq!(single.rows[0], report.rows[1]);
        assert_eq!(report.rows.last().unwrap().compactness_shape, 1.0);
        let gens: Vec<f64> = report.rows.iter().map(|r| r.generalization.shape.mean).collect();
        assert!(gens.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let csv = report.to_csv();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + ranks.len());
        assert!(report.to_svg().starts_with("<svg"));
        let loo = eval_report(&model, &data, &[1], 5, 1, Some(0)).unwrap();
        assert_eq!(loo.dataset_size, 7);
        assert!(matches!(eval_report(&model, &[], &[1], 5, 1, None), Err(Error::EmptyDataset)));
    }
}
