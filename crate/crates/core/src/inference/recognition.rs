use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_image, initialize, FitConfig};
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::model::{KdeModel, Latents, MorphableModel};
use crate::render::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: String,
    pub score: f64,
    /// Probe or gallery latent had zero norm; the score is then −1.
    pub degenerate: bool,
}

/// Rank gallery entries by cosine similarity of concatenated shape and
/// albedo latents, best first; ties keep gallery order.
pub fn recognize(probe: &Latents, gallery: &[(String, Latents)]) -> Result<Vec<Match>> {
    let p = probe.joint();
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(gallery.len());
    for (id, g) in gallery {
        let g = g.joint();
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: g.len(),
            });
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (score, degenerate) = if pn == 0.0 || gn == 0.0 {
            log::warn!("zero-norm latent vector while scoring gallery entry {id}");
            (-1.0, true)
        } else {
            (p.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / (pn * gn), false)
        };
        out.push(Match {
            id: id.clone(),
            score,
            degenerate,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

fn fit_latents(model: &MorphableModel, image: &ImageRGB, focal: Option<f64>, cfg: &FitConfig) -> Result<Latents> {
    let camera = match focal {
        Some(f) => Camera::new(image.width, image.height, f),
        None => Camera::with_default_focal(image.width, image.height),
    };
    let init = initialize(model, image, &camera, cfg)?;
    Ok(fit_image(model, image, &init, cfg)?.scene.latents)
}

/// Fit the probe and every gallery image with one model, then rank.
pub fn recognize_images(
    model: &MorphableModel,
    probe: &ImageRGB,
    gallery: &[(String, ImageRGB)],
    focal: Option<f64>,
    cfg: &FitConfig,
) -> Result<Vec<Match>> {
    let probe_latents = fit_latents(model, probe, focal, cfg)?;
    let gallery_latents = gallery
        .par_iter()
        .map(|(id, img)| fit_latents(model, img, focal, cfg).map(|l| (id.clone(), l)))
        .collect::<Result<Vec<_>>>()?;
    recognize(&probe_latents, &gallery_latents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentOutcome {
    pub component: usize,
    /// Ranking within this component, when every fit succeeded.
    pub ranking: Option<Vec<Match>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeRecognition {
    pub best_id: String,
    pub best_component: usize,
    pub best_score: f64,
    pub components: Vec<ComponentOutcome>,
}

/// Recognition with a mixture: each component fits the probe and gallery
/// on its own, and the single most similar (component, gallery) pair wins.
pub fn kde_recognize(
    kde: &KdeModel,
    probe: &ImageRGB,
    gallery: &[(String, ImageRGB)],
    focal: Option<f64>,
    cfg: &FitConfig,
) -> Result<KdeRecognition> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let components: Vec<ComponentOutcome> = kde
        .components()
        .par_iter()
        .enumerate()
        .map(|(k, model)| match recognize_images(model, probe, gallery, focal, cfg) {
            Ok(ranking) => ComponentOutcome {
                component: k,
                ranking: Some(ranking),
                error: None,
            },
            Err(e) => {
                log::warn!("mixture component {k} skipped: {e}");
                ComponentOutcome {
                    component: k,
                    ranking: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let mut best: Option<(usize, &Match)> = None;
    for c in &components {
        if let Some(top) = c.ranking.as_ref().and_then(|r| r.first()) {
            if best.is_none_or(|(_, m)| top.score > m.score) {
                best = Some((c.component, top));
            }
        }
    }
    let Some((k, m)) = best else {
        let reasons: Vec<String> = components.iter().filter_map(|c| c.error.clone()).collect();
        return Err(Error::AllComponentsFailed(reasons.join("; ")));
    };
    Ok(KdeRecognition {
        best_id: m.id.clone(),
        best_component: k,
        best_score: m.score,
        components: components.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(v: &[f64]) -> Latents {
        Latents {
            shape: v[..2].to_vec(),
            albedo: v[2..].to_vec(),
        }
    }

    #[test]
    fn identical_probe_ranks_first() {
        let g = vec![("a".to_string(), lat(&[1.0, 0.0, 0.0, 1.0])), ("b".to_string(), lat(&[0.3, 0.2, -1.0, 0.5]))];
        let r = recognize(&g[1].1, &g).unwrap();
        assert_eq!(r[0].id, "b");
        assert!((r[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_probe_scores_zero() {
        let g = vec![("a".to_string(), lat(&[1.0, 0.0, 0.0, 0.0])), ("b".to_string(), lat(&[0.0, 1.0, 0.0, 0.0]))];
        let r = recognize(&lat(&[0.0, 0.0, 1.0, 1.0]), &g).unwrap();
        assert!(r.iter().all(|m| m.score == 0.0));
        // Ties keep gallery order.
        assert_eq!(r[0].id, "a");
    }

    #[test]
    fn ranking_matches_hand_cosines() {
        let probe = lat(&[1.0, 2.0, 0.0, 1.0]);
        let g = vec![
            ("x".to_string(), lat(&[1.0, 0.0, 0.0, 0.0])),
            ("y".to_string(), lat(&[0.0, 1.0, 0.0, 0.0])),
            ("z".to_string(), lat(&[-1.0, 0.0, 0.0, 0.0])),
        ];
        // |probe| = √6; dot products 1, 2, −1.
        let r = recognize(&probe, &g).unwrap();
        let ids: Vec<&str> = r.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["y", "x", "z"]);
        let s6 = 6f64.sqrt();
        assert!((r[0].score - 2.0 / s6).abs() < 1e-12);
        assert!((r[1].score - 1.0 / s6).abs() < 1e-12);
        assert!((r[2].score + 1.0 / s6).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_scores_minus_one() {
        let g = vec![("a".to_string(), lat(&[1.0, 0.0, 0.0, 0.0]))];
        let r = recognize(&lat(&[0.0; 4]), &g).unwrap();
        assert_eq!(r[0].score, -1.0);
        assert!(r[0].degenerate);
    }

    #[test]
    fn inconsistent_dimensions_fail() {
        let g = vec![("a".to_string(), Latents { shape: vec![1.0], albedo: vec![] })];
        assert!(recognize(&lat(&[1.0; 4]), &g).is_err());
    }

    #[test]
    fn all_components_failing_is_an_error() {
        let model = crate::inference::tests::face_model();
        let kde = KdeModel::new(vec![model.clone(), model]).unwrap();
        // No landmarks anywhere: every fit fails.
        let img = ImageRGB::new(16, 16, crate::mesh::Vec3::zeros());
        let r = kde_recognize(&kde, &img, &[("g".into(), img.clone())], None, &FitConfig::default());
        assert!(matches!(r, Err(Error::AllComponentsFailed(_))));
    }

    use proptest::prelude::*;
    proptest! {
        #[test]
        fn ranking_is_scale_invariant(
            probe in prop::collection::vec(-3.0f64..3.0, 4),
            gallery in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..6),
            k in 0.01f64..100.0,
        ) {
            let g: Vec<(String, Latents)> = gallery.iter().enumerate().map(|(i, v)| (i.to_string(), lat(v))).collect();
            let scaled: Vec<(String, Latents)> = gallery.iter().enumerate()
                .map(|(i, v)| (i.to_string(), lat(&v.iter().map(|x| x * k).collect::<Vec<_>>()))).collect();
            let probe_scaled: Vec<f64> = probe.iter().map(|x| x * k).collect();
            let a = recognize(&lat(&probe), &g).unwrap();
            let b = recognize(&lat(&probe_scaled), &scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.score - y.score).abs() < 1e-9);
            }
            // Ranks agree up to near-ties.
            for (x, y) in a.iter().zip(&b) {
                if x.id != y.id {
                    prop_assert!((x.score - y.score).abs() < 1e-9);
                }
            }
        }
    }
}
