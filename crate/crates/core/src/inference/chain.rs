use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FitConfig, SceneParams};
use crate::mesh::Vec3;
use crate::render::SHIllumination;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Rotation,
    Translation,
    Shape,
    Albedo,
    /// Deterministic closed-form lighting update.
    Illumination,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: usize,
    pub accepted: usize,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis rule for a symmetric proposal. Always consumes one uniform
/// draw so the random stream does not depend on the outcome.
pub fn metropolis_accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Add `N(0, σ²)` to a random contiguous block of `block` coefficients.
/// Returns false when nothing can move.
pub fn drift_block<R: Rng>(coeffs: &mut [f64], block: usize, sigma: f64, rng: &mut R) -> bool {
    if coeffs.is_empty() || sigma == 0.0 {
        return false;
    }
    let len = block.min(coeffs.len());
    let start = rng.random_range(0..=coeffs.len() - len);
    let normal = Normal::new(0.0, sigma).expect("finite σ");
    for c in &mut coeffs[start..start + len] {
        *c += normal.sample(rng);
    }
    true
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) struct ChainOutcome {
    pub best: SceneParams,
    pub best_log: f64,
    pub stats: BTreeMap<ProposalKind, AcceptanceStats>,
    /// Best-seen log posterior after each iteration.
    pub trace: Vec<f64>,
}

/// Draw a proposal from `current`; `None` when the drawn move is a no-op.
fn propose<R: Rng>(current: &SceneParams, cfg: &FitConfig, rng: &mut R) -> (ProposalKind, Option<SceneParams>) {
    let total: f64 = cfg.mixture.iter().sum();
    let u = rng.random::<f64>() * total;
    let scale = cfg.step_scales[rng.random_range(0..cfg.step_scales.len())];
    let mut next = current.clone();
    if u < cfg.mixture[0] {
        if rng.random::<bool>() {
            let sigma = cfg.rotation_sigma * scale;
            let omega = gaussian3(rng, sigma);
            if sigma == 0.0 {
                return (ProposalKind::Rotation, None);
            }
            next.pose = current.pose.rotated(&omega);
            (ProposalKind::Rotation, Some(next))
        } else {
            let sigma = cfg.translation_sigma * scale;
            let step = gaussian3(rng, sigma);
            if sigma == 0.0 {
                return (ProposalKind::Translation, None);
            }
            next.pose.translation += step;
            (ProposalKind::Translation, Some(next))
        }
    } else if u < cfg.mixture[0] + cfg.mixture[1] {
        let moved = drift_block(&mut next.latents.shape, cfg.block_size, cfg.shape_sigma * scale, rng);
        (ProposalKind::Shape, moved.then_some(next))
    } else {
        let moved = drift_block(&mut next.latents.albedo, cfg.block_size, cfg.albedo_sigma * scale, rng);
        (ProposalKind::Albedo, moved.then_some(next))
    }
}

/// Metropolis–Hastings over pose and latents. `log_target` returns `None`
/// for states with zero or undefined density. `relight`, when given, is
/// applied to the current state every `illumination_period` accepted moves.
pub(crate) fn run_chain<R: Rng>(
    init: SceneParams,
    init_log: f64,
    cfg: &FitConfig,
    iterations: usize,
    rng: &mut R,
    log_target: &mut dyn FnMut(&SceneParams) -> Option<f64>,
    mut relight: Option<&mut dyn FnMut(&SceneParams) -> Option<SHIllumination>>,
) -> ChainOutcome {
    let mut current = init;
    let mut current_log = init_log;
    let mut best = current.clone();
    let mut best_log = current_log;
    let mut stats: BTreeMap<ProposalKind, AcceptanceStats> = BTreeMap::new();
    let mut trace = Vec::with_capacity(iterations);
    let mut accepted_total = 0usize;
    for _ in 0..iterations {
        let (kind, candidate) = propose(&current, cfg, rng);
        let entry = stats.entry(kind).or_default();
        entry.proposed += 1;
        let mut moved = false;
        if let Some(candidate) = candidate {
            let log = log_target(&candidate);
            let ratio = log.map_or(f64::NEG_INFINITY, |l| l - current_log);
            if metropolis_accept(rng, ratio) {
                entry.accepted += 1;
                current = candidate;
                current_log = log.expect("accepted states have finite density");
                moved = true;
            }
        }
        if moved {
            accepted_total += 1;
            if current_log > best_log {
                best = current.clone();
                best_log = current_log;
            }
            if accepted_total.is_multiple_of(cfg.illumination_period) {
                if let Some(relight) = relight.as_mut() {
                    let entry = stats.entry(ProposalKind::Illumination).or_default();
                    entry.proposed += 1;
                    if let Some(sh) = relight(&current) {
                        let mut lit = current.clone();
                        lit.sh = sh;
                        if let Some(log) = log_target(&lit) {
                            entry.accepted += 1;
                            current = lit;
                            current_log = log;
                            if current_log > best_log {
                                best = current.clone();
                                best_log = current_log;
                            }
                        }
                    }
                }
            }
        }
        trace.push(best_log);
    }
    ChainOutcome {
        best,
        best_log,
        stats,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_a_gaussian_target() {
        // Correlated 2D Gaussian explored with the same block drift the
        // fitter uses on latents.
        let (m, s) = ([1.0, -2.0], [[2.0, 0.6], [0.6, 0.5]]);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let log_p = |x: &[f64]| {
            let d = [x[0] - m[0], x[1] - m[1]];
            -0.5 * (d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0, 0.0];
        let mut lp = log_p(&x);
        let steps = 100_000;
        let burn = 2000;
        let (mut sum, mut sum2) = ([0.0; 2], [[0.0; 2]; 2]);
        for step in 0..steps + burn {
            let mut y = x.clone();
            drift_block(&mut y, 2, 1.2, &mut rng);
            let ly = log_p(&y);
            if metropolis_accept(&mut rng, ly - lp) {
                x = y;
                lp = ly;
            }
            if step >= burn {
                for a in 0..2 {
                    sum[a] += x[a];
                    for b in 0..2 {
                        sum2[a][b] += x[a] * x[b];
                    }
                }
            }
        }
        let n = steps as f64;
        let mean = [sum[0] / n, sum[1] / n];
        for a in 0..2 {
            assert!((mean[a] - m[a]).abs() <= 0.05 * s[a][a].sqrt().max(m[a].abs()), "mean {mean:?}");
            for b in 0..2 {
                let cov = sum2[a][b] / n - mean[a] * mean[b];
                let scale = (s[a][a] * s[b][b]).sqrt();
                assert!((cov - s[a][b]).abs() <= 0.05 * scale, "cov[{a}][{b}] = {cov}");
            }
        }
    }

    #[test]
    fn drift_respects_block_and_zero_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = vec![0.0; 30];
        assert!(!drift_block(&mut c, 10, 0.0, &mut rng));
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(drift_block(&mut c, 10, 1.0, &mut rng));
        let moved: Vec<usize> = (0..30).filter(|&i| c[i] != 0.0).collect();
        assert_eq!(moved.len(), 10);
        assert_eq!(moved[9] - moved[0], 9);
        assert!(!drift_block(&mut [], 10, 1.0, &mut rng));
    }

    #[test]
    fn acceptance_always_takes_improvements() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..100).all(|_| metropolis_accept(&mut rng, 1e-9)));
        assert!((0..100).all(|_| !metropolis_accept(&mut rng, f64::NEG_INFINITY)));
        assert!((0..100).all(|_| !metropolis_accept(&mut rng, f64::NAN)));
    }
}
