//! Least-squares similarity alignment of corresponding point sets.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// `p ↦ scale · rotation · p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

/// Umeyama's closed form for the transform taking `src` onto `dst`.
/// Without `with_scale` the result is rigid.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    if src.is_empty() {
        return Err(Error::InvalidArgument("alignment needs at least one point pair".into()));
    }
    let n = src.len() as f64;
    let mu_s: Vec3 = src.iter().sum::<Vec3>() / n;
    let mu_d: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut signs = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[(2, 2)] = -1.0;
    }
    let rotation = u * signs * v_t;
    let scale = if with_scale && var_s > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * signs).trace() / var_s
    } else {
        1.0
    };
    Ok(Similarity {
        rotation,
        translation: mu_d - rotation * mu_s * scale,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn recovers_random_similarities(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            t in prop::array::uniform3(-50.0f64..50.0),
            scale in 0.5f64..2.0,
            pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 4..20),
        ) {
            let axis = Vec3::from(axis);
            prop_assume!(axis.norm() > 0.1);
            let r = Rotation3::from_scaled_axis(axis.normalize() * angle);
            let src: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
            // Skip nearly collinear configurations, where rotation is ambiguous.
            let c: Vec3 = src.iter().sum::<Vec3>() / src.len() as f64;
            let m: Matrix3<f64> = src.iter().map(|p| (p - c) * (p - c).transpose()).sum();
            let ev = m.symmetric_eigenvalues();
            prop_assume!(ev.min() > 1.0);
            let dst: Vec<Vec3> = src.iter().map(|p| r * p * scale + Vec3::from(t)).collect();
            let sim = umeyama(&src, &dst, true).unwrap();
            prop_assert!((sim.rotation - r.matrix()).abs().max() < 1e-8);
            prop_assert!((sim.scale - scale).abs() < 1e-8);
            prop_assert!((sim.translation - Vec3::from(t)).norm() < 1e-6);
        }
    }

    #[test]
    fn rigid_mode_keeps_unit_scale() {
        let src = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
        let dst: Vec<Vec3> = src.iter().map(|p| p * 2.0 + Vec3::new(5.0, 0.0, 0.0)).collect();
        let sim = umeyama(&src, &dst, false).unwrap();
        assert_eq!(sim.scale, 1.0);
        assert!((sim.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_fail() {
        assert!(umeyama(&[Vec3::zeros()], &[], false).is_err());
        assert!(umeyama(&[], &[], false).is_err());
    }
}
