use nalgebra::{Matrix3, Rotation3, Similarity3, Translation3, UnitQuaternion};

use super::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    Se3,
    Sim3,
}

pub fn apply_sim3(s: &Similarity3<f64>, p: &Vec3) -> Vec3 {
    (s * nalgebra::Point3::from(*p)).coords
}

/// Least-squares `T` minimizing `sum |b_i - T(a_i)|^2` (Umeyama 1991).
pub fn umeyama_align(a: &[Vec3], b: &[Vec3], mode: AlignMode) -> Result<Similarity3<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "trajectories of {} and {} positions",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} positions, need at least 3")));
    }
    let nf = n as f64;
    let ma = a.iter().sum::<Vec3>() / nf;
    let mb = b.iter().sum::<Vec3>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_a = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        let (da, db) = (pa - ma, pb - mb);
        cov += db * da.transpose();
        var_a += da.norm_squared();
    }
    cov /= nf;
    var_a /= nf;

    let sa =
        nalgebra::SymmetricEigen::new(a.iter().map(|p| (p - ma) * (p - ma).transpose()).sum::<Matrix3<f64>>() / nf);
    let mut ev: Vec<f64> = sa.eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("positions are collinear or coincident".into()));
    }

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let sv = svd.singular_values;
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        let smallest = sv.imin();
        d[(smallest, smallest)] = -1.0;
    }
    let r = u * d * vt;
    let scale = match mode {
        AlignMode::Se3 => 1.0,
        AlignMode::Sim3 => {
            let tr: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
            tr / var_a
        }
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate(format!("similarity scale {scale}")));
    }
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = mb - scale * (rot * ma);
    Ok(Similarity3::from_parts(Translation3::from(t), rot, scale))
}
