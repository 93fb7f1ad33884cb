use nalgebra::{DMatrix, SymmetricEigen};

use super::AnalysisError;
use crate::models::Tensor;

/// Projection of every pixel onto the first principal component of the
/// channel covariance, min-max normalised to `[0, 1]` (row-major `H*W`).
///
/// The sign is chosen so the projection has non-negative skewness; when the
/// skewness vanishes the first nonzero loading is made positive. A cube
/// without variance maps to 0.5 everywhere.
pub fn dominant_component_image(cube: &Tensor) -> Result<Vec<f64>, AnalysisError> {
    if cube.n != 1 || cube.c == 0 || cube.plane() == 0 {
        return Err(AnalysisError::Config { field: "cube".into(), reason: format!("expected [1, C>=1, H, W], got {:?}", cube.shape()) });
    }
    if !cube.is_finite() {
        return Err(AnalysisError::NonFinite("feature cube".into()));
    }
    let (c, n) = (cube.c, cube.plane());
    let means: Vec<f64> = (0..c).map(|k| cube.data[k * n..(k + 1) * n].iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, c, |j, k| cube.data[k * n + j] as f64 - means[k]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().enumerate().fold(0, |b, (i, &v)| if v > eig.eigenvalues[b] { i } else { b });
    let mut axis = eig.eigenvectors.column(top).into_owned();
    let scale = means.iter().map(|m| m.abs()).fold(1.0, f64::max);
    if eig.eigenvalues[top] <= 1e-24 * scale * scale {
        return Ok(vec![0.5; n]);
    }
    let mut proj: Vec<f64> = (centred.clone() * &axis).iter().copied().collect();
    let m2 = proj.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let m3 = proj.iter().map(|v| v * v * v).sum::<f64>() / n as f64;
    let skew = m3 / m2.powf(1.5);
    let flip = if skew.abs() > 1e-9 {
        skew < 0.0
    } else {
        axis.iter().find(|v| v.abs() > 1e-12).is_some_and(|&v| v < 0.0)
    };
    if flip {
        axis.neg_mut();
        proj.iter_mut().for_each(|v| *v = -*v);
    }
    let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Ok(vec![0.5; n]);
    }
    Ok(proj.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn single_channel_is_min_max() {
        let t = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 3.0, 2.0, 9.0]);
        let out = dominant_component_image(&t).unwrap();
        assert_eq!(out, vec![0.0, 0.25, 0.125, 1.0]);
    }

    #[test]
    fn constant_cube_is_half() {
        let t = Tensor::from_vec(1, 3, 4, 4, vec![2.5; 48]);
        assert!(dominant_component_image(&t).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rank_one_cube_recovers_pattern() {
        let mut rng = crate::rng::seeded(8);
        let (c, hw) = (6, 64);
        let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let pattern: Vec<f64> = (0..hw).map(|j| ((j as f64) * 0.37).sin() + 0.01 * j as f64).collect();
        let data: Vec<f32> = (0..c).flat_map(|k| pattern.iter().map(|p| (v[k] / norm * p) as f32).collect::<Vec<_>>()).collect();
        let out = dominant_component_image(&Tensor::from_vec(1, c, 8, 8, data)).unwrap();
        assert!(correlation(&out, &pattern).abs() >= 1.0 - 1e-6);
    }

    #[test]
    fn rejects_non_finite() {
        let t = Tensor::from_vec(1, 1, 1, 2, vec![f32::NAN, 1.0]);
        assert!(dominant_component_image(&t).is_err());
    }

    proptest! {
        #[test]
        fn channel_permutation_invariant(seed in 0u64..1000, shift in 1usize..4) {
            let mut rng = crate::rng::seeded(seed);
            let (c, hw) = (4, 25);
            let data: Vec<f32> = (0..c * hw).map(|i| rng.random_range(-1.0f32..1.0) * (1.0 + (i / hw) as f32)).collect();
            let a = dominant_component_image(&Tensor::from_vec(1, c, 5, 5, data.clone())).unwrap();
            let permuted: Vec<f32> = (0..c).flat_map(|k| data[((k + shift) % c) * hw..((k + shift) % c + 1) * hw].to_vec()).collect();
            let b = dominant_component_image(&Tensor::from_vec(1, c, 5, 5, permuted)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
