//! Gaussian KL divergence of per-module convolution weight statistics.

use super::profile::{mean_std, AnalysisProfile, ProfileEntry, ProfileKind};
use super::AnalysisError;
use crate::models::{CheckpointBundle, CheckpointEntry, Role, Side};

/// `KL(N(mu_p, var_p) || N(mu_q, var_q))`.
pub fn gaussian_kl(mu_p: f64, var_p: f64, mu_q: f64, var_q: f64) -> Result<f64, AnalysisError> {
    if !(var_p > 0.0 && var_q > 0.0) {
        return Err(AnalysisError::Config { field: "variance".into(), reason: format!("variances must be positive, got {var_p} and {var_q}") });
    }
    let kl = 0.5 * (var_q / var_p).ln() + (var_p + (mu_p - mu_q).powi(2)) / (2.0 * var_q) - 0.5;
    Ok(kl.max(0.0))
}

/// Convolution weights of a bundle, as `(module path, side, entry)`.
fn conv_weights(bundle: &CheckpointBundle) -> Vec<(&str, Side, &CheckpointEntry)> {
    bundle
        .entries
        .iter()
        .filter(|e| e.shape.len() == 4 && e.role != Role::Activation)
        .filter_map(|e| {
            let path = e.path.strip_suffix(".weight")?;
            let side = if e.role == Role::Encoder { Side::Encoder } else { Side::Decoder };
            Some((path, side, e))
        })
        .collect()
}

fn moments(path: &str, data: &[f32]) -> Result<(f64, f64), AnalysisError> {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(AnalysisError::ZeroVariance { path: path.into() });
    }
    Ok((mean, var))
}

fn kl_values(exact: &CheckpointBundle, noisy: &CheckpointBundle) -> Result<Vec<(String, Side, f64)>, AnalysisError> {
    let a = conv_weights(exact);
    let b = conv_weights(noisy);
    if a.len() != b.len() {
        return Err(AnalysisError::PathMismatch(format!("{} vs {} convolution modules", a.len(), b.len())));
    }
    a.iter()
        .zip(&b)
        .map(|((pa, side, ea), (pb, _, eb))| {
            if pa != pb || ea.shape != eb.shape {
                return Err(AnalysisError::PathMismatch(format!("{pa} {:?} vs {pb} {:?}", ea.shape, eb.shape)));
            }
            let (mp, vp) = moments(pa, &ea.data)?;
            let (mq, vq) = moments(pb, &eb.data)?;
            Ok((pa.to_string(), *side, gaussian_kl(mp, vp, mq, vq)?))
        })
        .collect()
}

/// Per-module KL from the exact-label model's weight distribution (P) to the
/// noisy-label model's (Q). Biases and normalisation tensors are excluded.
pub fn weight_kl_profile(exact: &CheckpointBundle, noisy: &CheckpointBundle) -> Result<AnalysisProfile, AnalysisError> {
    let entries = kl_values(exact, noisy)?
        .into_iter()
        .map(|(path, side, v)| ProfileEntry { path, side, value: Some(v), std: None })
        .collect();
    Ok(AnalysisProfile { kind: ProfileKind::Kl, entries, smoothing: None })
}

/// Mean and population std over `(exact, noisy)` pairs.
pub fn weight_kl_profile_multi(pairs: &[(CheckpointBundle, CheckpointBundle)]) -> Result<AnalysisProfile, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::Config { field: "pairs".into(), reason: "need at least one pair".into() });
    }
    let runs = pairs.iter().map(|(e, n)| kl_values(e, n)).collect::<Result<Vec<_>, _>>()?;
    let first = &runs[0];
    if runs.iter().any(|r| r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.0 != b.0)) {
        return Err(AnalysisError::PathMismatch("pairs disagree on module paths".into()));
    }
    let entries = first
        .iter()
        .enumerate()
        .map(|(j, (path, side, _))| {
            let vals: Vec<f64> = runs.iter().map(|r| r[j].2).collect();
            let (m, s) = mean_std(&vals);
            ProfileEntry { path: path.clone(), side: *side, value: Some(m), std: Some(s) }
        })
        .collect();
    Ok(AnalysisProfile { kind: ProfileKind::Kl, entries, smoothing: None })
}
