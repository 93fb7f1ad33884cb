//! NLCKPT01 named-tensor container and encoder transplant.
//!
//! Layout: 8-byte magic, u64 LE header length, UTF-8 JSON header
//! `{entries: [{path, shape, role, offset}], metadata}`, then the f32 LE
//! payload. Offsets are absolute byte positions in the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_model, EncoderSpec, FrameworkKind, SegmentationModel};
use super::params::Role;
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NLCKPT01";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub encoder_spec: EncoderSpec,
    pub framework: FrameworkKind,
    pub num_classes: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub data: Vec<f32>,
}

impl CheckpointEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered entries plus metadata. Immutable once built; safe to share.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub entries: Vec<CheckpointEntry>,
    pub metadata: CheckpointMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportScope {
    EncoderOnly,
    Full,
}

/// Outcome of a non-failing import.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub copied: Vec<String>,
    /// In scope on the model side but absent from the bundle.
    pub missing: Vec<String>,
    /// In scope in the bundle but absent from the model.
    pub extra: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    path: String,
    shape: Vec<usize>,
    role: Role,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    entries: Vec<HeaderEntry>,
    metadata: CheckpointMetadata,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

impl CheckpointBundle {
    pub fn get(&self, path: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    /// Entries with the given role, in bundle order.
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &CheckpointEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes: Vec<u64> = self.entries.iter().map(|e| (e.data.len() * 4) as u64).collect();
        // Offsets depend on the header length, which depends on the offsets'
        // decimal width; iterate until stable.
        let mut base = 16u64;
        let header = loop {
            let mut off = base;
            let entries = self
                .entries
                .iter()
                .zip(&sizes)
                .map(|(e, &n)| {
                    let h = HeaderEntry { path: e.path.clone(), shape: e.shape.clone(), role: e.role, offset: off };
                    off += n;
                    h
                })
                .collect();
            let json = serde_json::to_vec(&Header { entries, metadata: self.metadata.clone() }).expect("header serializes");
            let next = 16 + json.len() as u64;
            if next == base {
                break json;
            }
            base = next;
        };
        let mut out = Vec::with_capacity(base as usize + sizes.iter().sum::<u64>() as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 {
            return Err(corrupt("file shorter than the fixed prefix"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = 16u64.checked_add(hlen).filter(|&e| e <= bytes.len() as u64).ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..hend as usize]).map_err(|e| corrupt(format!("header: {e}")))?;
        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            let numel = h
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(format!("{}: shape overflows", h.path)))?;
            let start = h.offset;
            let end = numel
                .checked_mul(4)
                .and_then(|n| start.checked_add(n as u64))
                .filter(|&e| start >= hend && e <= bytes.len() as u64)
                .ok_or_else(|| corrupt(format!("{}: payload out of bounds", h.path)))?;
            let data = bytes[start as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(CheckpointEntry { path: h.path, shape: h.shape, role: h.role, data });
        }
        Ok(CheckpointBundle { entries, metadata: header.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_bytes(&bytes)
    }

    /// Canonical bytes of the encoder entries only (paths, shapes, payload),
    /// for byte-level comparison across frameworks.
    pub fn encoder_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in self.with_role(Role::Encoder) {
            out.extend_from_slice(e.path.as_bytes());
            out.push(0);
            for d in &e.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

fn in_scope(role: Role, scope: ImportScope) -> bool {
    match scope {
        ImportScope::EncoderOnly => role == Role::Encoder,
        ImportScope::Full => role != Role::Activation,
    }
}

impl SegmentationModel {
    /// Rebuilds the model described by a bundle's metadata and loads every
    /// tensor from it.
    pub fn from_checkpoint(bundle: &CheckpointBundle) -> Result<SegmentationModel, ModelError> {
        let md = &bundle.metadata;
        let mut model = build_model(&md.encoder_spec, md.framework, md.num_classes, md.provenance.seed)?;
        model.import_checkpoint(bundle, ImportScope::Full, true)?;
        Ok(model)
    }

    /// Every tensor (including normalization running statistics) in
    /// registration order.
    pub fn export_checkpoint(&self, provenance: Provenance) -> CheckpointBundle {
        let entries = self
            .params()
            .iter()
            .map(|p| CheckpointEntry { path: p.name.clone(), shape: p.shape.clone(), role: p.role, data: p.value.clone() })
            .collect();
        CheckpointBundle {
            entries,
            metadata: CheckpointMetadata {
                encoder_spec: self.spec().clone(),
                framework: self.kind(),
                num_classes: self.num_classes(),
                provenance,
            },
        }
    }

    /// Copies in-scope tensors from `bundle`. Shapes are checked first, in
    /// model order; any mismatch fails and names the path. Strict mode then
    /// rejects missing or extra in-scope paths and a differing encoder spec.
    /// Nothing is written unless every check passes.
    pub fn import_checkpoint(&mut self, bundle: &CheckpointBundle, scope: ImportScope, strict: bool) -> Result<ImportReport, ModelError> {
        let mut report = ImportReport::default();
        let mut plan = Vec::new();
        for (id, p) in self.params().iter().enumerate() {
            if !in_scope(p.role, scope) {
                continue;
            }
            match bundle.get(&p.name) {
                Some(e) if e.shape != p.shape => {
                    return Err(ModelError::ShapeMismatch { path: p.name.clone(), checkpoint: e.shape.clone(), model: p.shape.clone() })
                }
                Some(e) if e.data.len() != e.numel() => return Err(corrupt(format!("{}: payload length", e.path))),
                Some(e) => plan.push((id, e)),
                None => report.missing.push(p.name.clone()),
            }
        }
        report.extra = bundle
            .entries
            .iter()
            .filter(|e| in_scope(e.role, scope) && self.params().find(&e.path).is_none())
            .map(|e| e.path.clone())
            .collect();
        if strict {
            if !report.missing.is_empty() || !report.extra.is_empty() {
                return Err(ModelError::MissingOrExtra { missing: report.missing, extra: report.extra });
            }
            if &bundle.metadata.encoder_spec != self.spec() {
                return Err(ModelError::SpecMismatch {
                    checkpoint: bundle.metadata.encoder_spec.to_string(),
                    model: self.spec().to_string(),
                });
            }
        }
        for (id, e) in plan {
            self.params_mut().get_mut(id).value.copy_from_slice(&e.data);
            report.copied.push(e.path.clone());
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EncoderSpec {
        EncoderSpec { in_channels: 4, stage_widths: vec![4, 8, 8], blocks_per_stage: 1, downsample_factor: 2 }
    }

    #[test]
    fn bytes_round_trip_and_offsets_are_absolute() {
        let m = build_model(&spec(), FrameworkKind::Unet, 3, 5).unwrap();
        let b = m.export_checkpoint(Provenance { config_hash: "abc".into(), seed: 5, epoch: 2 });
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = CheckpointBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        let first = header["entries"][0]["offset"].as_u64().unwrap() as usize;
        assert_eq!(first, 16 + hlen);
        let v = f32::from_le_bytes(bytes[first..first + 4].try_into().unwrap());
        assert_eq!(v, b.entries[0].data[0]);
    }

    #[test]
    fn rejects_corrupt_input() {
        let m = build_model(&spec(), FrameworkKind::Unet, 3, 5).unwrap();
        let bytes = m.export_checkpoint(Provenance::default()).to_bytes();
        assert!(CheckpointBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CheckpointBundle::from_bytes(&bad).is_err());
        assert!(CheckpointBundle::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = build_model(&spec(), FrameworkKind::Aspp, 3, 11).unwrap().export_checkpoint(Provenance::default());
        let b = build_model(&spec(), FrameworkKind::Aspp, 3, 11).unwrap().export_checkpoint(Provenance::default());
        let c = build_model(&spec(), FrameworkKind::Aspp, 3, 12).unwrap().export_checkpoint(Provenance::default());
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn full_import_is_bit_exact() {
        let src = build_model(&spec(), FrameworkKind::Pyramid, 3, 1).unwrap();
        let mut dst = build_model(&spec(), FrameworkKind::Pyramid, 3, 2).unwrap();
        let b = src.export_checkpoint(Provenance::default());
        let r = dst.import_checkpoint(&b, ImportScope::Full, true).unwrap();
        assert_eq!(r.copied.len(), b.entries.len());
        assert_eq!(dst.export_checkpoint(Provenance::default()).to_bytes(), b.to_bytes());
        let rebuilt = SegmentationModel::from_checkpoint(&b).unwrap();
        assert_eq!(rebuilt.kind(), FrameworkKind::Pyramid);
        assert_eq!(rebuilt.export_checkpoint(Provenance::default()).to_bytes(), b.to_bytes());
    }

    #[test]
    fn encoder_transplant_commutes_and_leaves_decoder() {
        let unet = build_model(&spec(), FrameworkKind::Unet, 3, 1).unwrap();
        let mut aspp = build_model(&spec(), FrameworkKind::Aspp, 3, 2).unwrap();
        let before = aspp.export_checkpoint(Provenance::default());
        let src = unet.export_checkpoint(Provenance::default());
        aspp.import_checkpoint(&src, ImportScope::EncoderOnly, true).unwrap();
        let after = aspp.export_checkpoint(Provenance::default());
        assert_eq!(after.encoder_bytes(), src.encoder_bytes());
        for (a, b) in before.entries.iter().zip(&after.entries).filter(|(a, _)| a.role != Role::Encoder) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn width_change_names_first_offending_path() {
        let src = build_model(&spec(), FrameworkKind::Unet, 3, 1).unwrap().export_checkpoint(Provenance::default());
        let other = EncoderSpec { stage_widths: vec![4, 12, 8], ..spec() };
        let mut dst = build_model(&other, FrameworkKind::Aspp, 3, 1).unwrap();
        let before = dst.export_checkpoint(Provenance::default());
        match dst.import_checkpoint(&src, ImportScope::EncoderOnly, true) {
            Err(ModelError::ShapeMismatch { path, .. }) => assert_eq!(path, "encoder.stage2.block0.shortcut.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(dst.export_checkpoint(Provenance::default()), before);
    }

    #[test]
    fn strict_and_lenient_missing_paths() {
        let src = build_model(&spec(), FrameworkKind::Unet, 3, 1).unwrap().export_checkpoint(Provenance::default());
        let deeper = EncoderSpec { blocks_per_stage: 2, ..spec() };
        let mut dst = build_model(&deeper, FrameworkKind::Unet, 3, 1).unwrap();
        assert!(matches!(dst.import_checkpoint(&src, ImportScope::EncoderOnly, true), Err(ModelError::MissingOrExtra { .. })));
        let r = dst.import_checkpoint(&src, ImportScope::EncoderOnly, false).unwrap();
        assert!(r.missing.iter().any(|p| p.starts_with("encoder.stage1.block1.")));
        assert!(r.extra.is_empty());
        assert!(!r.copied.is_empty());
    }

    #[test]
    fn strict_rejects_spec_mismatch_with_equal_shapes() {
        let src = build_model(&spec(), FrameworkKind::Unet, 3, 1).unwrap();
        let mut b = src.export_checkpoint(Provenance::default());
        b.metadata.encoder_spec.downsample_factor = 3;
        let mut dst = build_model(&spec(), FrameworkKind::Unet, 3, 1).unwrap();
        assert!(matches!(dst.import_checkpoint(&b, ImportScope::EncoderOnly, true), Err(ModelError::SpecMismatch { .. })));
    }
}
