//! Corpus generation and the on-disk corpus layout (a directory of `.nlp`
//! files plus `manifest.json`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_patch, write_patch};
use super::noise::{corrupt_mask, NoiseConfig};
use super::raster::PatchTriple;
use super::scene::{generate_scene_variant, SceneConfig};
use super::DataError;
use crate::exec::Exec;
use crate::rng::derive;

const NOISE_STREAM: u64 = 0x21;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    Finetune,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Pretrain => "pretrain",
            Split::Finetune => "finetune",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSizes {
    pub pretrain: usize,
    pub finetune: usize,
    pub test: usize,
    /// Co-registered appearance variants per location (season analog).
    pub variants: u16,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes { pretrain: 2000, finetune: 100, test: 400, variants: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub file: String,
    pub split: Split,
    pub location: u32,
    pub triple: PatchTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub class_names: Vec<String>,
    pub noisy_class_names: Vec<String>,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub location: u32,
    pub variant: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub class_names: Vec<String>,
    pub noisy_class_names: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Entries of `split` grouped by location (variants of one location
    /// together), in location order.
    pub fn locations(&self, split: Split) -> Vec<Vec<&PatchTriple>> {
        let mut groups: BTreeMap<u32, Vec<&PatchTriple>> = BTreeMap::new();
        for e in self.split(split) {
            groups.entry(e.location).or_default().push(&e.triple);
        }
        groups.into_values().collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: 1,
            class_names: self.class_names.clone(),
            noisy_class_names: self.noisy_class_names.clone(),
            files: self
                .entries
                .iter()
                .map(|e| ManifestEntry { file: e.file.clone(), split: e.split, location: e.location, variant: e.triple.variant_id })
                .collect(),
        }
    }
}

/// Generates the pretrain / finetune / test splits. Location `i` (counted
/// across splits in that order) uses scene seed `seed ^ i`.
pub fn generate_corpus(scene: &SceneConfig, noise: &NoiseConfig, sizes: &CorpusSizes, seed: u64) -> Result<Corpus, DataError> {
    generate_corpus_with(Exec::current(), scene, noise, sizes, seed)
}

/// [`generate_corpus`] under an explicit execution mode.
pub fn generate_corpus_with(
    exec: Exec,
    scene: &SceneConfig,
    noise: &NoiseConfig,
    sizes: &CorpusSizes,
    seed: u64,
) -> Result<Corpus, DataError> {
    scene.validate()?;
    noise.validate()?;
    if sizes.variants == 0 {
        return Err(DataError::config("variants", "need at least one variant per location"));
    }
    let splits: Vec<Split> = std::iter::repeat_n(Split::Pretrain, sizes.pretrain)
        .chain(std::iter::repeat_n(Split::Finetune, sizes.finetune))
        .chain(std::iter::repeat_n(Split::Test, sizes.test))
        .collect();
    let per_location = exec.map(splits.len(), |loc| -> Result<Vec<CorpusEntry>, DataError> {
        let patch_seed = seed ^ loc as u64;
        let noise_cfg = noise.with_seed(derive(patch_seed, NOISE_STREAM));
        let mut noisy = None;
        (0..sizes.variants)
            .map(|v| {
                let (image, exact_mask) = generate_scene_variant(scene, patch_seed, v)?;
                let noisy_mask = noisy
                    .get_or_insert_with(|| corrupt_mask(&exact_mask, &scene.pretrain_class_map, &noise_cfg))
                    .clone();
                Ok(CorpusEntry {
                    file: format!("{}_{loc:06}_v{v}.nlp", splits[loc]),
                    split: splits[loc],
                    location: loc as u32,
                    triple: PatchTriple { image, exact_mask, noisy_mask, variant_id: v, seed: patch_seed },
                })
            })
            .collect()
    });
    let mut entries = Vec::with_capacity(splits.len() * sizes.variants as usize);
    for group in per_location {
        entries.extend(group?);
    }
    Ok(Corpus { class_names: scene.class_names(), noisy_class_names: scene.pretrain_class_names.clone(), entries })
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for e in &corpus.entries {
        write_patch(&e.triple, &dir.join(&e.file))?;
    }
    let manifest = serde_json::to_string_pretty(&corpus.manifest()).map_err(|e| DataError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest + "\n").map_err(|e| DataError::io(&path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    if manifest.version != 1 {
        return Err(DataError::Manifest(format!("unsupported manifest version {}", manifest.version)));
    }
    let loaded = Exec::current().map(manifest.files.len(), |i| read_patch(&dir.join(&manifest.files[i].file)));
    let mut entries = Vec::with_capacity(loaded.len());
    for (m, triple) in manifest.files.iter().zip(loaded) {
        let triple = triple?;
        if triple.exact_mask.num_classes as usize != manifest.class_names.len()
            || triple.noisy_mask.num_classes as usize != manifest.noisy_class_names.len()
        {
            return Err(DataError::ClassMismatch(format!("{} disagrees with the manifest class lists", m.file)));
        }
        entries.push(CorpusEntry { file: m.file.clone(), split: m.split, location: m.location, triple });
    }
    Ok(Corpus { class_names: manifest.class_names, noisy_class_names: manifest.noisy_class_names, entries })
}
