//! Dataset manifests: JSONL loading/saving, seeded subsampling, and a
//! synthetic image fixture generator for offline runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ImageRecord, Verdict, REAL_GENERATOR};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid manifest JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has label {label} but generator {generator:?}")]
    LabelMismatch { line: usize, id: String, label: Verdict, generator: String },
    #[error("line {line}: unsupported manifest schema version {version}")]
    SchemaVersion { line: usize, version: u32 },
    #[error("failed to encode fixture image: {0}")]
    Image(#[from] image::ImageError),
}

/// Optional first line of a manifest file. Distinguished from a record by
/// the absence of an `id` field.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// An ordered set of image records, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub header: Option<ManifestHeader>,
    pub records: Vec<ImageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Parses manifest text. Blank lines are skipped; all errors carry the
    /// 1-based line number they occurred on.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut header = None;
        let mut records: Vec<ImageRecord> = Vec::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        let mut saw_content = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(trimmed)
                .map_err(|source| ManifestError::Json { line, source })?;
            if !saw_content && value.get("id").is_none() {
                let h: ManifestHeader = serde_json::from_value(value)
                    .map_err(|source| ManifestError::Json { line, source })?;
                if h.schema_version != 1 {
                    return Err(ManifestError::SchemaVersion { line, version: h.schema_version });
                }
                header = Some(h);
                saw_content = true;
                continue;
            }
            saw_content = true;
            let record: ImageRecord = serde_json::from_value(value)
                .map_err(|source| ManifestError::Json { line, source })?;
            if !record.label_matches_generator() {
                return Err(ManifestError::LabelMismatch {
                    line,
                    id: record.id,
                    label: record.true_label,
                    generator: record.generator,
                });
            }
            if seen.insert(record.id.clone(), ()).is_some() {
                return Err(ManifestError::DuplicateId { line, id: record.id });
            }
            records.push(record);
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::to_string(h).expect("header serializes"));
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Record field used to stratify a subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratifyField {
    Generator,
    Label,
    Dataset,
}

impl StratifyField {
    fn key<'a>(&self, r: &'a ImageRecord) -> &'a str {
        match self {
            Self::Generator => &r.generator,
            Self::Label => r.true_label.as_str(),
            Self::Dataset => &r.dataset,
        }
    }
}

/// Draws `n` records uniformly without replacement, preserving input order
/// in the result.
///
/// With a stratification field, per-stratum quotas follow the largest
/// remainder rule on `n·|stratum|/|total|` (ties broken by larger remainder,
/// then larger stratum, then key), so quotas sum to `n` and never exceed a
/// stratum's size. `n >= records.len()` returns everything. Identical seeds
/// give identical samples.
pub fn sample_split(
    records: &[ImageRecord],
    n: usize,
    seed: u64,
    stratify: Option<StratifyField>,
) -> Vec<ImageRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = match stratify {
        None => choose_without_replacement(&mut rng, (0..records.len()).collect(), n),
        Some(field) => {
            let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                strata.entry(field.key(r)).or_default().push(i);
            }
            let quotas = largest_remainder_quotas(&strata, n, records.len());
            let mut picked = Vec::with_capacity(n);
            for (key, indices) in strata {
                let quota = quotas[key];
                picked.extend(choose_without_replacement(&mut rng, indices, quota));
            }
            picked
        }
    };
    chosen.sort_unstable();
    chosen.into_iter().map(|i| records[i].clone()).collect()
}

/// First `k` elements of a seeded partial Fisher–Yates shuffle.
fn choose_without_replacement(rng: &mut ChaCha8Rng, mut pool: Vec<usize>, k: usize) -> Vec<usize> {
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn largest_remainder_quotas<'a>(
    strata: &BTreeMap<&'a str, Vec<usize>>,
    n: usize,
    total: usize,
) -> BTreeMap<&'a str, usize> {
    let mut quotas: BTreeMap<&str, usize> = BTreeMap::new();
    // (remainder, stratum size, key) — larger remainder first, then larger
    // stratum, then key order
    let mut order: Vec<(usize, usize, &str)> = Vec::with_capacity(strata.len());
    let mut assigned = 0usize;
    for (key, indices) in strata {
        let exact_num = n * indices.len();
        let base = exact_num / total;
        quotas.insert(key, base);
        assigned += base;
        order.push((exact_num % total, indices.len(), key));
    }
    order.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
    for (_, _, key) in order.into_iter().take(n - assigned) {
        *quotas.get_mut(key).expect("key present") += 1;
    }
    quotas
}

/// Writes a synthetic dataset under `dir`: deterministic 16×16 RGB noise
/// PNGs in `dir/images/` plus `dir/manifest.jsonl` referring to them by
/// absolute path.
///
/// `groups` pairs a generator tag with a record count; the tag `"real"`
/// produces real-labeled records, anything else AI-labeled ones. The same
/// seed reproduces identical image bytes.
pub fn synth_fixture(
    dir: &Path,
    groups: &[(&str, usize)],
    seed: u64,
) -> Result<Manifest, ManifestError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)?;

    let mut records = Vec::new();
    let mut global_idx = 0u64;
    for (generator, count) in groups {
        for i in 0..*count {
            let id = format!("{generator}-{i:03}");
            let path = images_dir.join(format!("{id}.png"));

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(global_idx);
            let img = image::RgbImage::from_fn(16, 16, |_, _| image::Rgb(rng.random::<[u8; 3]>()));
            img.save(&path)?;

            let label =
                if *generator == REAL_GENERATOR { Verdict::Real } else { Verdict::AiGenerated };
            records.push(ImageRecord {
                id,
                image_ref: path.display().to_string(),
                true_label: label,
                generator: generator.to_string(),
                dataset: "synthetic".into(),
                split: "fixture".into(),
            });
            global_idx += 1;
        }
    }

    let manifest = Manifest {
        header: Some(ManifestHeader {
            schema_version: 1,
            dataset: Some("synthetic".into()),
            notes: Some(format!("generated noise fixture, seed {seed}")),
        }),
        records,
    };
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
