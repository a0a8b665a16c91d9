//! JSON-lines persistence for datasets, with a manifest carrying the config
//! and a content hash.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::worldgen::dataset::{Dataset, DatasetConfig, InstanceRecord, QAInstance, Split};
use crate::worldgen::vocab::Vocab;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub vocab: Vocab,
    pub seed: u64,
    pub featurizer_seed: u64,
    pub counts: SplitCounts,
    /// Hex sha256 over the three split files, in train/test/test_conflict order.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub test_conflict: usize,
}

pub fn split_file(split: Split) -> String {
    format!("{}.jsonl", split.as_str())
}

pub fn to_jsonl(instances: &[QAInstance]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for inst in instances {
        serde_json::to_writer(&mut buf, &InstanceRecord::from(inst))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_splits(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Hash of the dataset's serialized form, identical to the manifest hash.
pub fn content_hash(ds: &Dataset) -> Result<String> {
    let parts = [
        to_jsonl(&ds.train)?,
        to_jsonl(&ds.test)?,
        to_jsonl(&ds.test_conflict)?,
    ];
    Ok(hash_splits(&[&parts[0], &parts[1], &parts[2]]))
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = [Split::Train, Split::Test, Split::TestConflict];
    let mut blobs = Vec::new();
    for split in splits {
        let bytes = to_jsonl(ds.split(split))?;
        let path = dir.join(split_file(split));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        blobs.push(bytes);
    }
    let manifest = DatasetManifest {
        config: ds.config.clone(),
        vocab: ds.config.vocab.clone(),
        seed: ds.config.seed,
        featurizer_seed: ds.config.featurizer_seed,
        counts: SplitCounts {
            train: ds.train.len(),
            test: ds.test.len(),
            test_conflict: ds.test_conflict.len(),
        },
        content_hash: hash_splits(&[&blobs[0], &blobs[1], &blobs[2]]),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_split(dir: &Path, split: Split, noise_sigma: f64) -> Result<Vec<QAInstance>> {
    let path = dir.join(split_file(split));
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line)?;
        if rec.split != split {
            return Err(Error::Generation(format!(
                "record {} in {} claims split {:?}",
                rec.id,
                path.display(),
                rec.split
            )));
        }
        out.push(rec.into_instance(noise_sigma)?);
    }
    Ok(out)
}

/// Loads a dataset written by [`write_dataset`], verifying the content hash.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let sigma = manifest.config.noise_sigma;
    let ds = Dataset {
        train: read_split(dir, Split::Train, sigma)?,
        test: read_split(dir, Split::Test, sigma)?,
        test_conflict: read_split(dir, Split::TestConflict, sigma)?,
        config: manifest.config,
    };
    let hash = content_hash(&ds)?;
    if hash != manifest.content_hash {
        return Err(Error::Generation(format!(
            "dataset in {} does not match its manifest hash",
            dir.display()
        )));
    }
    Ok(ds)
}
