//! JSONL datasets. One record per line:
//! `{"id": "...", "label": 1, "token_ids": [..]}` for text, where the ids are
//! the body and the CLS token is added on load, or
//! `{"id": "...", "label": 0, "image": {"height", "width", "channels", "patch", "pixels_b64" | "pixels_file"}}`
//! with pixels as little-endian `f64`, row-major, channels interleaved.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{patchify, Example, ImageInput, ModelConfig, SequenceInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels_b64: Option<String>,
    /// Raw little-endian `f64` file, relative to the dataset file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels_file: Option<String>,
}

impl ImageRecord {
    pub fn inline(img: &ImageInput) -> Self {
        let bytes: Vec<u8> = img.pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            height: img.height,
            width: img.width,
            channels: img.channels,
            patch: img.patch,
            pixels_b64: Some(STANDARD.encode(bytes)),
            pixels_file: None,
        }
    }

    fn pixels(&self, base: &Path) -> Result<Vec<f64>> {
        let bytes = match (&self.pixels_b64, &self.pixels_file) {
            (Some(b), None) => STANDARD.decode(b).map_err(|e| Error::Data(format!("bad base64 pixels: {}", e)))?,
            (None, Some(f)) => fs::read(base.join(f))?,
            _ => return Err(Error::Data("image needs exactly one of pixels_b64 and pixels_file".into())),
        };
        if bytes.len() % 8 != 0 {
            return Err(Error::Data("pixel data is not a whole number of f64 values".into()));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRecord>,
}

impl DatasetRecord {
    pub fn tokens(id: impl Into<String>, label: usize, token_ids: Vec<usize>) -> Self {
        Self { id: id.into(), label, token_ids: Some(token_ids), image: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    /// 1-based source line of each record.
    pub lines: Vec<usize>,
    pub warnings: Vec<String>,
    base: PathBuf,
}

impl Dataset {
    pub fn from_records(records: Vec<DatasetRecord>) -> Self {
        let lines = (1..=records.len()).collect();
        Self { records, lines, warnings: Vec::new(), base: PathBuf::from(".") }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks token ids and image shapes against a model.
    pub fn validate_for(&self, cfg: &ModelConfig) -> Result<()> {
        self.examples(cfg).map(|_| ())
    }

    /// Model inputs in file order, with their ids.
    pub fn examples(&self, cfg: &ModelConfig) -> Result<Vec<(String, Example)>> {
        self.records
            .iter()
            .zip(&self.lines)
            .map(|(r, &line)| {
                let input = to_input(r, cfg, &self.base).map_err(|e| Error::Data(format!("line {}: {}", line, e)))?;
                if r.label >= cfg.n_classes {
                    return Err(Error::Data(format!(
                        "line {}: label {} outside {} classes",
                        line, r.label, cfg.n_classes
                    )));
                }
                Ok((r.id.clone(), Example { input, label: r.label }))
            })
            .collect()
    }
}

fn to_input(r: &DatasetRecord, cfg: &ModelConfig, base: &Path) -> Result<SequenceInput> {
    let x = match (&r.token_ids, &r.image) {
        (Some(ids), None) => {
            if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
                return Err(Error::Data(format!("token id {} not below vocab size {}", bad, cfg.vocab_size)));
            }
            SequenceInput::from_tokens(cfg.cls_id, cfg.mask_id, ids)
        }
        (None, Some(img)) => {
            let image = ImageInput::new(img.height, img.width, img.channels, img.pixels(base)?, img.patch)?;
            if cfg.patch_dim != Some(image.patch_len()) {
                return Err(Error::Data(format!(
                    "patch length {} does not match model patch_dim {:?}",
                    image.patch_len(),
                    cfg.patch_dim
                )));
            }
            SequenceInput::from_patches(cfg.cls_id, cfg.mask_id, patchify(&image)?)
        }
        _ => return Err(Error::Data("record needs exactly one of token_ids and image".into())),
    };
    if x.len() > cfg.max_len {
        return Err(Error::Data(format!("{} positions exceed max_len {}", x.len(), cfg.max_len)));
    }
    Ok(x)
}

/// Reads a JSONL dataset, checking the schema of every line.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut ds = Dataset { base: path.parent().map(Path::to_path_buf).unwrap_or_default(), ..Dataset::default() };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("{}:{}: {}", path.display(), i + 1, e)))?;
        if rec.token_ids.is_some() == rec.image.is_some() {
            return Err(Error::Data(format!(
                "{}:{}: record needs exactly one of token_ids and image",
                path.display(),
                i + 1
            )));
        }
        ds.records.push(rec);
        ds.lines.push(i + 1);
    }
    if ds.records.is_empty() {
        ds.warnings.push(format!("{} holds no records", path.display()));
    }
    Ok(ds)
}

/// Loads a dataset and checks it against a model in one step.
pub fn load_examples(path: &Path, cfg: &ModelConfig) -> Result<(Dataset, Vec<(String, Example)>)> {
    let ds = load_dataset(path)?;
    let ex = ds.examples(cfg).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {}", path.display(), m)),
        other => other,
    })?;
    Ok((ds, ex))
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Records for token inputs, dropping the CLS position.
pub fn records_from_examples(prefix: &str, examples: &[Example]) -> Vec<DatasetRecord> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let ids = e.input.token_ids().expect("token input");
            DatasetRecord::tokens(format!("{}-{:05}", prefix, i), e.label, ids[1..].to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { vocab_size: 8, ..ModelConfig::default() }
    }

    #[test]
    fn empty_file_warns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn out_of_vocab_token_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"label\":0,\"token_ids\":[2,3]}\n{\"id\":\"b\",\"label\":1,\"token_ids\":[2,8]}\n",
        )
        .unwrap();
        let err = load_examples(&path, &cfg()).unwrap_err();
        match err {
            Error::Data(m) => assert!(m.contains("line 2"), "{}", m),
            e => panic!("unexpected {:?}", e),
        }
    }

    #[test]
    fn schema_violation_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"label\":0,\"token_ids\":[2]}\n{\"id\":\"b\",\"tokens\":[1]}\n").unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Data(m) => assert!(m.contains(":2:"), "{}", m),
            e => panic!("unexpected {:?}", e),
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let img = ImageInput::new(2, 2, 1, vec![0.1, -0.0, 1e-300, 7.0], 1).unwrap();
        let records = vec![
            DatasetRecord::tokens("t", 1, vec![4, 5, 6]),
            DatasetRecord { id: "i".into(), label: 0, token_ids: None, image: Some(ImageRecord::inline(&img)) },
        ];
        save_dataset(&path, &records).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.records, records);
        let px = ds.records[1].image.as_ref().unwrap().pixels(dir.path()).unwrap();
        assert_eq!(px.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), img.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn image_records_become_patch_inputs() {
        let img = ImageInput::new(4, 4, 1, (0..16).map(|v| v as f64).collect(), 2).unwrap();
        let ds = Dataset::from_records(vec![DatasetRecord {
            id: "i".into(),
            label: 1,
            token_ids: None,
            image: Some(ImageRecord::inline(&img)),
        }]);
        let c = ModelConfig { patch_dim: Some(4), ..cfg() };
        let ex = ds.examples(&c).unwrap();
        assert_eq!(ex[0].1.input.len(), 5);
        assert!(ds.examples(&cfg()).is_err());
    }
}
