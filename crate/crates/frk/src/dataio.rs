//! COCO-style annotation ingestion, exactly-5-caption filtering, split
//! emission, and prediction-file handling.
//!
//! All emitted JSON uses sorted keys, pretty formatting, UTF-8, LF line
//! endings, and a trailing newline, so identical inputs produce byte-identical
//! files. All parsed path-keyed maps reject duplicate keys outright — a
//! silently-dropped duplicate would corrupt evaluation pairing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Map from image path to its reference captions. After filtering, every
/// list holds exactly five sos/eos-wrapped captions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CaptionSet(pub BTreeMap<String, Vec<String>>);

/// Map from image path to a single predicted caption.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PredictionSet(pub BTreeMap<String, String>);

struct StrictMap<V>(BTreeMap<String, V>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for StrictMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MapVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
            type Value = StrictMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object without duplicate keys")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut map = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    if map.insert(key.clone(), value).is_some() {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate key {key:?}"
                        )));
                    }
                }
                Ok(StrictMap(map))
            }
        }

        deserializer.deserialize_map(MapVisitor(std::marker::PhantomData))
    }
}

impl<'de> Deserialize<'de> for CaptionSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        StrictMap::deserialize(d).map(|m| CaptionSet(m.0))
    }
}

impl<'de> Deserialize<'de> for PredictionSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        StrictMap::deserialize(d).map(|m| PredictionSet(m.0))
    }
}

/// Converts a serde_json error position (line/column) to a byte offset.
fn parse_error(text: &str, err: &serde_json::Error) -> Error {
    let line = err.line().max(1);
    let column = err.column().max(1);
    let offset: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum::<usize>()
        + (column - 1);
    Error::Parse {
        offset,
        message: err.to_string(),
    }
}

#[derive(Debug, Deserialize)]
struct RawAnnotations {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawCaption>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: i64,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct RawCaption {
    image_id: i64,
    caption: String,
}

/// Joins caption records to image paths, preserving the captions' order of
/// appearance. Every image appears as a key, captionless ones included.
pub fn ingest_annotations(json_text: &str) -> Result<CaptionSet> {
    let raw: RawAnnotations =
        serde_json::from_str(json_text).map_err(|e| parse_error(json_text, &e))?;
    let mut by_id: BTreeMap<i64, String> = BTreeMap::new();
    let mut set = CaptionSet::default();
    for img in &raw.images {
        if by_id.insert(img.id, img.file_name.clone()).is_some() {
            return Err(Error::Integrity(format!("duplicate image id {}", img.id)));
        }
        if set.0.insert(img.file_name.clone(), Vec::new()).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate image path {:?}",
                img.file_name
            )));
        }
    }
    for ann in &raw.annotations {
        let path = by_id.get(&ann.image_id).ok_or_else(|| {
            Error::Integrity(format!(
                "caption references unknown image id {}",
                ann.image_id
            ))
        })?;
        set.0.get_mut(path).unwrap().push(ann.caption.clone());
    }
    Ok(set)
}

fn wrap_caption(caption: &str) -> String {
    let c = caption.trim();
    if c.starts_with("sos ") && c.ends_with(" eos") {
        c.to_string()
    } else {
        format!("sos {c} eos")
    }
}

/// Keeps exactly the images with five captions, wrapping each caption as
/// `sos … eos` (idempotently).
pub fn filter_exactly_five(cs: &CaptionSet) -> CaptionSet {
    CaptionSet(
        cs.0.iter()
            .filter(|(_, caps)| caps.len() == 5)
            .map(|(path, caps)| {
                (
                    path.clone(),
                    caps.iter().map(|c| wrap_caption(c)).collect(),
                )
            })
            .collect(),
    )
}

/// Requested sizes for the train/valid/test split plus the shuffle seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

fn caption_set_json(cs: &CaptionSet) -> String {
    serde_json::to_string_pretty(cs).expect("caption set serializes") + "\n"
}

pub fn write_captions(cs: &CaptionSet, path: &Path) -> Result<()> {
    fs::write(path, caption_set_json(cs))?;
    Ok(())
}

pub fn read_captions(path: &Path) -> Result<CaptionSet> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(&text, &e))
}

/// Deterministically shuffles the image keys with the spec's seed, assigns
/// contiguous runs to train/valid/test, and writes the three JSON files.
/// Returns the written counts.
pub fn split_and_write(
    cs: &CaptionSet,
    spec: &SplitSpec,
    out_dir: &Path,
) -> Result<(usize, usize, usize)> {
    let requested = spec.train + spec.valid + spec.test;
    if requested > cs.0.len() {
        return Err(Error::Capacity {
            requested,
            available: cs.0.len(),
        });
    }
    let mut keys: Vec<&String> = cs.0.keys().collect();
    let mut rng = Rng::from_seed(spec.seed);
    rng.shuffle(&mut keys);

    let subset = |range: std::ops::Range<usize>| -> CaptionSet {
        CaptionSet(
            keys[range]
                .iter()
                .map(|&k| (k.clone(), cs.0[k].clone()))
                .collect(),
        )
    };
    let train = subset(0..spec.train);
    let valid = subset(spec.train..spec.train + spec.valid);
    let test = subset(spec.train + spec.valid..requested);

    fs::create_dir_all(out_dir)?;
    write_captions(&train, &out_dir.join("train.json"))?;
    write_captions(&valid, &out_dir.join("valid.json"))?;
    write_captions(&test, &out_dir.join("test.json"))?;
    Ok((train.0.len(), valid.0.len(), test.0.len()))
}

pub fn write_predictions(ps: &PredictionSet, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(ps).expect("prediction set serializes") + "\n";
    fs::write(path, json)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(&text, &e))
}
