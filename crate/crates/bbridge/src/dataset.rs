//! The `BBDS1` dataset container: magic, `u64` manifest length, JSON manifest,
//! then per record the `BBT1` blobs `pre`, `post` and (for maps) `cond`.

use std::path::Path;

use bbridge_core::conditioning::ConditionKind;
use bbridge_core::{ConditionPayload, PairedSample, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::{encode_tensor, read_file, write_file, Cursor, FormatError};

pub const DATASET_MAGIC: &[u8; 5] = b"BBDS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordEntry {
    kind: ConditionKind,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cond_shape: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    count: usize,
    records: Vec<RecordEntry>,
}

fn entry(s: &PairedSample) -> RecordEntry {
    let mut e = RecordEntry {
        kind: s.cond.kind(),
        shape: s.pre.shape().to_vec(),
        label: None,
        classes: None,
        cond_shape: None,
    };
    match &s.cond {
        ConditionPayload::None => {}
        ConditionPayload::Label(l) => e.label = Some(*l),
        ConditionPayload::Layout(m) => e.cond_shape = Some(m.shape().to_vec()),
        ConditionPayload::Semantic { map, classes } => {
            e.classes = Some(*classes);
            e.cond_shape = Some(map.shape().to_vec());
        }
    }
    e
}

pub fn encode_dataset(samples: &[PairedSample]) -> Vec<u8> {
    let manifest = Manifest {
        count: samples.len(),
        records: samples.iter().map(entry).collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = DATASET_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in samples {
        encode_tensor(&s.pre, &mut out);
        encode_tensor(&s.post, &mut out);
        match &s.cond {
            ConditionPayload::Layout(m) => encode_tensor(m, &mut out),
            ConditionPayload::Semantic { map, .. } => encode_tensor(map, &mut out),
            ConditionPayload::None | ConditionPayload::Label(_) => {}
        }
    }
    out
}

fn shaped(c: &mut Cursor, want: &[usize], what: &str) -> std::result::Result<Tensor, String> {
    let t = c.tensor().map_err(|e| format!("{what}: {e}"))?;
    if t.shape() != want {
        return Err(format!("{what}: shape {:?} differs from manifest {want:?}", t.shape()));
    }
    Ok(t)
}

fn read_record(c: &mut Cursor, e: &RecordEntry) -> std::result::Result<PairedSample, String> {
    let pre = shaped(c, &e.shape, "pre")?;
    let post = shaped(c, &e.shape, "post")?;
    let missing = |field: &str| format!("{:?} record lacks `{field}`", e.kind);
    let cond = match e.kind {
        ConditionKind::None => ConditionPayload::None,
        ConditionKind::Label => ConditionPayload::Label(e.label.ok_or_else(|| missing("label"))?),
        ConditionKind::Layout => ConditionPayload::Layout(shaped(
            c,
            e.cond_shape.as_ref().ok_or_else(|| missing("cond_shape"))?,
            "cond",
        )?),
        ConditionKind::Semantic => ConditionPayload::Semantic {
            map: shaped(c, e.cond_shape.as_ref().ok_or_else(|| missing("cond_shape"))?, "cond")?,
            classes: e.classes.ok_or_else(|| missing("classes"))?,
        },
    };
    PairedSample::new(pre, post, cond).map_err(|e| e.to_string())
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Vec<PairedSample>> {
    let fail = |msg: String| CliError::format(path, msg);
    let mut c = Cursor::new(bytes);
    let header = |e: FormatError| CliError::format(path, format!("header: {e}"));
    c.magic(DATASET_MAGIC).map_err(header)?;
    let len = c.u64().map_err(header)? as usize;
    let json = c.take(len).map_err(header)?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| fail(format!("manifest: {e}")))?;
    if manifest.count != manifest.records.len() {
        return Err(fail(format!(
            "manifest: count {} but {} record entries",
            manifest.count,
            manifest.records.len()
        )));
    }
    let mut out = Vec::with_capacity(manifest.count);
    for (i, e) in manifest.records.iter().enumerate() {
        out.push(read_record(&mut c, e).map_err(|m| fail(format!("record {i}: {m}")))?);
    }
    if c.remaining() != 0 {
        return Err(fail(FormatError::Trailing(c.remaining()).to_string()));
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[PairedSample]) -> Result<()> {
    write_file(path, &encode_dataset(samples))
}

pub fn read_dataset(path: &Path) -> Result<Vec<PairedSample>> {
    decode_dataset(&read_file(path)?, path)
}
