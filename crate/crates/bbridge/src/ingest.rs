//! Builds paired samples from directories of PGM/PPM files matched by stem.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bbridge_core::{ConditionPayload, PairedSample};

use crate::error::{CliError, Result};
use crate::pnm::{read_class_map, read_image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestKind {
    None,
    /// `<stem>.txt` holding one integer label.
    Label,
    /// `<stem>.pgm` with pixel values 0 or 1.
    Layout,
    /// `<stem>.pgm` with pixel values below `classes`.
    Semantic {
        classes: usize,
    },
}

fn list(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for ent in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = ent.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !exts.contains(&ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(CliError::Validation(format!(
                "stem `{stem}` appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn read_label(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.trim()
        .parse()
        .map_err(|_| CliError::format(path, format!("expected an integer label, found {:?}", text.trim())))
}

/// Pairs `dir_pre/<stem>` with `dir_post/<stem>` (and the condition file in
/// `dir_cond`), in stem order.
pub fn ingest_image_pairs(
    dir_pre: &Path,
    dir_post: &Path,
    dir_cond: Option<&Path>,
    kind: IngestKind,
) -> Result<Vec<PairedSample>> {
    let images = ["pgm", "ppm"];
    let pre = list(dir_pre, &images)?;
    let post = list(dir_post, &images)?;
    if let Some(stem) = post.keys().find(|s| !pre.contains_key(*s)) {
        return Err(CliError::Validation(format!("post image `{stem}` has no pre image")));
    }
    let cond_files = match (kind, dir_cond) {
        (IngestKind::None, _) => None,
        (IngestKind::Label, Some(d)) => Some(list(d, &["txt"])?),
        (_, Some(d)) => Some(list(d, &["pgm"])?),
        (_, None) => {
            return Err(CliError::Validation(format!(
                "{kind:?} conditions need a condition directory"
            )))
        }
    };
    let mut out = Vec::with_capacity(pre.len());
    for (stem, pre_path) in &pre {
        let post_path = post
            .get(stem)
            .ok_or_else(|| CliError::Validation(format!("missing post image for stem `{stem}`")))?;
        let (x_pre, x_post) = (read_image(pre_path)?, read_image(post_path)?);
        if x_pre.shape() != x_post.shape() {
            return Err(CliError::Validation(format!(
                "stem `{stem}`: pre is {:?} but post is {:?}",
                x_pre.shape(),
                x_post.shape()
            )));
        }
        let cond_path = || {
            cond_files
                .as_ref()
                .and_then(|m| m.get(stem))
                .ok_or_else(|| CliError::Validation(format!("missing condition file for stem `{stem}`")))
        };
        let map = |p: &Path| -> Result<_> {
            let m = read_class_map(p)?;
            if m.shape() != &x_pre.shape()[1..] {
                return Err(CliError::Validation(format!(
                    "stem `{stem}`: condition map is {:?} but image is {:?}",
                    m.shape(),
                    x_pre.shape()
                )));
            }
            Ok(m)
        };
        let cond = match kind {
            IngestKind::None => ConditionPayload::None,
            IngestKind::Label => ConditionPayload::Label(read_label(cond_path()?)?),
            IngestKind::Layout => ConditionPayload::Layout(map(cond_path()?)?),
            IngestKind::Semantic { classes } => ConditionPayload::Semantic {
                map: map(cond_path()?)?,
                classes,
            },
        };
        out.push(
            PairedSample::new(x_pre, x_post, cond).map_err(|e| CliError::Validation(format!("stem `{stem}`: {e}")))?,
        );
    }
    Ok(out)
}
