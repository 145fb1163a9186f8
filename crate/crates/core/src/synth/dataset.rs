//! On-disk clip layout: one directory per clip holding `va.csv`, `tokens.bin`,
//! `anchor.json` and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchor::SemanticAnchor;
use crate::error::{Error, Result};
use crate::synth::{ClipRecord, CodecSpec, NarrativeArc, TokenGrid};
use crate::trajectory::AffectTrajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub source_id: u64,
    pub clip_start_s: usize,
    pub seed: u64,
}

pub fn clip_dir_name(source_id: u64, clip_start_s: usize) -> String {
    format!("clip_{source_id:05}_{clip_start_s:05}")
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| Error::format(path, "not UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_tokens(path: &Path, tokens: &TokenGrid) -> Result<()> {
    fs::write(path, tokens.encode())?;
    Ok(())
}

pub fn read_tokens(path: &Path, base: CodecSpec) -> Result<TokenGrid> {
    TokenGrid::decode(&read(path)?, base, path)
}

pub fn write_va(path: &Path, traj: &AffectTrajectory) -> Result<()> {
    fs::write(path, traj.to_csv())?;
    Ok(())
}

pub fn read_va(path: &Path) -> Result<AffectTrajectory> {
    AffectTrajectory::from_csv(&read_text(path)?, path)
}

pub fn write_clip(root: &Path, clip: &ClipRecord) -> Result<PathBuf> {
    let dir = root.join(clip_dir_name(clip.source_id, clip.clip_start_s));
    fs::create_dir_all(&dir)?;
    write_va(&dir.join("va.csv"), &clip.va_curve)?;
    write_tokens(&dir.join("tokens.bin"), &clip.tokens)?;
    write_json(&dir.join("anchor.json"), &clip.anchor.to_named())?;
    write_json(
        &dir.join("meta.json"),
        &ClipMeta {
            source_id: clip.source_id,
            clip_start_s: clip.clip_start_s,
            seed: clip.seed,
        },
    )?;
    Ok(dir)
}

pub fn read_clip(dir: &Path, base: CodecSpec) -> Result<ClipRecord> {
    let va_curve = read_va(&dir.join("va.csv"))?;
    let tokens = read_tokens(&dir.join("tokens.bin"), base)?;
    let anchor = SemanticAnchor::from_named(&read_json(&dir.join("anchor.json"))?)
        .map_err(|e| Error::format(dir.join("anchor.json"), e.to_string()))?;
    let meta: ClipMeta = read_json(&dir.join("meta.json"))?;
    if va_curve.len() * tokens.codec.tokens_per_second != tokens.rows() {
        return Err(Error::format(dir, "va.csv duration does not match tokens.bin rows"));
    }
    Ok(ClipRecord {
        va_curve,
        tokens,
        anchor,
        source_id: meta.source_id,
        clip_start_s: meta.clip_start_s,
        seed: meta.seed,
    })
}

/// Subdirectories of `root` in name order.
pub fn list_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(root.display().to_string()),
        _ => Error::Io(e),
    })? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_clip_dataset(root: &Path, base: CodecSpec) -> Result<Vec<ClipRecord>> {
    list_dirs(root)?.iter().map(|d| read_clip(d, base)).collect()
}

/// Description of a pseudo-video stream; frames are re-rendered from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub source_id: u64,
    pub scene_id: u64,
    pub seed: u64,
    pub arc: NarrativeArc,
}

impl VideoSpec {
    pub fn render(&self) -> crate::synth::PseudoVideo {
        crate::synth::render_pseudo_video(&self.arc, self.scene_id, self.seed)
    }
}

pub fn write_video_spec(root: &Path, spec: &VideoSpec) -> Result<PathBuf> {
    let dir = root.join(format!("video_{:05}", spec.source_id));
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("video.json"), spec)?;
    write_va(&dir.join("va.csv"), &spec.arc.sample_1hz())?;
    Ok(dir)
}

pub fn read_video_spec(path: &Path) -> Result<VideoSpec> {
    let file = if path.is_dir() { path.join("video.json") } else { path.to_path_buf() };
    read_json(&file)
}

pub fn read_video_dataset(root: &Path) -> Result<Vec<VideoSpec>> {
    list_dirs(root)?.iter().map(|d| read_video_spec(d)).collect()
}
