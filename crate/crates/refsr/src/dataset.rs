//! Pair, clip and benchmark generation, and assembly of curated
//! query/reference datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsr_core::data::{benchmark_pair, make_homography_pair, procedural_clip, procedural_texture, Group, RescalePolicy, TransformBenchmarkSpec, SCALE};
use refsr_core::homography::TransformConfig;
use refsr_core::ImageTensor;
use serde::Serialize;

use crate::io::{atomic_write, frame_name, load_png, read, save_clip, save_png};
use crate::manifest::{Manifest, Record, Similarity};
use crate::{Failure, Result};

/// Where source images come from.
pub enum Source {
    /// PNG files of a directory, used in name order and cycled.
    Dir(Vec<PathBuf>),
    /// Seeded procedural textures of the given side.
    Procedural(usize),
}

impl Source {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Failure::from_io(e, "source directory", dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("png"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Failure::missing("source images", format!("no PNG files in {}", dir.display())));
        }
        Ok(Source::Dir(files))
    }

    fn get(&self, i: u64, seed: u64) -> Result<ImageTensor> {
        match self {
            Source::Dir(files) => load_png(&files[i as usize % files.len()]),
            Source::Procedural(side) => Ok(procedural_texture(seed.wrapping_mul(1_000_003).wrapping_add(i), *side, *side)),
        }
    }
}

/// Files written by a generator plus the manifest describing them.
pub struct Generated {
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

fn rel(dir: &str, name: String) -> String {
    format!("{dir}/{name}")
}

/// `count` homography pairs under `out/pairs/`: the HR input crop and its
/// warped reference, with the homography recorded.
pub fn make_pairs(out: &Path, source: &Source, count: usize, transform: &TransformConfig, crop: usize, seed: u64, split: &str) -> Result<Generated> {
    let mut records = Vec::with_capacity(count);
    let mut files = Vec::new();
    for i in 0..count as u64 {
        let pair = make_homography_pair(&source.get(i, seed)?, transform, seed.wrapping_mul(7_919).wrapping_add(i), crop)?;
        let (inp, rf) = (rel("pairs", format!("{i:05}_input.png")), rel("pairs", format!("{i:05}_ref.png")));
        save_png(&out.join(&inp), &pair.hr_input)?;
        save_png(&out.join(&rf), &pair.hr_ref)?;
        files.extend([out.join(&inp), out.join(&rf)]);
        let mut r = Record::new(inp, vec![rf], split);
        r.homography = Some(pair.homography.m);
        records.push(r);
    }
    Ok(Generated { manifest: Manifest { records, base: out.to_path_buf() }, files })
}

/// `count` translating procedural clips of `frames` HR frames
/// (`4·lr_size` square) under `out/clips/NNNNN/`. Each clip's first frame
/// is its reference.
pub fn make_clips(out: &Path, count: usize, frames: usize, lr_size: usize, seed: u64, split: &str) -> Result<Generated> {
    if frames == 0 || lr_size == 0 {
        return Err(Failure::invalid("clips need at least one frame and a positive size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC11F);
    let mut records = Vec::with_capacity(count);
    let mut files = Vec::new();
    for i in 0..count as u64 {
        let v = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let hr = procedural_clip(seed.wrapping_mul(1_000_003).wrapping_add(i), frames, SCALE * lr_size, SCALE * lr_size, v);
        let dir = rel("clips", format!("{i:05}"));
        files.extend(save_clip(&out.join(&dir), &hr)?);
        let mut r = Record::new(dir.clone(), vec![format!("{dir}/{}", frame_name(0))], split);
        r.similarity = Some(Similarity::VerySimilar);
        records.push(r);
    }
    Ok(Generated { manifest: Manifest { records, base: out.to_path_buf() }, files })
}

/// `count` pairs per group under `out/bench/<group>/`, references being
/// similarity-transformed views with the homography recorded.
pub fn make_benchmark(out: &Path, source: &Source, groups: &[Group], count: usize, crop: usize, seed: u64) -> Result<Generated> {
    let mut records = Vec::new();
    let mut files = Vec::new();
    for &g in groups {
        let spec = TransformBenchmarkSpec::new(g, seed);
        spec.validate()?;
        for i in 0..count as u64 {
            let p = benchmark_pair(&source.get(i, seed)?, &spec, i, crop)?;
            let dir = format!("bench/{}", g.name());
            let (inp, rf) = (rel(&dir, format!("{i:05}_input.png")), rel(&dir, format!("{i:05}_ref.png")));
            save_png(&out.join(&inp), &p.hr_input)?;
            save_png(&out.join(&rf), &p.hr_ref)?;
            files.extend([out.join(&inp), out.join(&rf)]);
            let mut r = Record::new(inp, vec![rf], "test");
            r.homography = Some(p.homography.m);
            r.group = Some(g.name().into());
            records.push(r);
        }
    }
    Ok(Generated { manifest: Manifest { records, base: out.to_path_buf() }, files })
}

/// Outcome of [`assemble_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssembleReport {
    pub kept: usize,
    pub dropped_count: usize,
    /// Queries without a selected reference.
    pub dropped: Vec<String>,
}

/// Parse a selection file: one `query candidate` pair of file names per
/// line, whitespace-separated; blank lines and `#` comments are ignored.
pub fn parse_selection(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [q, c] => out.push((q.to_string(), c.to_string())),
            _ => errors.push(format!("  line {}: expected `query candidate`, got {line:?}", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Failure::invalid(format!("malformed selection file:\n{}", errors.join("\n"))))
    }
}

fn png_names(dir: &Path, what: &str) -> Result<BTreeSet<String>> {
    Ok(fs::read_dir(dir)
        .map_err(|e| Failure::from_io(e, what, dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("png"))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Pair each query with its selected pool candidate. References are
/// rescaled by `policy` to the query's larger side; queries without a
/// selection are dropped and reported. Selection entries naming files that
/// do not exist (or queries selected twice) fail with an itemized error.
pub fn assemble_dataset(query_dir: &Path, pool_dir: &Path, selection: &Path, out: &Path, policy: &RescalePolicy) -> Result<(Generated, AssembleReport)> {
    let queries = png_names(query_dir, "query directory")?;
    let pool = png_names(pool_dir, "candidate pool directory")?;
    let text = String::from_utf8(read(selection, "selection file")?).map_err(|_| Failure::invalid("selection file is not UTF-8"))?;
    let entries = parse_selection(&text)?;
    let mut chosen: BTreeMap<String, String> = BTreeMap::new();
    let mut problems = Vec::new();
    for (q, c) in entries {
        if !queries.contains(&q) {
            problems.push(format!("  query {q} not found in {}", query_dir.display()));
        }
        if !pool.contains(&c) {
            problems.push(format!("  candidate {c} (for {q}) not found in {}", pool_dir.display()));
        }
        if chosen.insert(q.clone(), c).is_some() {
            problems.push(format!("  query {q} is selected more than once"));
        }
    }
    if !problems.is_empty() {
        return Err(Failure::missing("selection entries", format!("{} dangling selection entr(y/ies):\n{}", problems.len(), problems.join("\n"))));
    }
    let mut records = Vec::new();
    let mut files = Vec::new();
    let mut dropped = Vec::new();
    for q in &queries {
        let Some(c) = chosen.get(q) else {
            dropped.push(q.clone());
            continue;
        };
        let qpath = query_dir.join(q);
        let bytes = read(&qpath, "query image")?;
        let query = load_png(&qpath)?;
        let reference = policy.apply(&load_png(&pool_dir.join(c))?, query.height().max(query.width()));
        let (inp, rf) = (rel("inputs", q.clone()), rel("refs", q.clone()));
        atomic_write(&out.join(&inp), &bytes)?;
        save_png(&out.join(&rf), &reference)?;
        files.extend([out.join(&inp), out.join(&rf)]);
        records.push(Record::new(inp, vec![rf], "test"));
    }
    let report = AssembleReport { kept: records.len(), dropped_count: dropped.len(), dropped };
    Ok((Generated { manifest: Manifest { records, base: out.to_path_buf() }, files }, report))
}
