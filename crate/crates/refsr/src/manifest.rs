//! Dataset manifests: one JSON object per line.
//!
//! ```text
//! {"input_path":"pairs/00000_input.png","ref_paths":["pairs/00000_ref.png"],"split":"train","homography":[[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]}
//! {"input_path":"clips/00000","ref_paths":["clips/00000_ref.png"],"split":"test","similarity":"very_similar"}
//! ```
//!
//! | key          | type                  | meaning |
//! |--------------|-----------------------|---------|
//! | `input_path` | string                | HR input image, or a clip directory of numbered HR frames |
//! | `ref_paths`  | array of strings      | reference images (may be empty) |
//! | `split`      | string                | free-form split tag (`train`, `test`, …) |
//! | `similarity` | optional string       | `very_similar`, `similar`, `irrelevant` or `none` |
//! | `homography` | optional 3×3 numbers  | input pixel → reference pixel mapping, row-major |
//! | `group`      | optional string       | transformation group of benchmark pairs |
//!
//! Relative paths resolve against the manifest's directory, or against
//! `$REFSR_DATA_ROOT` when that variable is set.

use std::path::{Path, PathBuf};

use refsr_core::homography::Homography;
use serde::{Deserialize, Serialize};

use crate::io::{atomic_write, read};
use crate::{Failure, Result};

/// Overrides the base directory of relative manifest paths.
pub const DATA_ROOT_ENV: &str = "REFSR_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    VerySimilar,
    Similar,
    Irrelevant,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub input_path: String,
    pub ref_paths: Vec<String>,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Similarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homography: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Record {
    pub fn new(input_path: impl Into<String>, ref_paths: Vec<String>, split: &str) -> Self {
        Self { input_path: input_path.into(), ref_paths, split: split.into(), similarity: None, homography: None, group: None }
    }

    pub fn homography(&self) -> Result<Option<Homography>> {
        self.homography.map(|m| Homography::from_matrix(m).map_err(Failure::from)).transpose()
    }

    pub fn first_ref(&self) -> Result<&str> {
        self.ref_paths
            .first()
            .map(String::as_str)
            .ok_or_else(|| Failure::missing("reference", format!("record {} lists no reference", self.input_path)))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Directory relative paths resolve against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base: PathBuf) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Failure::invalid(format!("manifest line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Self { records, base })
    }

    /// Load a manifest; relative paths resolve against its directory unless
    /// [`DATA_ROOT_ENV`] is set.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path, "manifest")?;
        let text = String::from_utf8(bytes).map_err(|_| Failure::invalid(format!("{}: not UTF-8", path.display())))?;
        let base = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Self::parse(&text, base)
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_jsonl().as_bytes())
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Every input and reference path that does not exist, itemized.
    pub fn check_paths(&self) -> Result<()> {
        let missing: Vec<String> = self
            .records
            .iter()
            .flat_map(|r| std::iter::once(&r.input_path).chain(&r.ref_paths))
            .map(|p| self.resolve(p))
            .filter(|p| !p.exists())
            .map(|p| format!("  {}", p.display()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Failure::missing("manifest inputs", format!("{} path(s) not found:\n{}", missing.len(), missing.join("\n"))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_order_and_floats() {
        let mut r = Record::new("a.png", vec!["b.png".into(), "c.png".into()], "test");
        r.similarity = Some(Similarity::VerySimilar);
        r.homography = Some([[0.1 + 0.2, 1e-17, -3.0], [1.0 / 3.0, 2.0, 0.0], [1e-300, 0.0, 1.0]]);
        let m = Manifest { records: vec![r, Record::new("z.png", vec![], "train")], base: PathBuf::new() };
        let text = m.to_jsonl();
        let back = Manifest::parse(&text, PathBuf::new()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl(), text);
        assert!(text.contains("\"very_similar\""));
    }

    #[test]
    fn bad_lines_and_labels_are_rejected() {
        assert!(Manifest::parse("{\"input_path\":\"a\",\"ref_paths\":[],\"split\":\"x\",\"similarity\":\"close\"}", PathBuf::new()).is_err());
        assert!(Manifest::parse("{\"input_path\":\"a\",\"ref_paths\":[],\"split\":\"x\",\"extra\":1}", PathBuf::new()).is_err());
        let e = Manifest::parse("\n{}", PathBuf::new()).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn missing_paths_are_itemized() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("here.png"), b"x").unwrap();
        let m = Manifest { records: vec![Record::new("here.png", vec!["gone1.png".into(), "gone2.png".into()], "t")], base: dir.path().into() };
        let e = m.check_paths().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let msg = e.to_string();
        assert!(msg.contains("gone1.png") && msg.contains("gone2.png") && !msg.contains("here.png"), "{msg}");
    }
}
