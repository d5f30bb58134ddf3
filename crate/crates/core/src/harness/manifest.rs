use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Label;
use crate::imageio::FaceBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// The path exactly as written in the manifest; doubles as the sample id.
    pub id: String,
    /// `id` resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub face_box: Option<FaceBox>,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    path: String,
    label: String,
    split: String,
    #[serde(default)]
    face_box: Option<FaceBox>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Serialize)]
struct OutEntry<'a> {
    path: &'a str,
    label: Label,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    face_box: Option<FaceBox>,
    source: &'a str,
}

/// Parses a JSONL manifest. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = raw.label.parse::<Label>().map_err(|_| Error::UnknownLabel {
            line: line_no,
            label: raw.label.clone(),
        })?;
        let split = raw.split.parse::<Split>().map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        if raw.path.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty path".into(),
            });
        }
        if let Some(fb) = raw.face_box {
            if fb.w == 0 || fb.h == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "face_box has zero size".into(),
                });
            }
        }
        let path = base_dir.join(&raw.path);
        if !seen.insert(path.clone()) {
            return Err(Error::DuplicatePath {
                line: line_no,
                path: raw.path,
            });
        }
        entries.push(ManifestEntry {
            id: raw.path,
            path,
            label,
            split,
            face_box: raw.face_box,
            source: raw.source.unwrap_or_default(),
        });
    }
    Ok(DatasetManifest { entries })
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Serialises back to JSONL using each entry's original `id` as path.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let line = serde_json::to_string(&OutEntry {
                path: &e.id,
                label: e.label,
                split: e.split,
                face_box: e.face_box,
                source: &e.source,
            })
            .expect("manifest entries serialise");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Training runs need both classes in the train split and a nonempty
    /// val and test split.
    pub fn validate_for_training(&self) -> Result<()> {
        for split in Split::ALL {
            if self.split(split).next().is_none() {
                return Err(Error::InvalidConfig(format!("manifest has no {split} entries")));
            }
        }
        let train: Vec<_> = self.split(Split::Train).collect();
        if train.iter().all(|e| e.label.is_attack()) || !train.iter().any(|e| e.label.is_attack())
        {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_manifest() {
        let m = parse_manifest("", Path::new("/data")).unwrap();
        assert!(m.is_empty());
        assert!(parse_manifest("\n  \n", Path::new("/data")).unwrap().is_empty());
    }

    #[test]
    fn unknown_label_reports_line() {
        let text = concat!(
            r#"{"path":"a.jpg","label":"bonafide","split":"train"}"#,
            "\n",
            r#"{"path":"b.jpg","label":"real","split":"train"}"#
        );
        match parse_manifest(text, Path::new("")) {
            Err(Error::UnknownLabel { line, label }) => {
                assert_eq!((line, label.as_str()), (2, "real"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_lines_keep_order_and_resolve_paths() {
        let text = [
            r#"{"path":"x/3.png","label":"attack","split":"test","source":"ff"}"#,
            r#"{"path":"x/1.png","label":"bonafide","split":"train","face_box":{"x":1,"y":2,"w":30,"h":40}}"#,
            r#"{"path":"/abs/2.png","label":"bonafide","split":"val"}"#,
        ]
        .join("\n");
        let m = parse_manifest(&text, Path::new("/data")).unwrap();
        let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["x/3.png", "x/1.png", "/abs/2.png"]);
        assert_eq!(m.entries[0].path, Path::new("/data/x/3.png"));
        assert_eq!(m.entries[2].path, Path::new("/abs/2.png"));
        assert_eq!(m.entries[1].face_box, Some(FaceBox::new(1, 2, 30, 40)));
        assert_eq!(m.entries[0].source, "ff");

        let again = parse_manifest(&m.to_jsonl(), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn malformed_lines() {
        let dup = concat!(
            r#"{"path":"a.jpg","label":"bonafide","split":"train"}"#,
            "\n",
            r#"{"path":"a.jpg","label":"attack","split":"test"}"#
        );
        assert!(matches!(
            parse_manifest(dup, Path::new("")),
            Err(Error::DuplicatePath { line: 2, .. })
        ));
        for bad in [
            "not json",
            r#"{"path":"a.jpg","label":"attack"}"#,
            r#"{"path":"a.jpg","label":"attack","split":"dev"}"#,
            r#"{"path":"a.jpg","label":"attack","split":"test","extra":1}"#,
        ] {
            assert!(
                matches!(parse_manifest(bad, Path::new("")), Err(Error::Parse { line: 1, .. })),
                "{bad}"
            );
        }
    }
}
