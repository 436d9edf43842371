//! Dataset manifest: one whitespace-separated line per sample,
//! `id split relpath...`, with `#` comment lines. Paths are relative to the
//! manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_file, write_file, PersistError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.txt";

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# id split files...\n");
        for e in &self.entries {
            out.push_str(&e.id);
            out.push(' ');
            out.push_str(e.split.as_str());
            for f in &e.files {
                out.push(' ');
                out.push_str(f);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, PersistError> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| PersistError::Manifest { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line").to_string();
            let split = parts
                .next()
                .ok_or_else(|| err("missing split".into()))?
                .parse::<Split>()
                .map_err(err)?;
            let files: Vec<String> = parts.map(str::to_string).collect();
            if let Some(bad) = files.iter().find(|f| Path::new(f).is_absolute() || f.split('/').any(|c| c == "..")) {
                return Err(err(format!("path `{bad}` escapes the dataset directory")));
            }
            if entries.iter().any(|e| e.id == id) {
                return Err(err(format!("duplicate sample id `{id}`")));
            }
            entries.push(ManifestEntry { id, split, files });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, PersistError> {
        let path = dir.join(Self::FILE_NAME);
        write_file(&path, self.render().as_bytes())?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, PersistError> {
        let bytes = read_file(&dir.join(Self::FILE_NAME))?;
        let text = String::from_utf8(bytes).map_err(|_| PersistError::Manifest {
            line: 0,
            message: "not UTF-8".into(),
        })?;
        Self::parse(&text)
    }
}
