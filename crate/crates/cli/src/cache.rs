//! Content-addressed result cache. Entries carry a checksum over their
//! files; a damaged entry is reported and recomputed, never served.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Files = BTreeMap<String, String>;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    checksum: String,
    files: Files,
}

#[derive(Debug, PartialEq)]
pub enum Lookup {
    Hit(Files),
    Miss,
    Corrupt(String),
}

pub fn checksum(files: &Files) -> String {
    let mut h = Sha256::new();
    for (name, body) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((body.len() as u64).to_le_bytes());
        h.update(body.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Lookup {
        let text = match fs::read_to_string(self.path(key)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Lookup::Miss,
            Err(e) => return Lookup::Corrupt(e.to_string()),
        };
        match serde_json::from_str::<Entry>(&text) {
            Ok(entry) if checksum(&entry.files) == entry.checksum => Lookup::Hit(entry.files),
            Ok(_) => Lookup::Corrupt("checksum mismatch".into()),
            Err(e) => Lookup::Corrupt(e.to_string()),
        }
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial entry.
    pub fn store(&self, key: &str, files: &Files) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let entry = Entry { checksum: checksum(files), files: files.clone() };
        let tmp = self.dir.join(format!(".{key}.tmp"));
        fs::write(&tmp, serde_json::to_string(&entry).map_err(io::Error::other)?)?;
        fs::rename(tmp, self.path(key))
    }

    pub fn keys(&self) -> io::Result<Vec<String>> {
        let mut out = Vec::new();
        match fs::read_dir(&self.dir) {
            Ok(rd) => {
                for e in rd {
                    let name = e?.file_name().to_string_lossy().into_owned();
                    if let Some(k) = name.strip_suffix(".json") {
                        out.push(k.to_string());
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        out.sort();
        Ok(out)
    }

    /// (key, problem) for every damaged entry.
    pub fn verify(&self) -> io::Result<Vec<(String, String)>> {
        Ok(self
            .keys()?
            .into_iter()
            .filter_map(|k| match self.load(&k) {
                Lookup::Corrupt(why) => Some((k, why)),
                _ => None,
            })
            .collect())
    }

    pub fn clear(&self) -> io::Result<usize> {
        let keys = self.keys()?;
        for k in &keys {
            fs::remove_file(self.path(k))?;
        }
        Ok(keys.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files() -> Files {
        let mut f = Files::new();
        f.insert("a.csv".into(), "x,y\n1,2\n".into());
        f.insert("b.json".into(), "{}\n".into());
        f
    }

    #[test]
    fn roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        assert_eq!(cache.load("k"), Lookup::Miss);
        cache.store("k", &files()).unwrap();
        assert_eq!(cache.load("k"), Lookup::Hit(files()));
        assert_eq!(cache.keys().unwrap(), vec!["k".to_string()]);
        let path = dir.path().join("k.json");
        let text = fs::read_to_string(&path).unwrap().replace("1,2", "1,3");
        fs::write(&path, text).unwrap();
        assert!(matches!(cache.load("k"), Lookup::Corrupt(_)));
        assert_eq!(cache.verify().unwrap().len(), 1);
        fs::write(&path, "not json").unwrap();
        assert!(matches!(cache.load("k"), Lookup::Corrupt(_)));
        assert_eq!(cache.clear().unwrap(), 1);
        assert_eq!(cache.load("k"), Lookup::Miss);
    }

    #[test]
    fn checksum_separates_names_from_bodies() {
        let mut a = Files::new();
        a.insert("ab".into(), "c".into());
        let mut b = Files::new();
        b.insert("a".into(), "bc".into());
        assert_ne!(checksum(&a), checksum(&b));
    }
}
