use std::path::{Path, PathBuf};

use super::{read_text, write_file, PipelineError};

pub const MANIFEST_HEADER: &str = "id,file,objective,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Path of the ABC file, relative to the manifest's directory.
    pub file: String,
    pub objective: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.id, e.file, e.objective, e.seed));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        write_file(path, self.to_csv())
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let bad = |line: usize, reason: String| PipelineError::Manifest {
            file: path.to_path_buf(),
            line,
            reason,
        };
        let text = read_text(path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(bad(1, format!("expected header {MANIFEST_HEADER:?}")));
        }
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad(n, format!("expected 4 fields, found {}", f.len())));
            }
            let objective = f[2].parse().map_err(|_| bad(n, format!("bad objective {:?}", f[2])))?;
            let seed = f[3].parse().map_err(|_| bad(n, format!("bad seed {:?}", f[3])))?;
            if entries.iter().any(|e| e.id == f[0]) {
                return Err(bad(n, format!("duplicate id {:?}", f[0])));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                file: f[1].to_string(),
                objective,
                seed,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.objective).reduce(f64::max)
    }

    pub fn piece_path(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Manifest {
            entries: vec![
                ManifestEntry {
                    id: "piece-000".into(),
                    file: "piece-000.abc".into(),
                    objective: 1.0 / 3.0 + 0.1,
                    seed: 5,
                },
                ManifestEntry {
                    id: "piece-001".into(),
                    file: "piece-001.abc".into(),
                    objective: 2.0e-9,
                    seed: 6,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
        assert_eq!(m.best_objective(), Some(1.0 / 3.0 + 0.1));
    }

    #[test]
    fn rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        for text in [
            "id,file\n",
            "id,file,objective,seed\na,b,x,1\n",
            "id,file,objective,seed\na,b,1,1\na,c,1,1\n",
        ] {
            std::fs::write(&p, text).unwrap();
            assert!(matches!(Manifest::read(&p), Err(PipelineError::Manifest { .. })));
        }
    }
}
