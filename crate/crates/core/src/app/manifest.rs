use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub utt_id: String,
    pub wav_path: PathBuf,
    pub speaker_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct NoiseDirRecord {
    noise_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Utterance(Utterance),
    NoiseDir(NoiseDirRecord),
}

/// JSON Lines list of utterances plus an optional `{"noise_dir": ...}` line.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub noise_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut out = Manifest::default();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            match rec {
                Record::Utterance(mut u) => {
                    if !seen.insert(u.utt_id.clone()) {
                        return Err(Error::Manifest(format!("duplicate utt_id {}", u.utt_id)));
                    }
                    u.wav_path = base.join(&u.wav_path);
                    out.utterances.push(u);
                }
                Record::NoiseDir(n) => {
                    if out.noise_dir.is_some() {
                        return Err(Error::Manifest("noise_dir given twice".into()));
                    }
                    out.noise_dir = Some(base.join(n.noise_dir));
                }
            }
        }
        Ok(out)
    }

    /// Loads and checks that every referenced path exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&std::fs::read_to_string(path)?, base)?;
        for u in &m.utterances {
            if !u.wav_path.is_file() {
                return Err(Error::Manifest(format!(
                    "missing wav {}",
                    u.wav_path.display()
                )));
            }
        }
        if let Some(d) = &m.noise_dir {
            if !d.is_dir() {
                return Err(Error::Manifest(format!(
                    "missing noise_dir {}",
                    d.display()
                )));
            }
        }
        Ok(m)
    }

    /// Writes paths as given (callers pass paths relative to the file).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(d) = &self.noise_dir {
            serde_json::to_writer(
                &mut f,
                &NoiseDirRecord {
                    noise_dir: d.clone(),
                },
            )?;
            writeln!(f)?;
        }
        for u in &self.utterances {
            serde_json::to_writer(&mut f, u)?;
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }

    /// Distinct speakers in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.utterances
            .iter()
            .filter(|u| seen.insert(u.speaker_id.clone()))
            .map(|u| u.speaker_id.clone())
            .collect()
    }
}

/// One `<label> <enroll> <test>` verification trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: PathBuf,
    pub test: PathBuf,
}

/// Reads a trial list; relative paths resolve against `base`.
pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = vec![];
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        let [label, enroll, test] = parts[..] else {
            return Err(Error::Manifest(format!(
                "trial line {} needs 3 fields",
                i + 1
            )));
        };
        let target = match label {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Manifest(format!(
                    "trial line {}: label {other:?}",
                    i + 1
                )))
            }
        };
        out.push(Trial {
            target,
            enroll: base.join(enroll),
            test: base.join(test),
        });
    }
    Ok(out)
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trials {
        writeln!(
            f,
            "{} {} {}",
            u8::from(t.target),
            t.enroll.display(),
            t.test.display()
        )?;
    }
    f.flush()?;
    Ok(())
}
