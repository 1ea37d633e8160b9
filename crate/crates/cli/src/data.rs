//! Corpus directories: top-level `*.wav` files (id = file stem), optional
//! `speakers.csv` (`utterance_id,speaker_id`) and `labels.csv`
//! (`utterance_id,label`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use speech_simclr::augment::NoiseBank;
use speech_simclr::dsp::{read_wav, write_wav};
use speech_simclr::trainer::Utterance;
use speech_simclr::{Error, Result};

use crate::synth::SyntheticDataset;

pub const LABELS_FILE: &str = "labels.csv";
pub const SPEAKERS_FILE: &str = "speakers.csv";
pub const NOISE_SUBDIR: &str = "noise";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn wav_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let p = entry.map_err(io(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_pairs(path: &Path, column: &str) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "utterance_id" || &headers[1] != column {
        return Err(Error::Data(format!(
            "{}: expected header `utterance_id,{column}`, found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn write_pairs(path: &Path, column: &str, rows: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["utterance_id", column]).map_err(|e| csv_err(path, e))?;
    for (a, b) in rows {
        w.write_record([a, b]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

/// Reads every top-level WAV file of `dir`, sorted by file name.
pub fn load_utterances(dir: &Path) -> Result<Vec<Utterance>> {
    let paths = wav_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("no .wav files in {}", dir.display())));
    }
    let speakers: BTreeMap<String, String> = {
        let p = dir.join(SPEAKERS_FILE);
        if p.exists() {
            read_pairs(&p, "speaker_id")?.into_iter().collect()
        } else {
            BTreeMap::new()
        }
    };
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mut u = Utterance::new(id, read_wav(p)?);
            u.speaker = speakers.get(&u.id).cloned();
            Ok(u)
        })
        .collect()
}

pub fn load_noise(dir: Option<&Path>, rate_hz: u32) -> Result<NoiseBank> {
    match dir {
        Some(d) => NoiseBank::from_dir(d, rate_hz),
        None => Ok(NoiseBank::default()),
    }
}

/// Class labels keyed by utterance id, with label strings mapped to indices
/// in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub by_id: BTreeMap<String, usize>,
    pub classes: Vec<String>,
}

impl Labels {
    pub fn read(path: &Path) -> Result<Self> {
        let pairs = read_pairs(path, "label")?;
        let mut classes: Vec<String> = pairs.iter().map(|(_, l)| l.clone()).collect();
        classes.sort();
        classes.dedup();
        let mut by_id = BTreeMap::new();
        for (id, l) in pairs {
            let c = classes.binary_search(&l).expect("collected above");
            if by_id.insert(id.clone(), c).is_some() {
                return Err(Error::Data(format!("{}: duplicate utterance id {id}", path.display())));
            }
        }
        Ok(Self { by_id, classes })
    }

    /// Labels for `ids` in order; every id must be labelled.
    pub fn for_ids(&self, ids: &[String]) -> Result<Vec<usize>> {
        let missing: Vec<&str> = ids.iter().filter(|i| !self.by_id.contains_key(*i)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("no label for utterance ids: {}", missing.join(", "))));
        }
        Ok(ids.iter().map(|i| self.by_id[i]).collect())
    }
}

/// Writes the corpus as `<dir>/<id>.wav`, `<dir>/labels.csv` and the noise
/// clips under `<dir>/noise/`.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for u in &ds.utterances {
        write_wav(&u.waveform, dir.join(format!("{}.wav", u.id)))?;
    }
    write_pairs(
        &dir.join(LABELS_FILE),
        "label",
        ds.utterances.iter().zip(&ds.labels).map(|(u, &c)| (u.id.clone(), ds.class_names[c].clone())),
    )?;
    if !ds.noise.is_empty() {
        let nd = dir.join(NOISE_SUBDIR);
        std::fs::create_dir_all(&nd).map_err(io(&nd))?;
        for (i, n) in ds.noise.iter().enumerate() {
            write_wav(n, nd.join(format!("noise_{i:02}.wav")))?;
        }
    }
    Ok(())
}
