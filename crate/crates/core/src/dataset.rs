//! Fold manifests, folder-layout importers, and the synthetic desk dataset.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_pcm16, AudioClip};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FOLDS: u32 = 5;
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Original,
    TimeShift,
    PitchShift,
    Noise,
}

impl VariantKind {
    pub const AUGMENTED: [VariantKind; 3] = [VariantKind::TimeShift, VariantKind::PitchShift, VariantKind::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Original => "original",
            VariantKind::TimeShift => "time_shift",
            VariantKind::PitchShift => "pitch_shift",
            VariantKind::Noise => "noise",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
    pub fold: u32,
    pub variant_kind: VariantKind,
    pub source_id: String,
}

impl ManifestRow {
    pub fn original(id: impl Into<String>, path: impl Into<PathBuf>, label: usize, fold: u32) -> Self {
        let id = id.into();
        Self {
            source_id: id.clone(),
            id,
            path: path.into(),
            label,
            fold,
            variant_kind: VariantKind::Original,
        }
    }

    pub fn is_original(&self) -> bool {
        self.variant_kind == VariantKind::Original
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn originals(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.is_original())
    }

    pub fn folds(&self) -> BTreeSet<u32> {
        self.rows.iter().map(|r| r.fold).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Checks id uniqueness, fold range `1..=num_folds`, and that every
    /// variant points at an original in the same fold with the same label.
    pub fn validate(&self, num_folds: u32) -> Result<()> {
        let mut seen = HashSet::new();
        let mut originals: HashMap<&str, &ManifestRow> = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let line = i + 2;
            if r.id.is_empty() {
                return Err(Error::Validation(format!("line {line}: empty id")));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("line {line}: duplicate id {:?}", r.id)));
            }
            if r.fold == 0 || r.fold > num_folds {
                return Err(Error::Validation(format!(
                    "line {line}: fold {} of {:?} outside declared folds 1..={num_folds}",
                    r.fold, r.id
                )));
            }
            if r.is_original() {
                if r.source_id != r.id {
                    return Err(Error::Validation(format!(
                        "line {line}: original {:?} has source_id {:?}",
                        r.id, r.source_id
                    )));
                }
                originals.insert(&r.id, r);
            }
        }
        for (i, r) in self.rows.iter().enumerate().filter(|(_, r)| !r.is_original()) {
            let line = i + 2;
            let src = originals.get(r.source_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("line {line}: variant {:?} has dangling source_id {:?}", r.id, r.source_id))
            })?;
            if src.fold != r.fold {
                return Err(Error::Validation(format!(
                    "line {line}: variant {:?} is in fold {} but its source is in fold {}",
                    r.id, r.fold, src.fold
                )));
            }
            if src.label != r.label {
                return Err(Error::Validation(format!(
                    "line {line}: variant {:?} label {} differs from source label {}",
                    r.id, r.label, src.label
                )));
            }
        }
        Ok(())
    }

    /// Writes the CSV; paths under the manifest's directory are stored
    /// relative to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        for r in &self.rows {
            let mut row = r.clone();
            if let Ok(rel) = r.path.strip_prefix(base) {
                row.path = rel.to_path_buf();
            }
            w.serialize(&row).map_err(|e| Error::parse(path, e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["id", "path", "label", "fold", "variant_kind", "source_id"])
                .map_err(|e| Error::parse(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest with folds `1..=5`.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load_manifest_with_folds(path, DEFAULT_FOLDS)
}

pub fn load_manifest_with_folds(path: &Path, num_folds: u32) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Validation(format!("manifest {} does not exist", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    let expected = ["id", "path", "label", "fold", "variant_kind", "source_id"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(path, format!("header must be {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let mut row = rec.map_err(|e| Error::parse(path, format!("line {}: {e}", i + 2)))?;
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    let m = Manifest { rows };
    m.validate(num_folds)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(m)
}

/// Loads the audio for one manifest row, carrying label and fold.
pub fn load_row_audio(row: &ManifestRow) -> Result<AudioClip> {
    let mut clip = crate::audio::load_clip(&row.path, &row.id)?;
    clip.label = row.label;
    clip.fold = row.fold;
    Ok(clip)
}

/// ESC-50 layout: `<root>/meta/esc50.csv` and `<root>/audio/*.wav`.
/// With `esc10_only` the ESC-10 subset is kept and its labels are
/// renumbered densely in ascending original order.
pub fn import_esc50(root: &Path, esc10_only: bool) -> Result<Manifest> {
    #[derive(Deserialize)]
    struct Meta {
        filename: String,
        fold: u32,
        target: usize,
        esc10: String,
    }
    let meta = root.join("meta").join("esc50.csv");
    let mut reader = csv::Reader::from_path(&meta).map_err(|e| Error::parse(&meta, e.to_string()))?;
    let mut entries = Vec::new();
    for (i, rec) in reader.deserialize::<Meta>().enumerate() {
        let m = rec.map_err(|e| Error::parse(&meta, format!("line {}: {e}", i + 2)))?;
        if esc10_only && !m.esc10.eq_ignore_ascii_case("true") {
            continue;
        }
        entries.push(m);
    }
    let targets: BTreeSet<usize> = entries.iter().map(|m| m.target).collect();
    let remap: HashMap<usize, usize> = targets.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let rows = entries
        .into_iter()
        .map(|m| {
            let id = m.filename.trim_end_matches(".wav").to_string();
            let label = if esc10_only { remap[&m.target] } else { m.target };
            ManifestRow::original(id, root.join("audio").join(&m.filename), label, m.fold)
        })
        .collect();
    let manifest = Manifest { rows };
    manifest.validate(DEFAULT_FOLDS)?;
    Ok(manifest)
}

/// DCASE acoustic-scene layout with `evaluation_setup/fold1_train.csv` and
/// `fold1_evaluate.csv` (tab separated `filename<TAB>scene`). Training clips
/// go to fold 1 and evaluation clips to fold 2; scene labels are numbered in
/// sorted order.
pub fn import_dcase(root: &Path) -> Result<Manifest> {
    let setup = root.join("evaluation_setup");
    let read = |name: &str| -> Result<Vec<(String, String)>> {
        let p = setup.join(name);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("filename")) {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(file), Some(scene)) = (parts.next(), parts.next()) else {
                return Err(Error::parse(&p, format!("line {}: expected filename<TAB>scene", i + 1)));
            };
            out.push((file.to_string(), scene.to_string()));
        }
        Ok(out)
    };
    let train = read("fold1_train.csv")?;
    let eval = read("fold1_evaluate.csv")?;
    let scenes: BTreeSet<&str> = train.iter().chain(&eval).map(|(_, s)| s.as_str()).collect();
    let label: HashMap<&str, usize> = scenes.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut rows = Vec::new();
    for (fold, list) in [(1, &train), (2, &eval)] {
        for (file, scene) in list {
            let id = Path::new(file)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| file.clone());
            rows.push(ManifestRow::original(id, root.join(file), label[scene.as_str()], fold));
        }
    }
    let manifest = Manifest { rows };
    manifest.validate(DEFAULT_FOLDS)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            clips_per_class: 40,
            clip_seconds: 5.0,
            sample_rate: 22_050,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.clips_per_class == 0 || self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return Err(Error::Validation(format!(
                "synthetic dataset needs positive classes, clips, duration and rate (got {}, {}, {}, {})",
                self.num_classes, self.clips_per_class, self.clip_seconds, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }
}

/// Sound family of a synthetic class; classes cycle through the families,
/// later classes reuse a family with different parameters.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Family {
    Tone,
    Chirp,
    ModulatedNoise,
    Clicks,
    ToneInNoise,
}

const FAMILIES: [Family; 5] = [
    Family::Tone,
    Family::Chirp,
    Family::ModulatedNoise,
    Family::Clicks,
    Family::ToneInNoise,
];

/// Generates one clip: low-level background noise plus a class-specific
/// event of random onset, length and level.
pub fn synth_clip(class: usize, spec: &SynthSpec, id: &str) -> Vec<f32> {
    let mut rng = rng::stream(spec.seed, id);
    let sr = spec.sample_rate as f64;
    let n = spec.num_samples();
    let family = FAMILIES[class % FAMILIES.len()];
    let variant = (class / FAMILIES.len()) as f64;
    let nyquist = sr / 2.0;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, v: f64| v * (1.0 + rng.gen_range(-0.03..0.03));

    let mut out: Vec<f64> = (0..n)
        .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let total = n as f64 / sr;
    let dur = rng.gen_range(0.3..0.5) * total;
    let onset = rng.gen_range(0.0..(total - dur).max(1e-3));
    let level = rng.gen_range(0.3..0.6);
    let start = (onset * sr) as usize;
    let len = ((dur * sr) as usize).min(n.saturating_sub(start));
    let fade = (0.01 * sr) as usize;
    let envelope = |i: usize| {
        let a = (i as f64 / fade.max(1) as f64).min(1.0);
        let b = ((len - i) as f64 / fade.max(1) as f64).min(1.0);
        a.min(b)
    };

    let f0 = jitter(&mut rng, (440.0 * 2f64.powf(variant * 2.0)).min(nyquist * 0.8));
    let phase: f64 = rng.gen_range(0.0..TAU);
    let mut lp = 0.0;
    let click_rate = jitter(&mut rng, 6.0 + 10.0 * variant);
    let mod_rate = jitter(&mut rng, 3.0 + 8.0 * variant);
    let (chirp_a, chirp_b): (f64, f64) = if variant == 0.0 { (300.0, 3000.0) } else { (4000.0, 800.0) };
    let (chirp_a, chirp_b) = (jitter(&mut rng, chirp_a.min(nyquist * 0.8)), jitter(&mut rng, chirp_b.min(nyquist * 0.8)));
    for i in 0..len {
        let t = i as f64 / sr;
        let s = match family {
            Family::Tone => (TAU * f0 * t + phase).sin(),
            Family::Chirp => {
                let k = (chirp_b - chirp_a) / dur;
                (TAU * (chirp_a * t + 0.5 * k * t * t) + phase).sin()
            }
            Family::ModulatedNoise => {
                let w: f64 = rng.sample(StandardNormal);
                let w = if variant == 0.0 {
                    w
                } else {
                    lp = 0.9 * lp + 0.1 * w;
                    3.0 * lp
                };
                0.5 * w * (0.5 + 0.5 * (TAU * mod_rate * t).sin())
            }
            Family::Clicks => {
                let period = (sr / click_rate) as usize;
                let k = i % period.max(1);
                if k < 40 {
                    (-(k as f64) / 8.0).exp() * if k % 2 == 0 { 1.0 } else { -1.0 }
                } else {
                    0.0
                }
            }
            Family::ToneInNoise => {
                let w: f64 = rng.sample(StandardNormal);
                0.6 * (TAU * 2.5 * f0 * t + phase).sin() + 0.25 * w
            }
        };
        out[start + i] += level * envelope(i) * s;
    }
    out.into_iter().map(|v| v.clamp(-0.99, 0.99) as f32).collect()
}

/// Writes `<out_dir>/audio/*.wav` and `<out_dir>/manifest.csv`. Clip `j` of
/// each class goes to fold `j % 5 + 1`.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let audio = out_dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut rows = Vec::with_capacity(spec.num_classes * spec.clips_per_class);
    for class in 0..spec.num_classes {
        for j in 0..spec.clips_per_class {
            let id = format!("c{class:02}_{j:03}");
            let samples = synth_clip(class, spec, &id);
            let path = audio.join(format!("{id}.wav"));
            write_wav_pcm16(&path, &samples, spec.sample_rate)?;
            rows.push(ManifestRow::original(id, path, class, (j % DEFAULT_FOLDS as usize) as u32 + 1));
        }
    }
    let manifest = Manifest { rows };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(VariantKind::Original),
            "time_shift" => Ok(VariantKind::TimeShift),
            "pitch_shift" => Ok(VariantKind::PitchShift),
            "noise" => Ok(VariantKind::Noise),
            other => Err(Error::Validation(format!("unknown variant kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        fs::write(&p, format!("id,path,label,fold,variant_kind,source_id\n{body}")).unwrap();
        p
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write_csv(dir.path(), "")).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write_csv(dir.path(), "a,audio/a.wav,0,1,original,a\n")).unwrap();
        assert_eq!(m.rows[0].path, dir.path().join("audio/a.wav"));
    }

    #[test]
    fn fold_out_of_range_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a,a.wav,0,1,original,a\nb,b.wav,0,6,original,b\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("fold 6"), "{err}");
    }

    #[test]
    fn duplicate_and_dangling_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a,a.wav,0,1,original,a\na,b.wav,0,1,original,a\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));
        let p = write_csv(dir.path(), "a,a.wav,0,1,original,a\nv,v.wav,0,1,noise,zzz\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("dangling"));
    }

    #[test]
    fn variant_in_other_fold_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a,a.wav,0,1,original,a\nv,v.wav,0,2,noise,a\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("fold 2"));
    }

    #[test]
    fn garbage_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a,a.wav,zero,1,original,a\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("line 2"));
        let p = write_csv(dir.path(), "a,a.wav,0,1,reversed,a\n");
        assert!(load_manifest(&p).is_err());
    }

    #[test]
    fn missing_manifest_is_validation_error() {
        let err = load_manifest(Path::new("/nonexistent/manifest.csv")).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ManifestRow::original("x", dir.path().join("audio/x.wav"), 1, 3),
            ManifestRow {
                id: "x_noise".into(),
                path: dir.path().join("aug/x_noise.wav"),
                label: 1,
                fold: 3,
                variant_kind: VariantKind::Noise,
                source_id: "x".into(),
            },
        ];
        let m = Manifest::new(rows);
        let p = dir.path().join("manifest.csv");
        m.write(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("x,audio/x.wav,1,3,original,x"));
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn esc50_layout_import() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("meta")).unwrap();
        fs::write(
            dir.path().join("meta/esc50.csv"),
            "filename,fold,target,category,esc10,src_file,take\n\
             1-100-A-0.wav,1,0,dog,True,100,A\n\
             2-101-A-14.wav,2,14,chirping_birds,False,101,A\n\
             3-102-A-41.wav,3,41,chainsaw,True,102,A\n",
        )
        .unwrap();
        let all = import_esc50(dir.path(), false).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all.rows[2].label, 41);
        assert_eq!(all.rows[2].path, dir.path().join("audio/3-102-A-41.wav"));
        let esc10 = import_esc50(dir.path(), true).unwrap();
        assert_eq!(esc10.rows.iter().map(|r| r.label).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn dcase_layout_import() {
        let dir = tempfile::tempdir().unwrap();
        let setup = dir.path().join("evaluation_setup");
        fs::create_dir_all(&setup).unwrap();
        fs::write(setup.join("fold1_train.csv"), "filename\tscene_label\naudio/a.wav\tpark\naudio/b.wav\tbus\n").unwrap();
        fs::write(setup.join("fold1_evaluate.csv"), "filename\tscene_label\naudio/c.wav\tpark\n").unwrap();
        let m = import_dcase(dir.path()).unwrap();
        assert_eq!(m.len(), 3);
        let c = m.get("c").unwrap();
        assert_eq!((c.fold, c.label), (2, 1));
        assert_eq!(m.get("b").unwrap().label, 0);
    }

    #[test]
    fn synth_spec_validation() {
        let spec = SynthSpec {
            num_classes: 0,
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
        assert_eq!(SynthSpec::default().num_samples(), 110_250);
    }
}
