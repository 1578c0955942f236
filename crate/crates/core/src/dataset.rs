//! Paired haze/clear image sets: manifests, decoding, and seeded epoch order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Domain, Image, CHANNELS};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// `[0, 255] -> [-1, 1]`.
pub fn byte_to_signed(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// `[-1, 1] -> [0, 255]`, clamped, rounded half away from zero.
pub fn signed_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).clamp(0.0, 255.0).round() as u8
}

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decodes an 8-bit image into the network domain.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0; CHANNELS * h * w];
    for p in 0..h * w {
        for c in 0..CHANNELS {
            data[c * h * w + p] = byte_to_signed(raw[p * CHANNELS + c]);
        }
    }
    Image::new(h, w, Domain::UnitSigned, data)
}

/// Interleaved RGB8 bytes of an image in the network or unit domain.
pub fn to_rgb_bytes(img: &Image) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let conv: fn(f64) -> u8 = match img.domain() {
        Domain::UnitSigned => signed_to_byte,
        Domain::Unit => |v| (v * 255.0).clamp(0.0, 255.0).round() as u8,
        Domain::ByteScale => |v| v.clamp(0.0, 255.0).round() as u8,
        Domain::Feature => {
            return Err(Error::InvalidArgument(
                "feature maps need an explicit mapping before they can be written".into(),
            ))
        }
    };
    let n = h * w;
    let data = img.data();
    let mut out = vec![0u8; CHANNELS * n];
    for p in 0..n {
        for c in 0..CHANNELS {
            out[p * CHANNELS + c] = conv(data[c * n + p]);
        }
    }
    Ok(out)
}

/// Writes an 8-bit image; the format follows the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.dims();
    let bytes = to_rgb_bytes(img)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    image::save_buffer(path, &bytes, w as u32, h as u32, image::ExtendedColorType::Rgb8).map_err(|source| {
        Error::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// How haze files are matched to clear files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchRule {
    /// Identical file stems.
    Stem,
    /// Haze stems of the form `<clear stem>_<anything>`; one haze file is drawn
    /// per clear image with the run seed.
    ClearIdPrefix { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub haze_path: PathBuf,
    pub clear_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
    /// Relative paths are resolved against this directory.
    pub root: PathBuf,
    pub split: Split,
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image_file(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pairs the image files of two directories.
pub fn build_manifest(haze_dir: &Path, clear_dir: &Path, rule: MatchRule) -> Result<PairManifest> {
    let haze = image_files(haze_dir)?;
    let clear = image_files(clear_dir)?;
    let mut entries = Vec::new();
    match rule {
        MatchRule::Stem => {
            for (stem, hp) in &haze {
                match clear.get(stem) {
                    Some(cp) => entries.push(PairEntry {
                        id: stem.clone(),
                        haze_path: hp.clone(),
                        clear_path: cp.clone(),
                    }),
                    None => log::warn!("haze image {} has no clear counterpart", hp.display()),
                }
            }
        }
        MatchRule::ClearIdPrefix { seed } => {
            let mut groups: BTreeMap<&str, Vec<&PathBuf>> = BTreeMap::new();
            for (stem, hp) in &haze {
                let id = stem.split('_').next().unwrap_or(stem);
                if clear.contains_key(id) {
                    groups.entry(id).or_default().push(hp);
                } else {
                    log::warn!("haze image {} has no clear counterpart", hp.display());
                }
            }
            for (i, (id, candidates)) in groups.into_iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let pick = candidates.choose(&mut rng).expect("non-empty group");
                entries.push(PairEntry {
                    id: id.to_string(),
                    haze_path: (*pick).clone(),
                    clear_path: clear[id].clone(),
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no pairs between {} and {}",
            haze_dir.display(),
            clear_dir.display()
        )));
    }
    Ok(PairManifest {
        entries,
        root: PathBuf::new(),
        split: Split::Train,
    })
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Tab-separated `id, haze_path, clear_path`, one entry per line, preceded by a
    /// `# split=` comment.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# split={}\n", self.split);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.id, e.haze_path.display(), e.clear_path.display()));
        }
        s
    }

    pub fn parse_tsv(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut split = Split::Train;
        let mut ids = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(tag) = comment.trim().strip_prefix("split=") {
                    split = tag.trim().parse()?;
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Dataset {
                    id: format!("line {}", lineno + 1),
                    reason: format!("expected 3 tab-separated columns, got {}", cols.len()),
                });
            }
            if !ids.insert(cols[0].to_string()) {
                return Err(Error::Dataset {
                    id: cols[0].to_string(),
                    reason: "duplicate id".into(),
                });
            }
            entries.push(PairEntry {
                id: cols[0].to_string(),
                haze_path: PathBuf::from(cols[1]),
                clear_path: PathBuf::from(cols[2]),
            });
        }
        Ok(Self {
            entries,
            root: root.to_path_buf(),
            split,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_tsv(&text, &root)
    }

    /// Checks that every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.haze_path, &e.clear_path] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Dataset {
                        id: e.id.clone(),
                        reason: format!("missing file {}", full.display()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load_pair(&self, entry: &PairEntry) -> Result<Pair> {
        let wrap = |e: Error| Error::Dataset {
            id: entry.id.clone(),
            reason: e.to_string(),
        };
        let haze = read_image(&self.resolve(&entry.haze_path)).map_err(wrap)?;
        let clear = read_image(&self.resolve(&entry.clear_path)).map_err(wrap)?;
        if haze.dims() != clear.dims() {
            return Err(Error::Dataset {
                id: entry.id.clone(),
                reason: format!(
                    "haze is {}x{} but clear is {}x{}",
                    haze.height(),
                    haze.width(),
                    clear.height(),
                    clear.width()
                ),
            });
        }
        Ok(Pair {
            id: entry.id.clone(),
            haze,
            clear,
        })
    }

    /// Entries in the order of epoch `epoch`.
    pub fn epoch_iter(&self, seed: u64, epoch: u64) -> impl Iterator<Item = &PairEntry> {
        epoch_order(self.entries.len(), seed, epoch)
            .into_iter()
            .map(move |i| &self.entries[i])
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e90c);
    rng.set_stream(epoch);
    idx.shuffle(&mut rng);
    idx
}

/// A decoded training or validation pair in the network domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub haze: Image,
    pub clear: Image,
}

/// Random access to pairs.
pub trait PairSource {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Pair>;
    fn id(&self, index: usize) -> String;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [Pair] {
    fn len(&self) -> usize {
        <[Pair]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Pair> {
        Ok(self[index].clone())
    }

    fn id(&self, index: usize) -> String {
        self[index].id.clone()
    }
}

impl PairSource for Vec<Pair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Pair> {
        PairSource::get(self.as_slice(), index)
    }

    fn id(&self, index: usize) -> String {
        self[index].id.clone()
    }
}

impl PairSource for PairManifest {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, index: usize) -> Result<Pair> {
        self.load_pair(&self.entries[index])
    }

    fn id(&self, index: usize) -> String {
        self.entries[index].id.clone()
    }
}
