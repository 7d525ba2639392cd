//! Dataset manifests.
//!
//! A manifest is a UTF-8 text file. Blank lines and lines starting with `#`
//! are ignored. Header lines are `key=value` pairs (`split=train|test`,
//! `max_dist=<fraction of the image diagonal>`); every other line is an
//! `image<TAB>ground truth` path pair, relative to the manifest's directory
//! unless absolute.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::raster::{EdgeGroundTruth, RasterImage};
use crate::error::{Error, Result};

/// Matching tolerance for BSDS500-style benchmarks.
pub const MAX_DIST_BSDS: f64 = 0.0075;
/// Matching tolerance for NYUD-style benchmarks.
pub const MAX_DIST_NYUD: f64 = 0.011;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub gt: PathBuf,
}

impl ManifestEntry {
    /// File stem of the image, used to name per-image outputs.
    pub fn stem(&self) -> String {
        self.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    /// Loads the pair and checks that the dimensions agree.
    pub fn load(&self) -> Result<(RasterImage, EdgeGroundTruth)> {
        let image = RasterImage::read(&self.image)?;
        let gt = EdgeGroundTruth::read(&self.gt)?;
        if (image.width, image.height) != (gt.width, gt.height) {
            return Err(Error::format(
                &self.gt,
                format!("ground truth is {}x{} but image is {}x{}", gt.width, gt.height, image.width, image.height),
            ));
        }
        Ok((image, gt))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub max_dist: f64,
    /// Entries with paths already resolved against the manifest directory.
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut split = None;
        let mut max_dist = None;
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::format(origin, format!("line {}: {msg}", n + 1));
            if let Some((a, b)) = line.split_once('\t') {
                entries.push(ManifestEntry { image: base.join(a.trim()), gt: base.join(b.trim()) });
            } else if let Some((key, value)) = line.split_once('=') {
                match key.trim() {
                    "split" => {
                        split = Some(match value.trim() {
                            "train" => Split::Train,
                            "test" => Split::Test,
                            other => return Err(bad(format!("unknown split `{other}`"))),
                        })
                    }
                    "max_dist" => {
                        let v: f64 = value.trim().parse().map_err(|_| bad(format!("bad max_dist `{value}`")))?;
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(bad(format!("max_dist must be positive, got {v}")));
                        }
                        max_dist = Some(v);
                    }
                    other => return Err(bad(format!("unknown header key `{other}`"))),
                }
            } else {
                return Err(bad(format!("expected `key=value` or a tab-separated path pair, got `{line}`")));
            }
        }
        Ok(Self {
            split: split.ok_or_else(|| Error::format(origin, "missing `split=` header"))?,
            max_dist: max_dist.ok_or_else(|| Error::format(origin, "missing `max_dist=` header"))?,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    /// Serializes with paths made relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = format!("split={}\nmax_dist={}\n", self.split, self.max_dist);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\n", rel(&e.image), rel(&e.gt)));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    /// Checks that every file exists and each pair has matching dimensions.
    pub fn validate(&self) -> Result<()> {
        self.entries.iter().try_for_each(|e| e.load().map(|_| ()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "# comment\nsplit=test\nmax_dist=0.011\n\na.png\tgt/a.png\n";
        let m = DatasetManifest::parse(text, Path::new("/data"), Path::new("/data/m.txt")).unwrap();
        assert_eq!(m.split, Split::Test);
        assert_eq!(m.max_dist, MAX_DIST_NYUD);
        assert_eq!(m.entries[0].gt, PathBuf::from("/data/gt/a.png"));
        assert_eq!(m.entries[0].stem(), "a");
        let again = DatasetManifest::parse(&m.to_text(Path::new("/data")), Path::new("/data"), Path::new("x")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_unknown_header_and_names_file() {
        let err = DatasetManifest::parse("split=train\nmaxdist=1\n", Path::new("."), Path::new("m.txt")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("m.txt") && msg.contains("maxdist"), "{msg}");
        assert!(DatasetManifest::parse("split=train\n", Path::new("."), Path::new("m")).is_err());
    }

    #[test]
    fn missing_file_is_named() {
        let m = DatasetManifest {
            split: Split::Test,
            max_dist: MAX_DIST_BSDS,
            entries: vec![ManifestEntry { image: "/nonexistent/x.png".into(), gt: "/nonexistent/y.png".into() }],
        };
        assert!(m.validate().unwrap_err().to_string().contains("/nonexistent/x.png"));
    }
}
