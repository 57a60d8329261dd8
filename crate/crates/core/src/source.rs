//! Providers of source digit images.
//!
//! [`DirectorySource`] reads the NIST by-class layout (class folders named by
//! the hex ASCII code of the character, `30`..`39` for the digits) or an
//! explicit listing file. [`ProceduralDigits`] renders stroke digits on the
//! fly, dark ink on a light 128x128 page, for runs without the archive.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::model::{GrayImage, NUM_CLASSES};
use crate::randomness::derive_stream;

pub trait SourceProvider: Sync {
    /// Identifiers of every image of `class`, in lexicographic order.
    fn source_ids(&self, class: u8) -> Vec<String>;

    /// 8-bit intensities (0..=255) of one source image.
    fn load(&self, source_id: &str) -> Result<GrayImage>;
}

/// Digit label for a NIST by-class folder name (`"30"` is `'0'`).
pub fn class_from_folder_name(name: &str) -> Option<u8> {
    if name.len() != 2 {
        return None;
    }
    let code = u8::from_str_radix(name, 16).ok()?;
    code.is_ascii_digit().then(|| code - b'0')
}

/// Label implied by the nearest ancestor folder that names a digit class.
pub fn class_from_path(path: &Path) -> Option<u8> {
    path.ancestors()
        .skip(1)
        .filter_map(|p| p.file_name()?.to_str())
        .find_map(class_from_folder_name)
}

fn ingestion(path: &Path, reason: impl ToString) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decodes an image file to 8-bit grayscale.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| ingestion(path, e))?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let values = luma.into_raw().into_iter().map(f32::from).collect();
    GrayImage::new(w, h, values).map_err(|e| ingestion(path, e))
}

/// Reads one source image and infers its label from the by-class layout.
pub fn read_source(path: &Path) -> Result<(GrayImage, u8)> {
    let label = class_from_path(path).ok_or_else(|| ingestion(path, "no digit class folder in path"))?;
    Ok((read_gray(path)?, label))
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "bmp" | "pgm"))
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Source images on disk, identified by their path relative to the root.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    root: PathBuf,
    by_class: BTreeMap<u8, Vec<String>>,
}

impl DirectorySource {
    /// Scans `root` for digit class folders. Other folders are skipped with a warning.
    pub fn scan(root: &Path) -> Result<Self> {
        let entries = fs::read_dir(root).map_err(|e| ingestion(root, e))?;
        let mut by_class: BTreeMap<u8, Vec<String>> = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(|e| ingestion(root, e))?;
            if !entry.file_type().map_err(|e| ingestion(&entry.path(), e))?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(class) = class_from_folder_name(&name) else {
                warn!("skipping non-digit class folder {}", entry.path().display());
                continue;
            };
            let ids = by_class.entry(class).or_default();
            for file in WalkDir::new(entry.path()).follow_links(true) {
                let file = file.map_err(|e| ingestion(&entry.path(), e))?;
                if file.file_type().is_file() && is_image_file(file.path()) {
                    ids.push(relative_id(root, file.path()));
                }
            }
        }
        for ids in by_class.values_mut() {
            ids.sort();
        }
        Ok(Self {
            root: root.to_path_buf(),
            by_class,
        })
    }

    /// Reads a listing with one `<relative path> <label>` pair per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_listing(root: &Path, listing: &Path) -> Result<Self> {
        let text = fs::read_to_string(listing).map_err(|e| ingestion(listing, e))?;
        let mut by_class: BTreeMap<u8, Vec<String>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, label) = line
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| ingestion(listing, format!("line {}: expected `<path> <label>`", n + 1)))?;
            let label: u8 = label
                .parse()
                .ok()
                .filter(|&l| l < NUM_CLASSES)
                .ok_or_else(|| ingestion(listing, format!("line {}: label must be 0..=9", n + 1)))?;
            by_class.entry(label).or_default().push(path.trim().to_string());
        }
        for ids in by_class.values_mut() {
            ids.sort();
            ids.dedup();
        }
        Ok(Self {
            root: root.to_path_buf(),
            by_class,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn count(&self, class: u8) -> usize {
        self.by_class.get(&class).map_or(0, Vec::len)
    }
}

impl SourceProvider for DirectorySource {
    fn source_ids(&self, class: u8) -> Vec<String> {
        self.by_class.get(&class).cloned().unwrap_or_default()
    }

    fn load(&self, source_id: &str) -> Result<GrayImage> {
        read_gray(&self.root.join(source_id))
    }
}

/// Stroke skeleton of a digit in a unit box (x right, y down).
fn template(class: u8) -> Vec<Vec<(f64, f64)>> {
    let arc = |cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64| -> Vec<(f64, f64)> {
        let steps = 24;
        (0..=steps)
            .map(|k| {
                let t = (from + (to - from) * k as f64 / steps as f64).to_radians();
                (cx + rx * libm::cos(t), cy + ry * libm::sin(t))
            })
            .collect()
    };
    let line = |pts: &[(f64, f64)]| pts.to_vec();
    match class {
        0 => vec![arc(0.5, 0.5, 0.34, 0.47, 0.0, 360.0)],
        1 => vec![line(&[(0.32, 0.2), (0.52, 0.03), (0.52, 0.97)])],
        2 => {
            let mut s = arc(0.5, 0.3, 0.32, 0.26, 170.0, 400.0);
            s.extend([(0.15, 0.97), (0.87, 0.97)]);
            vec![s]
        }
        3 => vec![arc(0.48, 0.27, 0.3, 0.24, 200.0, 450.0), arc(0.48, 0.73, 0.34, 0.26, 270.0, 520.0)],
        4 => vec![line(&[(0.66, 0.97), (0.66, 0.03), (0.1, 0.7), (0.9, 0.7)])],
        5 => {
            let mut s = line(&[(0.82, 0.03), (0.28, 0.03), (0.22, 0.45)]);
            s.extend(arc(0.5, 0.68, 0.33, 0.29, 210.0, 520.0));
            vec![s]
        }
        6 => vec![
            line(&[(0.74, 0.04), (0.46, 0.2), (0.26, 0.5), (0.23, 0.72)]),
            arc(0.5, 0.72, 0.28, 0.25, 0.0, 360.0),
        ],
        7 => vec![line(&[(0.1, 0.03), (0.9, 0.03), (0.4, 0.97)])],
        8 => vec![arc(0.5, 0.26, 0.26, 0.23, 0.0, 360.0), arc(0.5, 0.73, 0.32, 0.25, 0.0, 360.0)],
        9 => vec![arc(0.5, 0.29, 0.28, 0.26, 0.0, 360.0), line(&[(0.78, 0.3), (0.62, 0.97)])],
        _ => unreachable!("class out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    libm::hypot(p.0 - a.0 - t * dx, p.1 - a.1 - t * dy)
}

/// Procedurally rendered handwritten-style digits with per-image jitter.
///
/// Ids have the form `procedural/<class>/<index:07>`, so lexicographic and
/// numeric order agree. Rendering is a pure function of `(seed, class, index)`.
#[derive(Debug, Clone)]
pub struct ProceduralDigits {
    seed: u64,
    per_class: usize,
}

pub const PROCEDURAL_SIDE: usize = 128;

impl ProceduralDigits {
    pub fn new(seed: u64, per_class: usize) -> Self {
        Self { seed, per_class }
    }

    pub fn source_id(class: u8, index: usize) -> String {
        format!("procedural/{class}/{index:07}")
    }

    fn parse_id(&self, id: &str) -> Option<(u8, usize)> {
        let rest = id.strip_prefix("procedural/")?;
        let (class, index) = rest.split_once('/')?;
        let class: u8 = class.parse().ok().filter(|&c| c < NUM_CLASSES)?;
        let index: usize = index.parse().ok().filter(|&i| i < self.per_class)?;
        Some((class, index))
    }

    pub fn render(&self, class: u8, index: usize) -> GrayImage {
        let mut rng = derive_stream(self.seed ^ 0x5052_4F43_4449_4749, (u64::from(class) << 40) | index as u64);
        let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
        let height = uniform(40.0, 54.0);
        let width = height * uniform(0.55, 0.8);
        let angle = uniform(-12.0, 12.0).to_radians();
        let shear = uniform(-0.2, 0.2);
        let (tx, ty) = (uniform(-4.0, 4.0), uniform(-4.0, 4.0));
        let half_width = uniform(2.5, 5.0);
        let center = PROCEDURAL_SIDE as f64 / 2.0;
        let (sin, cos) = (libm::sin(angle), libm::cos(angle));
        let to_pixel = |(u, v): (f64, f64)| {
            let x = (u - 0.5) * width + shear * (v - 0.5) * height;
            let y = (v - 0.5) * height;
            (center + tx + cos * x - sin * y, center + ty + sin * x + cos * y)
        };

        let side = PROCEDURAL_SIDE;
        let mut dist = vec![f64::INFINITY; side * side];
        for stroke in template(class) {
            let pts: Vec<(f64, f64)> = stroke.into_iter().map(to_pixel).collect();
            for seg in pts.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                let reach = half_width + 2.0;
                let c0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
                let c1 = ((a.0.max(b.0) + reach).ceil() as usize).min(side - 1);
                let r0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
                let r1 = ((a.1.max(b.1) + reach).ceil() as usize).min(side - 1);
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let d = segment_distance((c as f64 + 0.5, r as f64 + 0.5), a, b);
                        let slot = &mut dist[r * side + c];
                        if d < *slot {
                            *slot = d;
                        }
                    }
                }
            }
        }
        // anti-aliased ink: 0 on the stroke, 255 on the page
        let values = dist
            .into_iter()
            .map(|d| (255.0 * (d - half_width + 0.5).clamp(0.0, 1.0)).round() as f32)
            .collect();
        GrayImage::new(side, side, values).expect("fixed size")
    }
}

impl SourceProvider for ProceduralDigits {
    fn source_ids(&self, class: u8) -> Vec<String> {
        if class >= NUM_CLASSES {
            return Vec::new();
        }
        (0..self.per_class).map(|i| Self::source_id(class, i)).collect()
    }

    fn load(&self, source_id: &str) -> Result<GrayImage> {
        let (class, index) = self.parse_id(source_id).ok_or_else(|| Error::Ingestion {
            path: PathBuf::from(source_id),
            reason: "not a procedural source id of this provider".into(),
        })?;
        Ok(self.render(class, index))
    }
}

/// Writes procedural digits to disk in the NIST by-class layout
/// (`<root>/3<d>/procedural/<index>.png`).
pub fn export_procedural(provider: &ProceduralDigits, root: &Path, classes: &[u8]) -> Result<()> {
    for &class in classes {
        let dir = root.join(format!("{:02x}", b'0' + class)).join("procedural");
        fs::create_dir_all(&dir)?;
        for index in 0..provider.per_class {
            let img = provider.render(class, index);
            let bytes: Vec<u8> = img.values().iter().map(|&v| v as u8).collect();
            let path = dir.join(format!("{index:07}.png"));
            image::GrayImage::from_raw(PROCEDURAL_SIDE as u32, PROCEDURAL_SIDE as u32, bytes)
                .expect("fixed size")
                .save(&path)
                .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}
