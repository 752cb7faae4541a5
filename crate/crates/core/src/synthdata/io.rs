use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{SceneParams, SceneRenderer};
use super::{bilinear, SampleRecord};
use crate::error::{Error, Result};
use crate::gridcodec::LineSegment;
use crate::postprocess::to_u8;

/// One line of a dataset manifest (JSON lines). `image` is relative to the
/// manifest's directory; coordinates are continuous pixels, origin top-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub segments: Vec<[f64; 4]>,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn line_segments(&self) -> Vec<LineSegment> {
        self.segments.iter().map(|&c| LineSegment::from_array(c)).collect()
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Writes an `[H, W, 3]` image in `[0, 1]` as 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let buf: Vec<u8> = img.iter().map(|&v| to_u8(v)).collect();
    let rgb = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    rgb.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads any PNG as RGB with values in `[0, 1]`.
pub fn load_rgb_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data: Vec<f32> = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("RGB buffer"))
}

/// Bilinear resize on pixel centers.
pub fn resize_image(img: &Array3<f32>, new_w: usize, new_h: usize) -> Array3<f32> {
    let (h, w, c) = img.dim();
    if (h, w) == (new_h, new_w) {
        return img.clone();
    }
    let (sx, sy) = (w as f64 / new_w as f64, h as f64 / new_h as f64);
    Array3::from_shape_fn((new_h, new_w, c), |(i, j, k)| {
        bilinear(img, (j as f64 + 0.5) * sx, (i as f64 + 0.5) * sy, k)
    })
}

/// A manifest and the directory its image paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn open(manifest: &Path) -> Result<Self> {
        let records = read_manifest(manifest)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].image)
    }

    /// Loads record `i`, resized to `size × size` (segments scaled along)
    /// when `size` is given.
    pub fn load(&self, i: usize, size: Option<usize>) -> Result<SampleRecord> {
        let r = &self.records[i];
        let path = self.image_path(i);
        let mut image = load_rgb_png(&path)?;
        let (h, w, _) = image.dim();
        if (w, h) != (r.width, r.height) {
            return Err(Error::Format(format!(
                "{} is {w}×{h} but the manifest says {}×{}",
                path.display(),
                r.width,
                r.height
            )));
        }
        let mut segments = r.line_segments();
        if let Some(s) = size {
            if (w, h) != (s, s) {
                image = resize_image(&image, s, s);
                let (fx, fy) = (s as f64 / w as f64, s as f64 / h as f64);
                for seg in &mut segments {
                    seg.x1 *= fx;
                    seg.x2 *= fx;
                    seg.y1 *= fy;
                    seg.y2 *= fy;
                }
            }
        }
        Ok(SampleRecord::new(image, segments, r.seed, path.display().to_string()))
    }
}

/// Renders `n` scenes into `out_dir/images/` and writes
/// `out_dir/manifest.jsonl`. Per-image seeds are drawn from `seed`.
pub fn generate_dataset(scene: &SceneParams, size: usize, n: usize, seed: u64, out_dir: &Path) -> Result<Dataset> {
    let renderer = SceneRenderer::new(scene.clone())?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let s: u64 = rng.random();
        let rec = renderer.render(size, s)?;
        let rel = format!("images/{i:05}.png");
        save_rgb_png(&out_dir.join(&rel), &rec.image)?;
        records.push(ManifestRecord {
            image: rel,
            width: size,
            height: size,
            segments: rec.segments.iter().map(LineSegment::coords).collect(),
            seed: s,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(Dataset {
        root: out_dir.to_path_buf(),
        records,
    })
}
