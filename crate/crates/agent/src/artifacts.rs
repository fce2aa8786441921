//! Content-addressed image store and the local crop tool.
//!
//! Artifacts are referenced as `artifact:<sha256>.png`; any other reference
//! is a filesystem path. Writes go through a temp file and an atomic rename,
//! so concurrent writers of the same content are harmless.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use hoi_core::BBox;
use image::{DynamicImage, GenericImageView, ImageFormat};
use sha2::{Digest, Sha256};

pub const ARTIFACT_SCHEME: &str = "artifact:";

#[derive(Debug, thiserror::Error)]
pub enum CropError {
    #[error("cannot read image `{reference}`: {message}")]
    Unreadable { reference: String, message: String },
    #[error("region {region} does not intersect the {width}x{height} image")]
    EmptyIntersection { region: BBox, width: u32, height: u32 },
    #[error("cannot write artifact: {0}")]
    Store(String),
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        match reference.strip_prefix(ARTIFACT_SCHEME) {
            Some(name) => self.dir.join(name),
            None => PathBuf::from(reference),
        }
    }

    pub fn read_bytes(&self, reference: &str) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.resolve(reference))
    }

    /// Stores encoded PNG bytes and returns their reference.
    pub fn put_png(&self, bytes: &[u8]) -> std::io::Result<String> {
        let name = format!("{}.png", hex::encode(Sha256::digest(bytes)));
        let path = self.dir.join(&name);
        if !path.exists() {
            std::fs::create_dir_all(&self.dir)?;
            let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(format!("{ARTIFACT_SCHEME}{name}"))
    }

    pub fn load_image(&self, reference: &str) -> Result<DynamicImage, CropError> {
        image::open(self.resolve(reference)).map_err(|e| CropError::Unreadable {
            reference: reference.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn dimensions(&self, reference: &str) -> Result<(u32, u32), CropError> {
        image::image_dimensions(self.resolve(reference)).map_err(|e| CropError::Unreadable {
            reference: reference.to_owned(),
            message: e.to_string(),
        })
    }

    /// Cuts `region` (clamped to the image, outward-rounded to whole pixels)
    /// out of `reference` and stores it as PNG.
    pub fn crop(&self, reference: &str, region: BBox) -> Result<String, CropError> {
        let img = self.load_image(reference)?;
        let (w, h) = img.dimensions();
        let clamp = |v: f64, max: u32| v.clamp(0.0, max as f64) as u32;
        let x1 = clamp(region.x1().floor(), w);
        let y1 = clamp(region.y1().floor(), h);
        let x2 = clamp(region.x2().ceil(), w);
        let y2 = clamp(region.y2().ceil(), h);
        if x2 <= x1 || y2 <= y1 {
            return Err(CropError::EmptyIntersection {
                region,
                width: w,
                height: h,
            });
        }
        let piece = img.crop_imm(x1, y1, x2 - x1, y2 - y1);
        let mut bytes = Vec::new();
        piece
            .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .map_err(|e| CropError::Store(e.to_string()))?;
        self.put_png(&bytes).map_err(|e| CropError::Store(e.to_string()))
    }
}
