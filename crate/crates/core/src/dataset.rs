//! Seeded synthetic detection dataset.
//!
//! Images are single-channel rasters containing 1..=3 textured rectangles on
//! a noisy background. Each class occupies a disjoint band of the log aspect
//! ratio axis, so object shape predicts object class:
//!
//! * `h_bar`  - wide bars, theta in [1.3, 2.1], horizontal stripes
//! * `square` - near-square patches, theta in [-0.3, 0.3], solid fill
//! * `v_bar`  - tall bars, theta in [-2.1, -1.3], vertical stripes
//!
//! Layout on disk: `images/{image_id}.raw`, `annotations.json` (both splits),
//! `manifest.json` (config echo, seed, split membership). The raster format
//! is a 16-byte header (`IMG1` magic, then width / height / channels as
//! little-endian u32) followed by row-major u8 samples.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::geometry::{iou, BBox};
use crate::util::rng_for;
use crate::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"IMG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    HorizontalStripes,
    VerticalStripes,
    Solid,
}

/// Shape and appearance band for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Log aspect ratio range; sampled uniformly.
    pub theta: (f64, f64),
    /// Short-side range as a fraction of the smaller image dimension.
    pub short_side_frac: (f64, f64),
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_w: u32,
    pub image_h: u32,
    pub classes: Vec<ClassSpec>,
    pub max_objects: u32,
    pub train_count: u32,
    pub test_count: u32,
    /// Background gray level.
    pub bg_level: u8,
    /// Uniform per-pixel noise amplitude.
    pub noise: u8,
    /// Stripe width in pixels for striped textures.
    pub stripe_period: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_w: 128,
            image_h: 128,
            classes: vec![
                ClassSpec {
                    name: "h_bar".into(),
                    theta: (1.3, 2.1),
                    short_side_frac: (0.19, 0.22),
                    texture: Texture::HorizontalStripes,
                },
                ClassSpec {
                    name: "square".into(),
                    theta: (-0.3, 0.3),
                    short_side_frac: (0.25, 0.4),
                    texture: Texture::Solid,
                },
                ClassSpec {
                    name: "v_bar".into(),
                    theta: (-2.1, -1.3),
                    short_side_frac: (0.19, 0.22),
                    texture: Texture::VerticalStripes,
                },
            ],
            max_objects: 3,
            train_count: 200,
            test_count: 50,
            bg_level: 40,
            noise: 18,
            stripe_period: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_w < 16 || self.image_h < 16 {
            return Err(Error::InvalidConfig("image must be at least 16x16".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        if self.max_objects == 0 {
            return Err(Error::InvalidConfig("max_objects must be >= 1".into()));
        }
        if self.stripe_period == 0 {
            return Err(Error::InvalidConfig("stripe_period must be >= 1".into()));
        }
        for c in &self.classes {
            if c.theta.0 > c.theta.1 || c.short_side_frac.0 > c.short_side_frac.1 {
                return Err(Error::InvalidConfig(format!(
                    "class `{}` has an empty sampling range",
                    c.name
                )));
            }
            if c.short_side_frac.0 <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "class `{}` short side must be positive",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// 1-based class id for a name (0 is background).
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name).map(|i| i + 1)
    }
}

/// Single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: String,
    pub w: u32,
    pub h: u32,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    /// 1-based class id; 0 is reserved for background.
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub images: BTreeMap<String, Image>,
    pub annotations: Vec<Annotation>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Dataset {
    pub fn annotation(&self, image_id: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.image_id == image_id)
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_ids,
            Split::Test => &self.test_ids,
        }
    }

    pub fn extents(&self, split: Split) -> crate::proposals::ImageExtents {
        self.split_ids(split)
            .iter()
            .map(|id| {
                let img = &self.images[id];
                (id.clone(), (f64::from(img.w), f64::from(img.h)))
            })
            .collect()
    }

    /// Annotations restricted to one split, in split id order.
    pub fn split_annotations(&self, split: Split) -> Vec<&Annotation> {
        self.split_ids(split)
            .iter()
            .map(|id| self.annotation(id).expect("annotation for every image"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

/// Generate the full dataset. Every image draws from its own derived RNG
/// stream, so generation order (or parallelism) cannot change the output.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut images = BTreeMap::new();
    let mut annotations = Vec::new();
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (split, count, ids) in [
        (Split::Train, cfg.train_count, &mut train_ids),
        (Split::Test, cfg.test_count, &mut test_ids),
    ] {
        for i in 0..count {
            let id = format!("{}_{i:04}", split.as_str());
            let (image, annotation) = synth_image(cfg, &id, split, i)?;
            images.insert(id.clone(), image);
            annotations.push(annotation);
            ids.push(id);
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        images,
        annotations,
        train_ids,
        test_ids,
    })
}

fn synth_image(cfg: &SynthConfig, id: &str, split: Split, index: u32) -> Result<(Image, Annotation)> {
    let mut rng = rng_for(cfg.seed, &format!("image/{}/{index}", split.as_str()));
    let (iw, ih) = (f64::from(cfg.image_w), f64::from(cfg.image_h));
    let short_ref = iw.min(ih);
    let margin = 2.0;

    let n_objects = rng.gen_range(1..=cfg.max_objects);
    let mut objects: Vec<(usize, BBox, Texture)> = Vec::new();
    for _ in 0..n_objects {
        let class_idx = rng.gen_range(0..cfg.classes.len());
        let spec = &cfg.classes[class_idx];
        // Up to 25 placement attempts; overlap with already placed objects
        // is capped so labels stay unambiguous. The first object always
        // lands (no overlap constraint applies).
        let mut placed = None;
        for _ in 0..25 {
            let theta = rng.gen_range(spec.theta.0..=spec.theta.1);
            let short = rng.gen_range(spec.short_side_frac.0..=spec.short_side_frac.1) * short_ref;
            let (w, h) = if theta >= 0.0 {
                (short * 2f64.powf(theta), short)
            } else {
                (short, short * 2f64.powf(-theta))
            };
            if w > iw - 2.0 * margin || h > ih - 2.0 * margin {
                continue;
            }
            let x1 = rng.gen_range(margin..=(iw - margin - w));
            let y1 = rng.gen_range(margin..=(ih - margin - h));
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h)?;
            if objects.iter().all(|(_, other, _)| iou(&bbox, other) < 0.15) {
                placed = Some(bbox);
                break;
            }
        }
        if let Some(bbox) = placed {
            objects.push((class_idx + 1, bbox, spec.texture));
        }
    }
    debug_assert!(!objects.is_empty());

    // Render: background, then objects in placement order, then noise.
    let mut pixels = vec![cfg.bg_level; (cfg.image_w * cfg.image_h) as usize];
    for (_, bbox, texture) in &objects {
        fill_object(&mut pixels, cfg, bbox, *texture);
    }
    if cfg.noise > 0 {
        let amp = i32::from(cfg.noise);
        for p in &mut pixels {
            let delta = rng.gen_range(-amp..=amp);
            *p = (i32::from(*p) + delta).clamp(0, 255) as u8;
        }
    }

    let annotation = Annotation {
        image_id: id.to_string(),
        width: cfg.image_w,
        height: cfg.image_h,
        objects: objects
            .iter()
            .map(|(class, bbox, _)| GtObject {
                class: *class,
                bbox: *bbox,
            })
            .collect(),
    };
    let image = Image {
        id: id.to_string(),
        w: cfg.image_w,
        h: cfg.image_h,
        pixels,
    };
    Ok((image, annotation))
}

fn fill_object(pixels: &mut [u8], cfg: &SynthConfig, bbox: &BBox, texture: Texture) {
    let (bright, dim, solid) = (190u8, 110u8, 150u8);
    let period = cfg.stripe_period as f64;
    let w = cfg.image_w as usize;
    let x_lo = bbox.x1().floor().max(0.0) as usize;
    let x_hi = (bbox.x2().ceil() as usize).min(w);
    let y_lo = bbox.y1().floor().max(0.0) as usize;
    let y_hi = (bbox.y2().ceil() as usize).min(cfg.image_h as usize);
    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let cx = px as f64 + 0.5;
            let cy = py as f64 + 0.5;
            if cx < bbox.x1() || cx >= bbox.x2() || cy < bbox.y1() || cy >= bbox.y2() {
                continue;
            }
            let value = match texture {
                Texture::Solid => solid,
                Texture::HorizontalStripes => {
                    let band = ((cy - bbox.y1()) / period).floor() as i64;
                    if band % 2 == 0 {
                        bright
                    } else {
                        dim
                    }
                }
                Texture::VerticalStripes => {
                    let band = ((cx - bbox.x1()) / period).floor() as i64;
                    if band % 2 == 0 {
                        bright
                    } else {
                        dim
                    }
                }
            };
            pixels[py * w + px] = value;
        }
    }
}

// --- persistence ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    image_id: String,
    width: u32,
    height: u32,
    objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    command: String,
    config: SynthConfig,
    splits: SplitIds,
}

#[derive(Serialize, Deserialize)]
struct SplitIds {
    train: Vec<String>,
    test: Vec<String>,
}

pub fn save_raw_image(path: &Path, img: &Image) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(RAW_MAGIC)?;
    f.write_all(&img.w.to_le_bytes())?;
    f.write_all(&img.h.to_le_bytes())?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&img.pixels)?;
    Ok(())
}

pub fn load_raw_image(path: &Path, id: &str) -> Result<Image> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)
        .map_err(|_| Error::Data(format!("{}: truncated header", path.display())))?;
    if &header[0..4] != RAW_MAGIC {
        return Err(Error::Data(format!("{}: bad magic", path.display())));
    }
    let w = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if c != 1 {
        return Err(Error::Data(format!(
            "{}: expected 1 channel, found {c}",
            path.display()
        )));
    }
    let mut pixels = Vec::new();
    f.read_to_end(&mut pixels)?;
    if pixels.len() != (w * h) as usize {
        return Err(Error::Data(format!(
            "{}: expected {} samples, found {}",
            path.display(),
            w * h,
            pixels.len()
        )));
    }
    Ok(Image {
        id: id.to_string(),
        w,
        h,
        pixels,
    })
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    for (id, img) in &ds.images {
        save_raw_image(&images_dir.join(format!("{id}.raw")), img)?;
    }

    let names = ds.config.class_names();
    let records: Vec<AnnotationRecord> = ds
        .annotations
        .iter()
        .map(|a| AnnotationRecord {
            image_id: a.image_id.clone(),
            width: a.width,
            height: a.height,
            objects: a
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    class: names[o.class - 1].clone(),
                    bbox: o.bbox.coords(),
                })
                .collect(),
        })
        .collect();
    write_json(&dir.join("annotations.json"), &records)?;

    let manifest = DatasetManifest {
        command: "synth".into(),
        config: ds.config.clone(),
        splits: SplitIds {
            train: ds.train_ids.clone(),
            test: ds.test_ids.clone(),
        },
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let records: Vec<AnnotationRecord> = read_json(&dir.join("annotations.json"))?;

    let config = manifest.config;
    let mut annotations = Vec::with_capacity(records.len());
    for rec in records {
        let mut objects = Vec::with_capacity(rec.objects.len());
        for o in rec.objects {
            let class = config.class_id(&o.class).ok_or_else(|| {
                Error::Data(format!(
                    "annotations.json: unknown class `{}` on image `{}`",
                    o.class, rec.image_id
                ))
            })?;
            let [x1, y1, x2, y2] = o.bbox;
            objects.push(GtObject {
                class,
                bbox: BBox::new(x1, y1, x2, y2)?,
            });
        }
        annotations.push(Annotation {
            image_id: rec.image_id,
            width: rec.width,
            height: rec.height,
            objects,
        });
    }

    let mut images = BTreeMap::new();
    for a in &annotations {
        let path = dir.join("images").join(format!("{}.raw", a.image_id));
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing image file for `{}` (expected {})",
                a.image_id,
                path.display()
            )));
        }
        images.insert(a.image_id.clone(), load_raw_image(&path, &a.image_id)?);
    }
    Ok(Dataset {
        config,
        images,
        annotations,
        train_ids: manifest.splits.train,
        test_ids: manifest.splits.test,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::aspect_log_ratio;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            train_count: 6,
            test_count: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_image_has_objects_with_class_consistent_theta() {
        let cfg = SynthConfig {
            train_count: 40,
            test_count: 10,
            seed: 3,
            ..Default::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        assert_eq!(ds.train_ids.len(), 40);
        assert_eq!(ds.test_ids.len(), 10);
        for a in &ds.annotations {
            assert!(!a.objects.is_empty(), "image {} has no objects", a.image_id);
            assert!(a.objects.len() <= cfg.max_objects as usize);
            for o in &a.objects {
                let spec = &cfg.classes[o.class - 1];
                let theta = aspect_log_ratio(&o.bbox);
                assert!(
                    theta >= spec.theta.0 - 1e-9 && theta <= spec.theta.1 + 1e-9,
                    "{}: class {} theta {theta} outside [{}, {}]",
                    a.image_id,
                    spec.name,
                    spec.theta.0,
                    spec.theta.1
                );
                let min_side = o.bbox.width().min(o.bbox.height());
                assert!(min_side >= 8.0, "object smaller than 8 px");
                assert!(o.bbox.x1() >= 0.0 && o.bbox.y1() >= 0.0);
                assert!(o.bbox.x2() <= f64::from(cfg.image_w));
                assert!(o.bbox.y2() <= f64::from(cfg.image_h));
            }
        }
    }

    #[test]
    fn class_balance_is_near_uniform() {
        let cfg = SynthConfig {
            train_count: 300,
            test_count: 0,
            seed: 0,
            ..Default::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for a in &ds.annotations {
            for o in &a.objects {
                counts[o.class - 1] += 1;
                total += 1;
            }
        }
        for (i, c) in counts.iter().enumerate() {
            let freq = *c as f64 / total as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() <= 1.0 / 30.0,
                "class {i} frequency {freq} strays from uniform"
            );
        }
    }

    #[test]
    fn save_load_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(&small_cfg()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let ds = synth_dataset(&small_cfg()).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &ds).unwrap();
        save_dataset(d2.path(), &ds).unwrap();
        for name in ["annotations.json", "manifest.json"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between saves");
        }
        let id = &ds.train_ids[0];
        let a = std::fs::read(d1.path().join("images").join(format!("{id}.raw"))).unwrap();
        let b = std::fs::read(d2.path().join("images").join(format!("{id}.raw"))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_image_file_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(&small_cfg()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let victim = &ds.train_ids[2];
        std::fs::remove_file(dir.path().join("images").join(format!("{victim}.raw"))).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains(victim.as_str()), "{err}");
    }

    #[test]
    fn empty_dataset_round_trips() {
        let cfg = SynthConfig {
            train_count: 0,
            test_count: 0,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(&cfg).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert!(back.images.is_empty());
        assert!(back.annotations.is_empty());
    }

    #[test]
    fn raw_image_round_trip_and_errors() {
        let img = Image {
            id: "t".into(),
            w: 4,
            h: 3,
            pixels: (0..12).collect(),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        save_raw_image(f.path(), &img).unwrap();
        let back = load_raw_image(f.path(), "t").unwrap();
        assert_eq!(back, img);

        std::fs::write(f.path(), b"IMG1\x04").unwrap();
        assert!(load_raw_image(f.path(), "t").is_err());
        std::fs::write(f.path(), b"NOPE0000000000000000").unwrap();
        assert!(load_raw_image(f.path(), "t").is_err());
    }
}
