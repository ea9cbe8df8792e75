//! Synthetic shapes corpus: generation, on-disk format, loading and planted
//! label noise.
//!
//! On-disk layout, one directory per split:
//!
//! ```text
//! <root>/train/manifest.txt
//! <root>/train/<id>.png        RGB8 image
//! <root>/train/<id>.mask.png   L8 mask, 0 background / 255 foreground
//! <root>/train/<id>.attr.txt   space separated 0/1 attribute bits
//! <root>/test/...
//! ```
//!
//! The manifest is a line-oriented `key=value` file; each record contributes a
//! `record=<id> <class_id>` line.

mod shapes;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

pub use shapes::{
    classify_pixel, inside, render, Factors, Placement, Region, ShapeSpec, COLOR_NAMES, PALETTE,
    SHAPE_NAMES, SIZE_NAMES,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_FORMAT: &str = "attrgan-corpus";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn other(self) -> Split {
        match self {
            Split::Train => Split::Test,
            Split::Test => Split::Train,
        }
    }

    pub fn dir(self, root: &Path) -> PathBuf {
        root.join(self.name())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// One training instance. `image` is `[3, h, w]` in `[-1, 1]`, `mask` is
/// `[h, w]` with entries in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
    pub attributes: Vec<u8>,
    pub class_id: usize,
}

impl Sample {
    pub fn foreground_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub image_size: usize,
    pub class_ids: Vec<usize>,
    pub sample_count: usize,
    pub attribute_names: Vec<String>,
    /// `(id, class_id)` in storage order.
    pub records: Vec<(String, usize)>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = format!(
            "format={MANIFEST_FORMAT}\nversion={MANIFEST_VERSION}\nsplit={}\nimage_size={}\nclass_ids={}\nsample_count={}\nattribute_names={}\n",
            self.split,
            self.image_size,
            join(&self.class_ids),
            self.sample_count,
            self.attribute_names.join(" ")
        );
        for (id, class) in &self.records {
            s.push_str(&format!("record={id} {class}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Validation(format!("manifest: {m}"));
        let mut split = None;
        let mut image_size = None;
        let mut class_ids = None;
        let mut sample_count = None;
        let mut attribute_names = None;
        let mut records = Vec::new();
        let mut format_ok = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad number `{v}`")));
            match key {
                "format" => format_ok = value == MANIFEST_FORMAT,
                "version" => {
                    if value != MANIFEST_VERSION.to_string() {
                        return Err(bad(format!("unsupported version {value}")));
                    }
                }
                "split" => split = Some(value.parse::<Split>()?),
                "image_size" => image_size = Some(num(value)?),
                "class_ids" => {
                    class_ids = Some(value.split_whitespace().map(num).collect::<Result<Vec<_>>>()?)
                }
                "sample_count" => sample_count = Some(num(value)?),
                "attribute_names" => {
                    attribute_names = Some(value.split_whitespace().map(String::from).collect())
                }
                "record" => {
                    let (id, class) = value
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("malformed record `{value}`")))?;
                    records.push((id.to_string(), num(class.trim())?));
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        if !format_ok {
            return Err(bad("missing or wrong format tag".into()));
        }
        let m = DatasetManifest {
            split: split.ok_or_else(|| bad("missing split".into()))?,
            image_size: image_size.ok_or_else(|| bad("missing image_size".into()))?,
            class_ids: class_ids.ok_or_else(|| bad("missing class_ids".into()))?,
            sample_count: sample_count.ok_or_else(|| bad("missing sample_count".into()))?,
            attribute_names: attribute_names.ok_or_else(|| bad("missing attribute_names".into()))?,
            records,
        };
        if m.sample_count != m.records.len() {
            return Err(bad(format!(
                "sample_count {} but {} records",
                m.sample_count,
                m.records.len()
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn num_attributes(&self) -> usize {
        self.manifest.attribute_names.len()
    }

    /// Label matrix `N x A`.
    pub fn labels(&self) -> Vec<Vec<u8>> {
        self.samples.iter().map(|s| s.attributes.clone()).collect()
    }

    pub fn with_labels(&self, labels: &[Vec<u8>]) -> Dataset {
        assert_eq!(labels.len(), self.samples.len());
        let mut out = self.clone();
        for (s, l) in out.samples.iter_mut().zip(labels) {
            s.attributes = l.clone();
        }
        out
    }

    /// Builds a dataset (and its manifest) from samples in storage order.
    pub fn from_samples(split: Split, spec_size: usize, names: Vec<String>, samples: Vec<Sample>) -> Self {
        let class_ids: BTreeSet<usize> = samples.iter().map(|s| s.class_id).collect();
        Dataset {
            manifest: DatasetManifest {
                split,
                image_size: spec_size,
                class_ids: class_ids.into_iter().collect(),
                sample_count: samples.len(),
                attribute_names: names,
                records: samples.iter().map(|s| (s.id.clone(), s.class_id)).collect(),
            },
            samples,
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Both splits of a generated corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: ShapeSpec,
    pub train: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn sample_count(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn pixel_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn unit_to_pixel(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn sample_placement(spec: &ShapeSpec, f: &Factors, rng: &mut impl Rng) -> Placement {
    let s = spec.image_size as f64;
    let scale = s / 64.0;
    let radius = Placement::base_radius(spec, f.size) + rng.gen_range(-1.0..1.0) * scale;
    let slack = (s / 2.0 - radius - 2.0 * scale).max(0.0).min(8.0 * scale);
    let cx = s / 2.0 + rng.gen_range(-slack..=slack);
    let cy = s / 2.0 + rng.gen_range(-slack..=slack);
    let grey: i32 = rng.gen_range(150..=215);
    let mut background = [0u8; 3];
    for c in background.iter_mut() {
        *c = (grey + rng.gen_range(-8..=8)).clamp(0, 255) as u8;
    }
    Placement { cx, cy, radius, background }
}

fn sample_from_raster(spec: &ShapeSpec, id: String, class_id: usize, attributes: Vec<u8>, rgb: &[u8], mask: &[u8]) -> Sample {
    let s = spec.image_size;
    let mut img = vec![0.0; 3 * s * s];
    for p in 0..s * s {
        for c in 0..3 {
            img[c * s * s + p] = pixel_to_unit(rgb[p * 3 + c]);
        }
    }
    Sample {
        id,
        image: Tensor::new(&[3, s, s], img),
        mask: Tensor::new(&[s, s], mask.iter().map(|&m| m as f64).collect()),
        attributes,
        class_id,
    }
}

/// Renders `n_per_class` samples for every class and splits them so the first
/// `train_classes` class ids form the training split and the rest the test
/// split.
pub fn synthesize(spec: &ShapeSpec, n_per_class: usize, train_classes: usize, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Argument("n_per_class must be at least 1".into()));
    }
    if train_classes == 0 || train_classes >= spec.num_classes {
        return Err(Error::Argument(format!(
            "train class count {train_classes} must leave both splits non-empty out of {}",
            spec.num_classes
        )));
    }
    let names = spec.attribute_names();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class_id in 0..spec.num_classes {
        let f = spec.class_factors(class_id);
        let attrs = spec.attributes_of(&f);
        for n in 0..n_per_class {
            let mut rng = stream(seed, Purpose::Corpus, (class_id * 1_000_000 + n) as u64);
            let p = sample_placement(spec, &f, &mut rng);
            let (rgb, mask) = render(spec, &f, &p);
            let id = format!("c{class_id:03}_{n:04}");
            let sample = sample_from_raster(spec, id, class_id, attrs.clone(), &rgb, &mask);
            if class_id < train_classes {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        train: Dataset::from_samples(Split::Train, spec.image_size, names.clone(), train),
        test: Dataset::from_samples(Split::Test, spec.image_size, names, test),
    })
}

/// Generates the corpus and writes both splits under `root`.
pub fn generate_synthetic_dataset(
    spec: &ShapeSpec,
    n_per_class: usize,
    train_classes: usize,
    seed: u64,
    root: &Path,
) -> Result<Corpus> {
    let corpus = synthesize(spec, n_per_class, train_classes, seed)?;
    write_dataset(&corpus.train, &Split::Train.dir(root))?;
    write_dataset(&corpus.test, &Split::Test.dir(root))?;
    Ok(corpus)
}

pub fn image_to_rgb8(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.dim(1), image.dim(2));
    let mut out = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for c in 0..3 {
            out.push(unit_to_pixel(image.data()[c * h * w + p]));
        }
    }
    out
}

pub fn save_rgb_png(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.dim(1), image.dim(2));
    image::save_buffer(path, &image_to_rgb8(image), w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn load_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = pixel_to_unit(raw[p * 3 + c]);
        }
    }
    Ok(Tensor::new(&[3, h, w], data))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn attributes_to_text(attrs: &[u8]) -> String {
    let mut s = attrs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

/// Writes a split directory: images, masks, attribute files and manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &ds.samples {
        save_rgb_png(&dir.join(format!("{}.png", s.id)), &s.image)?;
        let (h, w) = (s.mask.dim(0), s.mask.dim(1));
        let mask: Vec<u8> = s.mask.data().iter().map(|&m| if m == 1.0 { 255 } else { 0 }).collect();
        let mpath = dir.join(format!("{}.mask.png", s.id));
        image::save_buffer(&mpath, &mask, w as u32, h as u32, image::ColorType::L8).map_err(|e| {
            Error::Image {
                path: mpath.clone(),
                message: e.to_string(),
            }
        })?;
        write_attributes(dir, s)?;
    }
    write_text(&dir.join(MANIFEST_FILE), &ds.manifest.to_text())
}

fn write_attributes(dir: &Path, s: &Sample) -> Result<()> {
    write_text(&dir.join(format!("{}.attr.txt", s.id)), &attributes_to_text(&s.attributes))
}

/// Writes a copy of `ds` whose attribute files carry `ds`'s (possibly edited)
/// labels; images and masks are copied from `source_dir` byte for byte.
pub fn write_relabelled(ds: &Dataset, source_dir: &Path, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &ds.samples {
        for suffix in ["png", "mask.png"] {
            let name = format!("{}.{suffix}", s.id);
            let (from, to) = (source_dir.join(&name), dir.join(&name));
            fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
        }
        write_attributes(dir, s)?;
    }
    write_text(&dir.join(MANIFEST_FILE), &ds.manifest.to_text())
}

fn load_record(dir: &Path, id: &str, class_id: usize, num_attributes: usize, size: usize) -> Result<Sample> {
    let load_err = |m: String| Error::Load {
        id: id.to_string(),
        message: m,
    };
    let img_path = dir.join(format!("{id}.png"));
    let mask_path = dir.join(format!("{id}.mask.png"));
    let attr_path = dir.join(format!("{id}.attr.txt"));
    for p in [&img_path, &mask_path, &attr_path] {
        if !p.is_file() {
            return Err(load_err(format!("missing file {}", p.display())));
        }
    }
    let image = load_rgb_png(&img_path).map_err(|e| load_err(e.to_string()))?;
    if image.dim(1) != size || image.dim(2) != size {
        return Err(load_err(format!("image is {}x{}, expected {size}", image.dim(2), image.dim(1))));
    }
    let mask_img = image::open(&mask_path)
        .map_err(|e| load_err(format!("mask: {e}")))?
        .to_luma8();
    if mask_img.width() as usize != size || mask_img.height() as usize != size {
        return Err(load_err("mask size differs from image".into()));
    }
    let mut mask = Vec::with_capacity(size * size);
    for &v in mask_img.as_raw() {
        match v {
            0 => mask.push(0.0),
            255 => mask.push(1.0),
            other => return Err(load_err(format!("mask value {other} is not binary"))),
        }
    }
    let text = fs::read_to_string(&attr_path).map_err(|e| load_err(e.to_string()))?;
    let attributes = text
        .split_whitespace()
        .map(|t| match t {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(load_err(format!("attribute token `{other}` is not 0/1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    if attributes.len() != num_attributes {
        return Err(load_err(format!(
            "{} attributes, manifest declares {num_attributes}",
            attributes.len()
        )));
    }
    Ok(Sample {
        id: id.to_string(),
        image,
        mask: Tensor::new(&[size, size], mask),
        attributes,
        class_id,
    })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetManifest::parse(&text)
}

/// Loads one split from `dir` without cross-split checks.
pub fn load_split_dir(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let n_attr = manifest.attribute_names.len();
    let samples = manifest
        .records
        .iter()
        .map(|(id, class)| load_record(dir, id, *class, n_attr, manifest.image_size))
        .collect::<Result<Vec<_>>>()?;
    let declared: BTreeSet<usize> = manifest.class_ids.iter().copied().collect();
    if let Some(s) = samples.iter().find(|s| !declared.contains(&s.class_id)) {
        return Err(Error::Validation(format!(
            "record {} has undeclared class {}",
            s.id, s.class_id
        )));
    }
    Ok(Dataset { manifest, samples })
}

pub fn check_disjoint(a: &DatasetManifest, b: &DatasetManifest) -> Result<()> {
    let sa: BTreeSet<_> = a.class_ids.iter().collect();
    let shared: Vec<_> = b.class_ids.iter().filter(|c| sa.contains(c)).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} and {} splits share classes {shared:?}",
            a.split, b.split
        )))
    }
}

/// Loads `split` from `root/<split>`, verifying every record and that the
/// sibling split (when present) has a disjoint class set.
pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let ds = load_split_dir(&split.dir(root))?;
    if ds.manifest.split != split {
        return Err(Error::Validation(format!(
            "directory {} holds a {} manifest",
            split.dir(root).display(),
            ds.manifest.split
        )));
    }
    let other = split.other().dir(root);
    if other.join(MANIFEST_FILE).is_file() {
        check_disjoint(&ds.manifest, &read_manifest(&other)?)?;
    }
    Ok(ds)
}

/// Exact positions of planted flips, `(sample index, attribute index)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlipLog {
    pub ids: Vec<String>,
    pub flips: Vec<(usize, usize)>,
}

impl FlipLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,attribute\n");
        for &(i, a) in &self.flips {
            s.push_str(&format!("{},{a}\n", self.ids[i]));
        }
        s
    }

    pub fn is_flipped(&self) -> BTreeSet<(usize, usize)> {
        self.flips.iter().copied().collect()
    }
}

/// Flips every attribute bit independently with probability `flip_rate`.
pub fn corrupt_attributes(ds: &Dataset, flip_rate: f64, seed: u64) -> Result<(Dataset, FlipLog)> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::Argument(format!("flip rate {flip_rate} outside [0, 1]")));
    }
    let mut out = ds.clone();
    let mut log = FlipLog {
        ids: ds.samples.iter().map(|s| s.id.clone()).collect(),
        flips: Vec::new(),
    };
    for (i, s) in out.samples.iter_mut().enumerate() {
        let mut rng = stream(seed, Purpose::Corruption, i as u64);
        for (a, bit) in s.attributes.iter_mut().enumerate() {
            if rng.gen::<f64>() < flip_rate {
                *bit ^= 1;
                log.flips.push((i, a));
            }
        }
    }
    Ok((out, log))
}

/// Fraction of label bits that agree with `truth`, per attribute.
pub fn agreement_per_attribute(labels: &[Vec<u8>], truth: &[Vec<u8>]) -> Vec<f64> {
    assert_eq!(labels.len(), truth.len());
    let a = truth.first().map_or(0, |t| t.len());
    (0..a)
        .map(|j| {
            let same = labels.iter().zip(truth).filter(|(l, t)| l[j] == t[j]).count();
            same as f64 / labels.len().max(1) as f64
        })
        .collect()
}

/// Downsamples a binary mask by nearest-neighbour sampling.
pub fn resize_mask_nearest(mask: &Tensor, size: usize) -> Tensor {
    let (h, w) = (mask.dim(0), mask.dim(1));
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = ((y as f64 + 0.5) * h as f64 / size as f64) as usize;
        for x in 0..size {
            let sx = ((x as f64 + 0.5) * w as f64 / size as f64) as usize;
            out.push(mask.data()[sy.min(h - 1) * w + sx.min(w - 1)]);
        }
    }
    Tensor::new(&[size, size], out)
}

/// Box-filter downsampling of a `[c, h, w]` image by an integer factor.
pub fn downsample_image(image: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let (ho, wo) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += image.data()[(ch * h + y * factor + dy) * w + x * factor + dx];
                    }
                }
                out[(ch * ho + y) * wo + x] = acc / norm;
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_affine_map_round_trips() {
        for v in 0..=255u8 {
            assert_eq!(unit_to_pixel(pixel_to_unit(v)), v);
        }
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
    }

    #[test]
    fn manifest_text_round_trips() {
        let corpus = synthesize(&ShapeSpec::new(64, 4), 2, 3, 1).unwrap();
        let m = &corpus.train.manifest;
        assert_eq!(&DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn manifest_count_mismatch_is_rejected() {
        let corpus = synthesize(&ShapeSpec::new(64, 4), 2, 3, 1).unwrap();
        let text = corpus.train.manifest.to_text().replace("sample_count=6", "sample_count=7");
        assert!(DatasetManifest::parse(&text).is_err());
    }

    #[test]
    fn masks_are_binary_and_nonempty() {
        let corpus = synthesize(&ShapeSpec::new(64, 6), 3, 4, 2).unwrap();
        for s in corpus.train.iter().chain(corpus.test.iter()) {
            assert!(s.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
            assert!(s.foreground_pixels() > 0);
            assert!(s.image.all_finite());
        }
    }

    #[test]
    fn zero_and_full_flip_rates() {
        let corpus = synthesize(&ShapeSpec::new(64, 4), 3, 3, 3).unwrap();
        let (same, log) = corrupt_attributes(&corpus.train, 0.0, 9).unwrap();
        assert_eq!(same, corpus.train);
        assert!(log.flips.is_empty());
        let (inv, log) = corrupt_attributes(&corpus.train, 1.0, 9).unwrap();
        assert_eq!(log.flips.len(), corpus.train.len() * 19);
        for (a, b) in inv.iter().zip(corpus.train.iter()) {
            assert!(a.attributes.iter().zip(&b.attributes).all(|(x, y)| x ^ y == 1));
        }
        assert!(corrupt_attributes(&corpus.train, 1.5, 0).is_err());
    }

    #[test]
    fn nearest_resize_keeps_binary_values() {
        let corpus = synthesize(&ShapeSpec::new(64, 2), 1, 1, 4).unwrap();
        let m = resize_mask_nearest(&corpus.train.samples[0].mask, 16);
        assert_eq!(m.shape(), &[16, 16]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.sum() > 0.0);
    }
}
