//! Paired-image datasets: on-disk ingestion, a synthetic stick-figure set
//! and batch assembly.
//!
//! A dataset directory holds
//!
//! ```text
//! images/<id>_<pose>.png    8-bit RGB
//! masks/<id>_<pose>.png     optional single-channel person masks
//! annotations.csv           keypoints, one line per image (see `pose`)
//! pairs.csv                 condition,target[,condition_mask,target_mask]
//! ```
//!
//! Every path inside the CSV files is relative to the dataset directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use pona_tensor::ndarray::{Array4, Axis};
use pona_tensor::Array;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PonaError, Result};
use crate::image::{ImageTensor, MaskImage};
use crate::pose::{encode_pose, format_annotations, read_annotations, AnnotationRecord, Joint, KeypointSet, NUM_JOINTS};

pub const PAIRS_FILE: &str = "pairs.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Person identity: the file stem up to the first `_`.
pub fn identity_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.split('_').next().unwrap_or_default().to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub condition_image: PathBuf,
    pub target_image: PathBuf,
    pub condition_keypoints: KeypointSet,
    pub target_keypoints: KeypointSet,
    pub condition_mask: Option<PathBuf>,
    pub target_mask: Option<PathBuf>,
}

impl PairRecord {
    pub fn condition_identity(&self) -> String {
        identity_of(&self.condition_image)
    }

    pub fn target_identity(&self) -> String {
        identity_of(&self.target_image)
    }
}

/// Reads a pair list and its annotation file.
///
/// Image and mask paths are resolved against `root`; referenced images
/// must exist and every keypoint must fit inside its image. Errors name
/// the offending file and 1-based line.
pub fn load_pairs(pair_list: &Path, annotation_file: &Path, root: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(pair_list).map_err(|e| PonaError::io(pair_list, e))?;
    let mut annotations = BTreeMap::new();
    for r in read_annotations(annotation_file)? {
        annotations.insert(r.image.clone(), r);
    }
    let mut dims: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let parse_err = |reason: String| PonaError::Parse {
            path: pair_list.to_path_buf(),
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 && fields.len() != 4 {
            return Err(parse_err(format!("expected 2 or 4 fields, found {}", fields.len())));
        }
        let mut keypoints = Vec::with_capacity(2);
        for name in &fields[..2] {
            let full = root.join(name);
            if !full.is_file() {
                return Err(PonaError::MissingImage {
                    path: pair_list.to_path_buf(),
                    line: lineno,
                    image: full,
                });
            }
            let (w, h) = match dims.get(*name) {
                Some(d) => *d,
                None => {
                    let d = image::image_dimensions(&full).map_err(|source| PonaError::Image {
                        path: full.clone(),
                        source,
                    })?;
                    dims.insert(name.to_string(), d);
                    d
                }
            };
            let record = annotations
                .get(*name)
                .ok_or_else(|| parse_err(format!("no annotation for `{name}`")))?;
            let kp = record
                .to_keypoints(h as usize, w as usize)
                .map_err(|e| parse_err(format!("`{name}`: {e}")))?;
            keypoints.push(kp);
        }
        let masks = if fields.len() == 4 {
            let mut m = Vec::with_capacity(2);
            for name in &fields[2..] {
                let full = root.join(name);
                if !full.is_file() {
                    return Err(PonaError::MissingImage {
                        path: pair_list.to_path_buf(),
                        line: lineno,
                        image: full,
                    });
                }
                m.push(Some(PathBuf::from(name)));
            }
            (m[0].clone(), m[1].clone())
        } else {
            (None, None)
        };
        let target_keypoints = keypoints.pop().expect("two entries");
        let condition_keypoints = keypoints.pop().expect("two entries");
        out.push(PairRecord {
            condition_image: PathBuf::from(fields[0]),
            target_image: PathBuf::from(fields[1]),
            condition_keypoints,
            target_keypoints,
            condition_mask: masks.0,
            target_mask: masks.1,
        });
    }
    Ok(out)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Writes `records` as a pair list plus annotation file readable by
/// [`load_pairs`].
pub fn write_pairs(records: &[PairRecord], pair_list: &Path, annotation_file: &Path) -> Result<()> {
    let mut pairs = String::new();
    let mut seen = BTreeMap::new();
    let mut annotations = Vec::new();
    for r in records {
        let _ = write!(pairs, "{},{}", path_str(&r.condition_image), path_str(&r.target_image));
        if let (Some(a), Some(b)) = (&r.condition_mask, &r.target_mask) {
            let _ = write!(pairs, ",{},{}", path_str(a), path_str(b));
        }
        pairs.push('\n');
        for (image, kp) in [
            (&r.condition_image, &r.condition_keypoints),
            (&r.target_image, &r.target_keypoints),
        ] {
            let key = path_str(image);
            if seen.insert(key.clone(), ()).is_none() {
                annotations.push(AnnotationRecord {
                    image: key,
                    joints: *kp.joints(),
                });
            }
        }
    }
    std::fs::write(pair_list, pairs).map_err(|e| PonaError::io(pair_list, e))?;
    std::fs::write(annotation_file, format_annotations(&annotations)).map_err(|e| PonaError::io(annotation_file, e))
}

/// One decoded image with its keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub image: ImageTensor,
    pub keypoints: KeypointSet,
    pub mask: Option<MaskImage>,
}

impl Sample {
    pub fn identity(&self) -> String {
        identity_of(&self.path)
    }
}

/// Decoded samples and the ordered `(condition, target)` index pairs over
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn from_records(records: &[PairRecord], root: &Path) -> Result<Self> {
        let mut index: BTreeMap<PathBuf, usize> = BTreeMap::new();
        let mut samples: Vec<Sample> = Vec::new();
        let mut pairs = Vec::with_capacity(records.len());
        for r in records {
            let mut ids = [0usize; 2];
            for (slot, (path, kp, mask)) in [
                (&r.condition_image, &r.condition_keypoints, &r.condition_mask),
                (&r.target_image, &r.target_keypoints, &r.target_mask),
            ]
            .into_iter()
            .enumerate()
            {
                if let Some(&i) = index.get(path) {
                    ids[slot] = i;
                    continue;
                }
                let image = ImageTensor::load(&root.join(path))?;
                let mask = match mask {
                    Some(m) => {
                        let m = MaskImage::load(&root.join(m))?;
                        if m.data.shape() != &image.data.shape()[1..] {
                            return Err(PonaError::shape("mask vs image", m.data.shape(), &image.data.shape()[1..]));
                        }
                        Some(m)
                    }
                    None => None,
                };
                index.insert(path.clone(), samples.len());
                ids[slot] = samples.len();
                samples.push(Sample {
                    path: path.clone(),
                    image,
                    keypoints: kp.clone(),
                    mask,
                });
            }
            pairs.push((ids[0], ids[1]));
        }
        Ok(Self { samples, pairs })
    }

    /// Loads `pairs.csv` and `annotations.csv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let records = load_pairs(&dir.join(PAIRS_FILE), &dir.join(ANNOTATIONS_FILE), dir)?;
        Self::from_records(&records, dir)
    }

    /// Writes images, masks and both CSV files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for s in &self.samples {
            let full = dir.join(&s.path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PonaError::io(parent, e))?;
            }
            s.image.save(&full)?;
            if let Some(m) = &s.mask {
                let mp = dir.join(mask_path_for(&s.path));
                if let Some(parent) = mp.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| PonaError::io(parent, e))?;
                }
                m.save(&mp)?;
            }
        }
        write_pairs(&self.records(), &dir.join(PAIRS_FILE), &dir.join(ANNOTATIONS_FILE))
    }

    pub fn records(&self) -> Vec<PairRecord> {
        self.pairs
            .iter()
            .map(|&(c, t)| {
                let (cs, ts) = (&self.samples[c], &self.samples[t]);
                let masks = cs.mask.is_some() && ts.mask.is_some();
                PairRecord {
                    condition_image: cs.path.clone(),
                    target_image: ts.path.clone(),
                    condition_keypoints: cs.keypoints.clone(),
                    target_keypoints: ts.keypoints.clone(),
                    condition_mask: masks.then(|| mask_path_for(&cs.path)),
                    target_mask: masks.then(|| mask_path_for(&ts.path)),
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(height, width)` of the first sample.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.height(), s.image.width()))
    }
}

/// `images/a.png` → `masks/a.png`.
fn mask_path_for(image: &Path) -> PathBuf {
    let file = image.file_name().map(PathBuf::from).unwrap_or_default();
    PathBuf::from("masks").join(file)
}

/// Model inputs for a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `I_c`, `[B, 3, H, W]`.
    pub condition_images: Array,
    /// `[P_c; P_t]`, `[B, 36, H, W]`.
    pub pose_pairs: Array,
    /// `P_t`, `[B, 18, H, W]`.
    pub target_poses: Array,
    /// `I_t`, `[B, 3, H, W]`.
    pub target_images: Array,
    pub pair_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pair_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_indices.is_empty()
    }
}

/// Stacks the pairs at `pair_indices` into one batch.
pub fn assemble_batch(dataset: &Dataset, pair_indices: &[usize], sigma: f64) -> Result<Batch> {
    let (h, w) = dataset
        .image_size()
        .ok_or_else(|| PonaError::config("data", "dataset is empty"))?;
    if pair_indices.is_empty() {
        return Err(PonaError::config("training.batch_size", "batch must contain at least one pair"));
    }
    let b = pair_indices.len();
    let mut cond = Array4::zeros((b, 3, h, w));
    let mut target = Array4::zeros((b, 3, h, w));
    let mut pose_pairs = Array4::zeros((b, 2 * NUM_JOINTS, h, w));
    let mut target_poses = Array4::zeros((b, NUM_JOINTS, h, w));
    let mut heatmaps = BTreeMap::new();
    for (row, &p) in pair_indices.iter().enumerate() {
        let &(c, t) = dataset
            .pairs
            .get(p)
            .ok_or_else(|| PonaError::config("data", format!("pair index {p} out of range")))?;
        let (cs, ts) = (&dataset.samples[c], &dataset.samples[t]);
        for s in [cs, ts] {
            if s.image.data.shape() != [3, h, w] {
                return Err(PonaError::shape("dataset image", s.image.data.shape(), &[3, h, w]));
            }
        }
        for i in [c, t] {
            if let std::collections::btree_map::Entry::Vacant(e) = heatmaps.entry(i) {
                e.insert(encode_pose(&dataset.samples[i].keypoints, sigma)?);
            }
        }
        cond.index_axis_mut(Axis(0), row).assign(&cs.image.data);
        target.index_axis_mut(Axis(0), row).assign(&ts.image.data);
        let (pc, pt) = (&heatmaps[&c], &heatmaps[&t]);
        let mut pair = pose_pairs.index_axis_mut(Axis(0), row);
        pair.slice_mut(pona_tensor::ndarray::s![..NUM_JOINTS, .., ..]).assign(&pc.data);
        pair.slice_mut(pona_tensor::ndarray::s![NUM_JOINTS.., .., ..]).assign(&pt.data);
        target_poses.index_axis_mut(Axis(0), row).assign(&pt.data);
    }
    Ok(Batch {
        condition_images: cond.into_dyn(),
        pose_pairs: pose_pairs.into_dyn(),
        target_poses: target_poses.into_dyn(),
        target_images: target.into_dyn(),
        pair_indices: pair_indices.to_vec(),
    })
}

/// Deterministic epoch-wise shuffling.
///
/// Each epoch is an independent permutation seeded from `(seed, epoch)`,
/// cut into consecutive batches; the last batch of an epoch holds the
/// remainder when `batch_size` does not divide the pair count. The batch
/// for any global step can be computed without replaying earlier steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub num_pairs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSchedule {
    pub fn new(num_pairs: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if num_pairs == 0 {
            return Err(PonaError::config("data", "dataset has no pairs"));
        }
        if batch_size == 0 {
            return Err(PonaError::config("training.batch_size", "must be at least 1"));
        }
        Ok(Self {
            num_pairs,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.num_pairs.div_ceil(self.batch_size)
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.num_pairs).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Pair indices used at zero-based `step`.
    pub fn batch(&self, step: u64) -> Vec<usize> {
        let per = self.batches_per_epoch() as u64;
        let (epoch, k) = (step / per, (step % per) as usize);
        let order = self.epoch_order(epoch);
        let start = k * self.batch_size;
        order[start..(start + self.batch_size).min(self.num_pairs)].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub poses_per_identity: usize,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_identities: 8,
            poses_per_identity: 2,
            image_size: [32, 16],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(PonaError::config("synthetic.num_identities", "must be at least 1"));
        }
        if self.poses_per_identity < 2 {
            return Err(PonaError::config("synthetic.poses_per_identity", "need at least 2 poses to form pairs"));
        }
        let [h, w] = self.image_size;
        if h < 16 || w < 8 {
            return Err(PonaError::config("synthetic.image_size", "must be at least 16x8"));
        }
        Ok(())
    }

    /// Ordered same-identity pairs the dataset will contain.
    pub fn num_pairs(&self) -> usize {
        self.num_identities * self.poses_per_identity * (self.poses_per_identity - 1)
    }
}

/// Limb colours of one synthetic identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColorSignature {
    pub head: [u8; 3],
    pub torso: [u8; 3],
    pub arms: [u8; 3],
    pub legs: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub signatures: Vec<ColorSignature>,
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    // bright enough to stand out from the black background
    loop {
        let c = [rng.random_range(0..=255u8), rng.random_range(0..=255u8), rng.random_range(0..=255u8)];
        if c.iter().map(|&v| v as u32).max().unwrap_or(0) >= 128 {
            return c;
        }
    }
}

/// Joint coordinates of a randomized standing figure, in pixels.
fn random_pose(rng: &mut ChaCha8Rng, h: usize, w: usize) -> [(f64, f64); NUM_JOINTS] {
    let (wf, hf) = (w as f64, h as f64);
    let at = |u: f64, v: f64| (u * wf, v * hf);
    let dx = rng.random_range(-0.08..0.08) * wf;
    let dy = rng.random_range(-0.03..0.03) * hf;
    let mut p = [(0.0, 0.0); NUM_JOINTS];
    p[0] = at(0.5, 0.12);
    p[1] = at(0.5, 0.24);
    p[2] = at(0.3, 0.26);
    p[5] = at(0.7, 0.26);
    p[8] = at(0.38, 0.56);
    p[11] = at(0.62, 0.56);
    p[14] = at(0.45, 0.1);
    p[15] = at(0.55, 0.1);
    p[16] = at(0.4, 0.12);
    p[17] = at(0.6, 0.12);
    // angles from straight down; positive swings away from the body
    let limb = |from: (f64, f64), angle: f64, len: f64, side: f64| {
        (from.0 + side * angle.sin() * len * wf, from.1 + angle.cos() * len * hf)
    };
    for (shoulder, elbow, wrist, side) in [(2, 3, 4, -1.0), (5, 6, 7, 1.0)] {
        let upper = rng.random_range(-0.3..1.6);
        let lower = upper + rng.random_range(-0.9..0.9);
        p[elbow] = limb(p[shoulder], upper, 0.16, side);
        p[wrist] = limb(p[elbow], lower, 0.14, side);
    }
    for (hip, knee, ankle, side) in [(8, 9, 10, -1.0), (11, 12, 13, 1.0)] {
        let upper = rng.random_range(-0.2..0.6);
        let lower = upper + rng.random_range(-0.5..0.3);
        p[knee] = limb(p[hip], upper, 0.2, side);
        p[ankle] = limb(p[knee], lower, 0.2, side);
    }
    p.map(|(x, y)| {
        (
            (x + dx).round().clamp(0.0, wf - 1.0),
            (y + dy).round().clamp(0.0, hf - 1.0),
        )
    })
}

const ARMS: [(usize, usize); 5] = [(2, 5), (2, 3), (3, 4), (5, 6), (6, 7)];
const LEGS: [(usize, usize); 5] = [(8, 11), (8, 9), (9, 10), (11, 12), (12, 13)];

fn paint_disc(img: &mut RgbImage, mask: &mut GrayImage, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let ri = r.ceil() as i64;
    for y in (cy as i64 - ri)..=(cy as i64 + ri) {
        for x in (cx as i64 - ri)..=(cx as i64 + ri) {
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let (ddx, ddy) = (x as f64 - cx, y as f64 - cy);
            if ddx * ddx + ddy * ddy <= r * r + 1e-9 {
                img.put_pixel(x as u32, y as u32, Rgb(color));
                mask.put_pixel(x as u32, y as u32, Luma([255]));
            }
        }
    }
}

fn paint_segment(img: &mut RgbImage, mask: &mut GrayImage, a: (f64, f64), b: (f64, f64), r: f64, color: [u8; 3]) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        paint_disc(img, mask, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), r, color);
    }
}

/// Draws the figure for `joints` and returns the image with its mask.
pub fn render_stick_figure(
    joints: &[(f64, f64); NUM_JOINTS],
    signature: &ColorSignature,
    height: usize,
    width: usize,
) -> (RgbImage, GrayImage) {
    let mut img = RgbImage::new(width as u32, height as u32);
    let mut mask = GrayImage::new(width as u32, height as u32);
    let r = (width as f64 / 16.0).max(1.0);
    let hip_mid = ((joints[8].0 + joints[11].0) / 2.0, (joints[8].1 + joints[11].1) / 2.0);
    paint_segment(&mut img, &mut mask, joints[1], hip_mid, r, signature.torso);
    for (a, b) in LEGS {
        paint_segment(&mut img, &mut mask, joints[a], joints[b], r, signature.legs);
    }
    for (a, b) in ARMS {
        paint_segment(&mut img, &mut mask, joints[a], joints[b], r, signature.arms);
    }
    paint_segment(&mut img, &mut mask, joints[1], joints[0], r, signature.head);
    let head_r = (width as f64 * 0.12).max(2.0);
    paint_disc(&mut img, &mut mask, joints[0].0, joints[0].1, head_r, signature.head);
    for &e in &joints[14..] {
        paint_disc(&mut img, &mut mask, e.0, e.1, r * 0.5, signature.head);
    }
    (img, mask)
}

/// Renders `num_identities × poses_per_identity` stick figures and pairs
/// every two distinct poses of the same identity in both directions.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let [h, w] = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut signatures: Vec<ColorSignature> = Vec::with_capacity(spec.num_identities);
    while signatures.len() < spec.num_identities {
        let sig = ColorSignature {
            head: random_color(&mut rng),
            torso: random_color(&mut rng),
            arms: random_color(&mut rng),
            legs: random_color(&mut rng),
        };
        if !signatures.contains(&sig) {
            signatures.push(sig);
        }
    }
    let mut samples = Vec::new();
    let mut pairs = Vec::new();
    for (id, sig) in signatures.iter().enumerate() {
        let first = samples.len();
        for pose in 0..spec.poses_per_identity {
            let coords = random_pose(&mut rng, h, w);
            let (img, mask) = render_stick_figure(&coords, sig, h, w);
            let joints = coords.map(|(x, y)| Joint::visible(x, y));
            samples.push(Sample {
                path: PathBuf::from(format!("images/{id:04}_p{pose:02}.png")),
                image: ImageTensor::from_rgb8(&img),
                keypoints: KeypointSet::new(joints, h, w)?,
                mask: Some(MaskImage::from_luma8(&mask)),
            });
        }
        for a in 0..spec.poses_per_identity {
            for b in 0..spec.poses_per_identity {
                if a != b {
                    pairs.push((first + a, first + b));
                }
            }
        }
    }
    Ok(SyntheticDataset {
        dataset: Dataset { samples, pairs },
        signatures,
    })
}
