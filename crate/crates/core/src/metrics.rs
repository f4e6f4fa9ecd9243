//! Image-quality and pose-alignment metrics.
//!
//! All image metrics take `[3, H, W]` tensors in `[-1, 1]`. Masked
//! variants composite both images over a mid-gray background (0) outside
//! the person mask first.

use std::fmt::{self, Write as _};

use pona_tensor::ndarray::{Array2, Axis};
use pona_tensor::{Binding, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{PonaError, Result};
use crate::image::{unstack_image, ImageTensor, MaskImage};
use crate::model::PonaModel;
use crate::pose::{KeypointSet, NECK, NOSE, NUM_JOINTS};

/// Background value used by the masked metrics.
pub const MASK_BACKGROUND: f64 = 0.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Peak-to-peak range of `[-1, 1]` images.
pub const PSNR_MAX: f64 = 2.0;
pub const DEFAULT_IS_SPLITS: usize = 10;
/// PCKh threshold as a fraction of the head segment.
pub const PCKH_ALPHA: f64 = 0.5;

fn same_size(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.data.shape() != b.data.shape() {
        return Err(PonaError::shape("image pair", a.data.shape(), b.data.shape()));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps; the window shrinks to the largest odd
/// size that fits images smaller than 11 pixels.
fn gaussian_window(limit: usize) -> Vec<f64> {
    let mut size = SSIM_WINDOW.min(limit);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable valid-mode filtering.
fn filter_valid(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..n).map(|t| k[t] * x[[i, j + t]]).sum::<f64>();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..n).map(|t| k[t] * rows[[i + t, j]]).sum::<f64>();
        }
    }
    out
}

/// Windowed structural similarity, averaged over windows and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_size(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h == 0 || w == 0 {
        return Err(PonaError::Metric("empty image".into()));
    }
    let k = gaussian_window(h.min(w));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x = a.data.index_axis(Axis(0), c).mapv(|v| (v + 1.0) / 2.0);
        let y = b.data.index_axis(Axis(0), c).mapv(|v| (v + 1.0) / 2.0);
        let mx = filter_valid(&x, &k);
        let my = filter_valid(&y, &k);
        let sxx = filter_valid(&(&x * &x), &k);
        let syy = filter_valid(&(&y * &y), &k);
        let sxy = filter_valid(&(&x * &y), &k);
        for ((((mx, my), sxx), syy), sxy) in mx.iter().zip(&my).zip(&sxx).zip(&syy).zip(&sxy) {
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn mask_ssim(a: &ImageTensor, b: &ImageTensor, mask: &MaskImage) -> Result<f64> {
    same_size(a, b)?;
    ssim(&a.composite(mask, MASK_BACKGROUND)?, &b.composite(mask, MASK_BACKGROUND)?)
}

/// Peak signal-to-noise ratio; identical images have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Decibels(f64),
    Infinite,
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Self::Infinite
        } else {
            Self::Decibels(10.0 * (PSNR_MAX * PSNR_MAX / mse).log10())
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Decibels(v) => write!(f, "{v:.3}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

fn mse(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<Psnr> {
    same_size(a, b)?;
    Ok(Psnr::from_mse(mse(a, b)))
}

/// Source of class posteriors for the inception score.
pub trait ClassifierBackend {
    fn name(&self) -> &str;
    fn num_labels(&self) -> usize;
    /// A probability vector of length [`ClassifierBackend::num_labels`].
    fn classify(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// Keypoint detector used by PCKh.
pub trait PoseEstimatorBackend {
    fn name(&self) -> &str;
    fn estimate(&self, image: &ImageTensor) -> Result<KeypointSet>;
}

/// Classifies an image by its coarse colour histogram: each pixel votes
/// for one of 8 labels given by the signs of its three channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorHistogramClassifier {
    /// Additive smoothing per label.
    pub smoothing: f64,
}

impl Default for ColorHistogramClassifier {
    fn default() -> Self {
        Self { smoothing: 1e-3 }
    }
}

impl ClassifierBackend for ColorHistogramClassifier {
    fn name(&self) -> &str {
        "histogram"
    }

    fn num_labels(&self) -> usize {
        8
    }

    fn classify(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let mut counts = [self.smoothing; 8];
        let (h, w) = (image.height(), image.width());
        for y in 0..h {
            for x in 0..w {
                let bit = |c: usize| usize::from(image.data[[c, y, x]] > 0.0);
                counts[bit(0) * 4 + bit(1) * 2 + bit(2)] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        Ok(counts.iter().map(|c| c / total).collect())
    }
}

/// Returns the keypoints of the closest (L2) reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestAnnotationEstimator {
    references: Vec<(ImageTensor, KeypointSet)>,
}

impl NearestAnnotationEstimator {
    pub fn new(references: Vec<(ImageTensor, KeypointSet)>) -> Result<Self> {
        if references.is_empty() {
            return Err(PonaError::Metric("pose estimator needs at least one reference".into()));
        }
        Ok(Self { references })
    }

    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Self::new(
            dataset
                .samples
                .iter()
                .map(|s| (s.image.clone(), s.keypoints.clone()))
                .collect(),
        )
    }
}

impl PoseEstimatorBackend for NearestAnnotationEstimator {
    fn name(&self) -> &str {
        "nearest"
    }

    fn estimate(&self, image: &ImageTensor) -> Result<KeypointSet> {
        let mut best: Option<(f64, &KeypointSet)> = None;
        for (reference, kp) in &self.references {
            if reference.data.shape() != image.data.shape() {
                continue;
            }
            let d = mse(reference, image);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, kp));
            }
        }
        best.map(|(_, kp)| kp.clone())
            .ok_or_else(|| PonaError::Metric("no reference image of matching size".into()))
    }
}

pub fn classifier_by_name(name: &str) -> Result<Box<dyn ClassifierBackend>> {
    match name {
        "histogram" => Ok(Box::new(ColorHistogramClassifier::default())),
        other => Err(PonaError::config(
            "backend-classifier",
            format!("unknown classifier `{other}` (available: histogram)"),
        )),
    }
}

/// Mean and population standard deviation over splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InceptionScore {
    pub mean: f64,
    pub std: f64,
}

fn check_posterior(p: &[f64], labels: usize) -> Result<()> {
    if p.len() != labels {
        return Err(PonaError::Metric(format!("classifier returned {} probabilities for {labels} labels", p.len())));
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| v.is_nan() || *v < 0.0) || (total - 1.0).abs() > 1e-5 {
        return Err(PonaError::Metric(format!("classifier output is not a distribution (sum {total})")));
    }
    Ok(())
}

/// `exp(E_x KL(p(y|x) || p(y)))` per split, averaged over splits.
///
/// `splits` is capped at the number of images.
pub fn inception_score(images: &[ImageTensor], classifier: &dyn ClassifierBackend, splits: usize) -> Result<InceptionScore> {
    if images.is_empty() {
        return Err(PonaError::Metric("inception score of an empty set".into()));
    }
    if splits == 0 {
        return Err(PonaError::Metric("splits must be at least 1".into()));
    }
    let labels = classifier.num_labels();
    let mut posteriors = Vec::with_capacity(images.len());
    for img in images {
        let p = classifier.classify(img)?;
        check_posterior(&p, labels)?;
        posteriors.push(p);
    }
    let n = posteriors.len();
    let splits = splits.min(n);
    let mut scores = Vec::with_capacity(splits);
    for k in 0..splits {
        let part = &posteriors[k * n / splits..(k + 1) * n / splits];
        let mut marginal = vec![0.0; labels];
        for p in part {
            for (m, v) in marginal.iter_mut().zip(p) {
                *m += v / part.len() as f64;
            }
        }
        let mean_kl: f64 = part
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&marginal)
                    .filter(|(v, _)| **v > 0.0)
                    .map(|(v, m)| v * (v / m).ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / part.len() as f64;
        scores.push(mean_kl.max(0.0).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok(InceptionScore { mean, std: var.sqrt() })
}

pub fn mask_is(
    images: &[ImageTensor],
    masks: &[MaskImage],
    classifier: &dyn ClassifierBackend,
    splits: usize,
) -> Result<InceptionScore> {
    if images.len() != masks.len() {
        return Err(PonaError::shape("images vs masks", &[images.len()], &[masks.len()]));
    }
    let masked = images
        .iter()
        .zip(masks)
        .map(|(i, m)| i.composite(m, MASK_BACKGROUND))
        .collect::<Result<Vec<_>>>()?;
    inception_score(&masked, classifier, splits)
}

/// Correct and evaluated joint counts for one keypoint pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PckhCount {
    pub correct: usize,
    pub total: usize,
}

impl PckhCount {
    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Counts target-visible joints whose prediction lies within half the
/// target's nose-neck distance. Joints the prediction misses count as
/// wrong.
pub fn pckh_count(generated: &KeypointSet, target: &KeypointSet) -> Result<PckhCount> {
    if (generated.height(), generated.width()) != (target.height(), target.width()) {
        return Err(PonaError::shape(
            "keypoint image sizes",
            &[generated.height(), generated.width()],
            &[target.height(), target.width()],
        ));
    }
    let t = target.joints();
    let (nose, neck) = (t[NOSE], t[NECK]);
    if !nose.visible || !neck.visible {
        return Err(PonaError::DegenerateHead("nose or neck missing in the target".into()));
    }
    let head = ((nose.x - neck.x).powi(2) + (nose.y - neck.y).powi(2)).sqrt();
    if head == 0.0 {
        return Err(PonaError::DegenerateHead("nose and neck coincide in the target".into()));
    }
    let threshold = PCKH_ALPHA * head;
    let mut count = PckhCount::default();
    for (g, t) in generated.joints().iter().zip(t.iter()).take(NUM_JOINTS) {
        if !t.visible {
            continue;
        }
        count.total += 1;
        if g.visible && ((g.x - t.x).powi(2) + (g.y - t.y).powi(2)).sqrt() <= threshold {
            count.correct += 1;
        }
    }
    Ok(count)
}

pub fn pckh(generated: &KeypointSet, target: &KeypointSet) -> Result<f64> {
    Ok(pckh_count(generated, target)?.fraction())
}

/// One generated image with the data it is judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub generated: ImageTensor,
    pub target: ImageTensor,
    pub target_keypoints: KeypointSet,
    pub mask: Option<MaskImage>,
}

pub struct Backends<'a> {
    pub classifier: &'a dyn ClassifierBackend,
    pub pose_estimator: &'a dyn PoseEstimatorBackend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Number(f64),
    Infinite,
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(v) => write!(f, "{v:.3}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub value: MetricValue,
    /// Spread across splits, for the inception scores.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub num_pairs: usize,
}

/// Column order of the report.
pub const METRIC_NAMES: [&str; 6] = ["SSIM", "IS", "mask-SSIM", "mask-IS", "PSNR", "PCKh"];

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Finite value of `metric`, if any.
    pub fn number(&self, metric: &str) -> Option<f64> {
        match self.get(metric)?.value {
            MetricValue::Number(v) => Some(v),
            MetricValue::Infinite => None,
        }
    }

    /// One JSON object per line: `{"metric", "value", "std"?}`; infinite
    /// values are the string `"inf"`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let value = match r.value {
                MetricValue::Number(v) => serde_json::json!(v),
                MetricValue::Infinite => serde_json::json!("inf"),
            };
            let mut obj = serde_json::json!({ "metric": r.metric, "value": value, "pairs": self.num_pairs });
            if let Some(s) = r.std {
                obj["std"] = serde_json::json!(s);
            }
            out.push_str(&obj.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut vals = String::new();
        for r in &self.rows {
            let v = match r.std {
                Some(s) => format!("{}±{s:.3}", r.value),
                None => r.value.to_string(),
            };
            let width = r.metric.len().max(v.chars().count()) + 2;
            let _ = write!(head, "{:>width$}", r.metric);
            let _ = write!(vals, "{v:>width$}");
        }
        format!("{head}\n{vals}\n")
    }
}

/// Scores generated images against their targets.
///
/// PSNR is computed from the MSE pooled over all pairs, so it is infinite
/// exactly when every pair is identical. PCKh pools joint counts over
/// pairs. Pairs without a mask use the full image for the masked metrics.
pub fn evaluate_images(pairs: &[EvalPair], backends: &Backends<'_>, is_splits: usize) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(PonaError::Metric("no pairs to evaluate".into()));
    }
    let n = pairs.len() as f64;
    let mut ssim_sum = 0.0;
    let mut mask_ssim_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut pck = PckhCount::default();
    let mut generated = Vec::with_capacity(pairs.len());
    let mut masks = Vec::with_capacity(pairs.len());
    for p in pairs {
        same_size(&p.generated, &p.target)?;
        let mask = p
            .mask
            .clone()
            .unwrap_or_else(|| MaskImage::full(p.target.height(), p.target.width()));
        ssim_sum += ssim(&p.generated, &p.target)?;
        mask_ssim_sum += mask_ssim(&p.generated, &p.target, &mask)?;
        mse_sum += mse(&p.generated, &p.target);
        let estimated = backends.pose_estimator.estimate(&p.generated)?;
        let c = pckh_count(&estimated, &p.target_keypoints)?;
        pck.correct += c.correct;
        pck.total += c.total;
        generated.push(p.generated.clone());
        masks.push(mask);
    }
    let is = inception_score(&generated, backends.classifier, is_splits)?;
    let mis = mask_is(&generated, &masks, backends.classifier, is_splits)?;
    let psnr = match Psnr::from_mse(mse_sum / n) {
        Psnr::Decibels(v) => MetricValue::Number(v),
        Psnr::Infinite => MetricValue::Infinite,
    };
    let num = |v: f64| MetricValue::Number(v);
    Ok(MetricReport {
        rows: vec![
            MetricRow {
                metric: "SSIM",
                value: num(ssim_sum / n),
                std: None,
            },
            MetricRow {
                metric: "IS",
                value: num(is.mean),
                std: Some(is.std),
            },
            MetricRow {
                metric: "mask-SSIM",
                value: num(mask_ssim_sum / n),
                std: None,
            },
            MetricRow {
                metric: "mask-IS",
                value: num(mis.mean),
                std: Some(mis.std),
            },
            MetricRow {
                metric: "PSNR",
                value: psnr,
                std: None,
            },
            MetricRow {
                metric: "PCKh",
                value: num(pck.fraction()),
                std: None,
            },
        ],
        num_pairs: pairs.len(),
    })
}

/// Evaluation pairs that use each target as its own generated image.
pub fn reference_pairs(dataset: &Dataset) -> Vec<EvalPair> {
    dataset
        .pairs
        .iter()
        .map(|&(_, t)| {
            let s = &dataset.samples[t];
            EvalPair {
                generated: s.image.clone(),
                target: s.image.clone(),
                target_keypoints: s.keypoints.clone(),
                mask: s.mask.clone(),
            }
        })
        .collect()
}

/// Generated images for every pair of `dataset`, in pair order.
pub fn generate_pairs(model: &PonaModel, store: &ParamStore, dataset: &Dataset, sigma: f64) -> Result<Vec<EvalPair>> {
    const CHUNK: usize = 8;
    let mut out = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let batch = crate::data::assemble_batch(dataset, chunk, sigma)?;
        let b = Binding::eval(store);
        let images = model.generator.forward(
            &b,
            &Var::constant(batch.condition_images),
            &Var::constant(batch.pose_pairs),
        )?;
        for (row, &p) in chunk.iter().enumerate() {
            let s = &dataset.samples[dataset.pairs[p].1];
            out.push(EvalPair {
                generated: unstack_image(images.value(), row),
                target: s.image.clone(),
                target_keypoints: s.keypoints.clone(),
                mask: s.mask.clone(),
            });
        }
    }
    Ok(out)
}

/// Generates every pair of `dataset` with the model and scores the result.
pub fn evaluate_model(
    model: &PonaModel,
    store: &ParamStore,
    dataset: &Dataset,
    backends: &Backends<'_>,
    sigma: f64,
    is_splits: usize,
) -> Result<MetricReport> {
    evaluate_images(&generate_pairs(model, store, dataset, sigma)?, backends, is_splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Joint;
    use pona_tensor::ndarray::Array3;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((3, h, w), |(c, y, x)| f(c, y, x))).unwrap()
    }

    fn noise(seed: u64, h: usize, w: usize) -> ImageTensor {
        img(h, w, |c, y, x| {
            let v = ((c * 131 + y * 31 + x * 7) as u64).wrapping_mul(seed.wrapping_mul(2654435761) | 1);
            (v % 2001) as f64 / 1000.0 - 1.0
        })
    }

    #[test]
    fn ssim_fixtures() {
        let x = noise(3, 16, 16);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let zero = ImageTensor::filled(16, 16, -1.0);
        let one = ImageTensor::filled(16, 16, 1.0);
        let v = ssim(&zero, &one).unwrap();
        // closed form for constant patches: C1 / (1 + C1)
        assert!((v - SSIM_C1 / (1.0 + SSIM_C1)).abs() < 1e-12);
        assert!(v < 1e-3);
        let y = noise(5, 16, 16);
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    }

    #[test]
    fn ssim_window_shrinks_for_tiny_images() {
        assert_eq!(gaussian_window(8).len(), 7);
        assert_eq!(gaussian_window(11).len(), 11);
        assert_eq!(gaussian_window(40).len(), 11);
        let x = noise(1, 4, 6);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_ssim_fixtures() {
        let (a, b) = (noise(1, 12, 12), noise(2, 12, 12));
        assert_eq!(mask_ssim(&a, &b, &MaskImage::full(12, 12)).unwrap(), ssim(&a, &b).unwrap());
        assert_eq!(mask_ssim(&a, &b, &MaskImage::empty(12, 12)).unwrap(), 1.0);
        let mask = MaskImage::new(Array2::from_shape_fn((12, 12), |(y, _)| f64::from(y < 6))).unwrap();
        let c = img(12, 12, |c, y, x| if y < 6 { a.data[[c, y, x]] } else { 0.9 });
        assert!((mask_ssim(&a, &c, &mask).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_fixtures() {
        let a = noise(4, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
        let b = a.data.mapv(|v| v + PSNR_MAX / 10.0);
        let Psnr::Decibels(db) = psnr(&a, &ImageTensor { data: b }).unwrap() else {
            panic!("finite expected")
        };
        assert!((db - 20.0).abs() < 1e-9);
        let z = ImageTensor::filled(4, 4, -1.0);
        let o = ImageTensor::filled(4, 4, 1.0);
        // MSE = MAX² gives 0 dB
        assert_eq!(psnr(&z, &o).unwrap(), Psnr::Decibels(0.0));
    }

    struct OneHot(usize);

    impl ClassifierBackend for OneHot {
        fn name(&self) -> &str {
            "one-hot"
        }
        fn num_labels(&self) -> usize {
            self.0
        }
        fn classify(&self, image: &ImageTensor) -> Result<Vec<f64>> {
            let label = ((image.data[[0, 0, 0]] + 1.0) * 100.0).round() as usize % self.0;
            let mut p = vec![0.0; self.0];
            p[label] = 1.0;
            Ok(p)
        }
    }

    #[test]
    fn inception_score_fixtures() {
        let same: Vec<_> = (0..6).map(|_| ImageTensor::filled(4, 4, 0.3)).collect();
        let s = inception_score(&same, &ColorHistogramClassifier::default(), 1).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-9);
        let l = 5;
        let distinct: Vec<_> = (0..l).map(|k| ImageTensor::filled(2, 2, k as f64 / 100.0 - 1.0)).collect();
        let s = inception_score(&distinct, &OneHot(l), 1).unwrap();
        assert!((s.mean - l as f64).abs() < 1e-6);
        assert_eq!(s.std, 0.0);
        assert!(inception_score(&[], &OneHot(2), 1).is_err());
    }

    #[test]
    fn mask_is_fixtures() {
        let imgs: Vec<_> = (0..4).map(|k| noise(k + 1, 6, 6)).collect();
        let c = ColorHistogramClassifier::default();
        let full: Vec<_> = (0..4).map(|_| MaskImage::full(6, 6)).collect();
        assert_eq!(
            mask_is(&imgs, &full, &c, 2).unwrap(),
            inception_score(&imgs, &c, 2).unwrap()
        );
        let empty: Vec<_> = (0..4).map(|_| MaskImage::empty(6, 6)).collect();
        assert!((mask_is(&imgs, &empty, &c, 2).unwrap().mean - 1.0).abs() < 1e-12);
    }

    fn skeleton(offset: f64) -> KeypointSet {
        let mut j = [Joint::missing(); NUM_JOINTS];
        for (i, joint) in j.iter_mut().enumerate() {
            *joint = Joint::visible(10.0 + offset + (i % 6) as f64 * 5.0, 10.0 + offset + (i / 6) as f64 * 10.0);
        }
        // head segment of length 10
        j[NOSE] = Joint::visible(20.0 + offset, 10.0 + offset);
        j[NECK] = Joint::visible(20.0 + offset, 20.0 + offset);
        KeypointSet::new(j, 100, 100).unwrap()
    }

    #[test]
    fn pckh_fixtures() {
        let t = skeleton(0.0);
        assert_eq!(pckh(&t, &t).unwrap(), 1.0);
        let far = KeypointSet::new(t.joints().map(|j| Joint::visible(j.x + 60.0, j.y + 60.0)), 100, 100).unwrap();
        assert_eq!(pckh(&far, &t).unwrap(), 0.0);
        let mut half = *t.joints();
        for j in half.iter_mut().skip(9) {
            j.x += 5.1;
        }
        let half = KeypointSet::new(half, 100, 100).unwrap();
        assert_eq!(pckh(&half, &t).unwrap(), 0.5);
        let mut degenerate = *t.joints();
        degenerate[NECK] = degenerate[NOSE];
        let degenerate = KeypointSet::new(degenerate, 100, 100).unwrap();
        assert!(matches!(pckh(&t, &degenerate), Err(PonaError::DegenerateHead(_))));
    }

    #[test]
    fn invisible_target_joints_are_not_counted() {
        let t = skeleton(0.0);
        let mut j = *t.joints();
        j[5] = Joint::missing();
        let target = KeypointSet::new(j, 100, 100).unwrap();
        assert_eq!(pckh_count(&t, &target).unwrap().total, NUM_JOINTS - 1);
        let mut g = *t.joints();
        g[6] = Joint::missing();
        let generated = KeypointSet::new(g, 100, 100).unwrap();
        assert_eq!(pckh_count(&generated, &t).unwrap().correct, NUM_JOINTS - 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ssim_and_psnr_are_symmetric(s1 in 1u64..1000, s2 in 1u64..1000) {
            let (a, b) = (noise(s1, 12, 10), noise(s2, 12, 10));
            prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
        }

        #[test]
        fn pckh_is_translation_invariant(dx in -5.0..5.0f64, dy in -5.0..5.0f64, shift in 0.0..8.0f64) {
            let t = skeleton(0.0);
            let g = KeypointSet::new(t.joints().map(|j| Joint::visible(j.x + shift, j.y)), 100, 100).unwrap();
            let base = pckh(&g, &t).unwrap();
            prop_assert_eq!(pckh(&g.translated(dx, dy), &t.translated(dx, dy)).unwrap(), base);
        }

        #[test]
        fn inception_score_ignores_order_and_duplication(seed in 1u64..500, rot in 0usize..6) {
            let imgs: Vec<_> = (0..6).map(|k| noise(seed + k, 5, 5)).collect();
            let c = ColorHistogramClassifier::default();
            let base = inception_score(&imgs, &c, 1).unwrap().mean;
            let mut rotated = imgs.clone();
            rotated.rotate_left(rot);
            prop_assert!((inception_score(&rotated, &c, 1).unwrap().mean - base).abs() < 1e-12);
            let doubled: Vec<_> = imgs.iter().chain(&imgs).cloned().collect();
            prop_assert!((inception_score(&doubled, &c, 1).unwrap().mean - base).abs() < 1e-12);
            prop_assert!(base >= 1.0);
        }
    }
}
