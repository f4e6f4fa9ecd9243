//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pona::attention::{apply_attention, compute_attention_map, AttentionParams, CodeRole, FeatureCode};
use pona::checkpoint::Checkpoint;
use pona::data::{assemble_batch, BatchSchedule};
use pona::discriminator::DiscriminatorConfig;
use pona::generator::{FusionPlace, Generator, GeneratorConfig};
use pona::image::{ImageTensor, MaskImage};
use pona::losses::{full_loss, generator_adversarial_loss, l1_loss, perceptual_loss, LossComponents, LossWeights, RandomConvExtractor, Scores};
use pona::metrics::{
    evaluate_images, inception_score, mask_ssim, pckh, psnr, reference_pairs, Backends, ClassifierBackend,
    ColorHistogramClassifier, MetricValue, NearestAnnotationEstimator, Psnr, PSNR_MAX,
};
use pona::model::{block_parameter_count, count_parameters, PonaModel};
use pona::training::{read_loss_log, train, LossReport, Trainer, LOSS_LOG_FILE};
use pona::{metrics::ssim, PonaError};
use pona_tensor::gradcheck::{kink_bound, probe, relative_error};
use pona_tensor::ndarray::IxDyn;
use pona_tensor::{Array, Binding, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{toy_dataset, toy_discriminator, toy_generator, toy_training};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

fn random_array(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Array {
    let n = shape.iter().product();
    Array::from_shape_vec(IxDyn(shape), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn randomized_store(params: &AttentionParams, scale: f64, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::init(&params.specs(), rng).unwrap();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let shape = store.value(&name).unwrap().shape().to_vec();
        store.set(&name, random_array(&shape, scale, rng)).unwrap();
    }
    store
}

/// Direct per-location evaluation of pose-guided attention.
fn naive_attention(store: &ParamStore, p: &AttentionParams, pose: &Array, image: &Array) -> Array {
    let w = |suffix: &str| store.value(&format!("{}.{suffix}", p.name)).unwrap().clone();
    let (wk, bk, wq, bq) = (w("key.weight"), w("key.bias"), w("query.weight"), w("query.bias"));
    let (wv, bv, wt, bt) = (w("value.weight"), w("value.bias"), w("output.weight"), w("output.bias"));
    let gamma = w("gamma")[[0]];
    let s = image.shape().to_vec();
    let (batch, cv, h, wd) = (s[0], s[1], s[2], s[3]);
    let cp = pose.shape()[1];
    let n = h * wd;
    let ck = p.key_channels();
    let at = |x: &Array, b: usize, c: usize, i: usize| x[[b, c, i / wd, i % wd]];
    let mut out = Array::zeros(IxDyn(&s));
    for b in 0..batch {
        let embed = |weight: &Array, bias: &Array, src: &Array, cin: usize, cout: usize, i: usize| -> Vec<f64> {
            (0..cout)
                .map(|o| bias[[o]] + (0..cin).map(|c| weight[[o, c, 0, 0]] * at(src, b, c, i)).sum::<f64>())
                .collect()
        };
        let keys: Vec<Vec<f64>> = (0..n).map(|i| embed(&wk, &bk, pose, cp, ck, i)).collect();
        let queries: Vec<Vec<f64>> = (0..n).map(|i| embed(&wq, &bq, pose, cp, ck, i)).collect();
        let values: Vec<Vec<f64>> = (0..n).map(|i| embed(&wv, &bv, image, cv, cv, i)).collect();
        for j in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|i| (0..ck).map(|o| keys[i][o] * queries[j][o]).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mixed: Vec<f64> = (0..cv)
                .map(|c| (0..n).map(|i| e[i] / z * values[i][c]).sum())
                .collect();
            for o in 0..cv {
                let t = bt[[o]] + (0..cv).map(|c| wt[[o, c, 0, 0]] * mixed[c]).sum::<f64>();
                out[[b, o, j / wd, j % wd]] = gamma * t + at(image, b, o, j);
            }
        }
    }
    out
}

fn attention_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &(h, w) in &[(1, 1), (1, 2), (2, 3), (3, 3), (2, 5), (4, 4), (1, 16), (16, 1), (2, 8)] {
        for &(cp, cv, r) in &[(8, 8, 8), (16, 6, 4), (4, 12, 2)] {
            let params = AttentionParams::new("attn", cp, cv, r);
            let store = randomized_store(&params, 0.6, &mut rng);
            let batch = rng.random_range(1..=2);
            let pose = random_array(&[batch, cp, h, w], 1.5, &mut rng);
            let image = random_array(&[batch, cv, h, w], 1.5, &mut rng);
            let b = Binding::eval(&store);
            let pc = FeatureCode::new(Var::constant(pose.clone()), CodeRole::Pose).unwrap();
            let ic = FeatureCode::new(Var::constant(image.clone()), CodeRole::Image).unwrap();
            let map = compute_attention_map(&b, &pc, &params).map_err(|e| e.to_string())?;
            let got = apply_attention(&b, &ic, &map, &params).map_err(|e| e.to_string())?;
            let expected = naive_attention(&store, &params, &pose, &image);
            for (a, e) in got.var.value().iter().zip(expected.iter()) {
                worst = worst.max((a - e).abs());
            }
            cases += 1;
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:e} over {cases} cases"))?;
    within(start.elapsed(), Duration::from_secs(1), "oracle comparison")?;
    Ok(format!("{cases} cases, max |diff| {worst:.1e}"))
}

fn row_stochasticity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for k in 0..1000 {
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let c = [4, 8, 16][k % 3];
        let params = AttentionParams::self_attention("attn", c, 4);
        let scale = [0.02, 1.0, 5.0][k % 3];
        let store = randomized_store(&params, scale, &mut rng);
        let code = random_array(&[1, c, h, w], 3.0, &mut rng);
        let b = Binding::eval(&store);
        let fc = FeatureCode::new(Var::constant(code), CodeRole::Fusion).unwrap();
        let map = compute_attention_map(&b, &fc, &params).map_err(|e| e.to_string())?;
        for s in map.row_sums() {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
        min_entry = min_entry.min(map.var.value().iter().cloned().fold(f64::INFINITY, f64::min));
    }
    ensure(worst_sum <= 1e-5 && min_entry >= 0.0, || {
        format!("worst row-sum error {worst_sum:e}, min entry {min_entry:e}")
    })?;
    Ok(format!("1000 maps, worst |row sum - 1| {worst_sum:.1e}, min entry {min_entry:.1e}"))
}

fn gate_at_init() -> Outcome {
    let data = toy_dataset();
    let batch = assemble_batch(&data.dataset, &[0, 1, 2, 3], 2.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for fusion in FusionPlace::ALL {
        let cfg = toy_generator(fusion);
        let g = Generator::new(&cfg).map_err(|e| e.to_string())?;
        let model = PonaModel::new(&cfg, &toy_discriminator()).unwrap();
        let store = model.init_params(7).unwrap();
        let b = Binding::train(&store);
        let trace = g
            .forward_traced(&b, &Var::constant(batch.condition_images.clone()), &Var::constant(batch.pose_pairs.clone()))
            .map_err(|e| e.to_string())?;
        for out in &trace.blocks {
            for (a, e) in out.image_code.var.value().iter().zip(out.image_pathway.value().iter()) {
                worst = worst.max((a - e).abs());
            }
            blocks += 1;
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("{blocks} blocks across all fusion places, max |diff| {worst:e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let gcfg = GeneratorConfig {
        base_channels: 2,
        image_size: [8, 8],
        ..Default::default()
    };
    let dcfg = DiscriminatorConfig {
        base_channels: 2,
        ..Default::default()
    };
    let model = PonaModel::new(&gcfg, &dcfg).unwrap();
    let mut store = model.init_params(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // open every attention gate so the attention paths carry gradient
    let gates: Vec<String> = store.iter().filter(|(n, _)| n.ends_with(".gamma")).map(|(n, _)| n.to_string()).collect();
    for g in gates {
        store.set(&g, Array::from_elem(IxDyn(&[1]), rng.random_range(0.3..0.8))).unwrap();
    }
    let condition = random_array(&[2, 3, 8, 8], 1.0, &mut rng);
    let pose_pair = random_array(&[2, 36, 8, 8], 1.0, &mut rng).mapv(f64::abs);
    let target_pose = random_array(&[2, 18, 8, 8], 1.0, &mut rng).mapv(f64::abs);
    let target = random_array(&[2, 3, 8, 8], 1.0, &mut rng);
    let extractor = RandomConvExtractor::new(4, 9);
    let weights = LossWeights::MARKET;

    // loss value, plus generator gradients when `track` is set
    let loss_with = |store: &ParamStore, track: bool| -> (f64, Option<std::collections::BTreeMap<String, Array>>) {
        let b = Binding::new(store, true, track);
        let fake = model
            .generator
            .forward(&b, &Var::constant(condition.clone()), &Var::constant(pose_pair.clone()))
            .unwrap();
        let d = Binding::new(store, true, false);
        let scores = Scores {
            appearance: model.discriminators.score_appearance(&d, &Var::constant(condition.clone()), &fake).unwrap(),
            pose: model.discriminators.score_pose(&d, &fake, &Var::constant(target_pose.clone())).unwrap(),
        };
        let target = Var::constant(target.clone());
        let c = LossComponents {
            adversarial: generator_adversarial_loss(&scores).unwrap(),
            l1: l1_loss(&fake, &target).unwrap(),
            perceptual: perceptual_loss(&fake, &target, &extractor).unwrap(),
        };
        let loss = full_loss(&c, &weights);
        let grads = track.then(|| b.gradients(&loss.backward()));
        (loss.item(), grads)
    };
    let analytic = loss_with(&store, true).1.unwrap();

    let center = loss_with(&store, false).0;
    let (step, floor, tolerance) = (1e-6, 1e-4, 1e-4);

    let names: Vec<String> = model.generator.specs().into_iter().filter(|s| s.trainable).map(|s| s.name).collect();
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let (mut checked, mut skipped) = (0usize, 0usize);
    for name in &names {
        let grad = analytic.get(name).ok_or_else(|| format!("no gradient for {name}"))?;
        let grad = grad.as_standard_layout().into_owned();
        let value = store.value(name).unwrap().clone();
        let n = value.len();
        let candidates: Vec<usize> = if n <= 8 {
            (0..n).collect()
        } else {
            (0..32).map(|_| rng.random_range(0..n)).collect()
        };
        let mut probe_store = store.clone();
        let mut f = |x: &Array| {
            probe_store.set(name, x.clone()).unwrap();
            loss_with(&probe_store, false).0
        };
        let mut valid = 0;
        for idx in candidates {
            if valid == 8 {
                break;
            }
            let (plus, minus) = probe(&mut f, &value, idx, step);
            let numeric = (plus - minus) / (2.0 * step);
            // a ReLU or |x| kink inside the probe interval makes the finite
            // difference meaningless for this entry
            if kink_bound(plus, center, minus, step) > 0.5 * tolerance * numeric.abs().max(floor) {
                skipped += 1;
                continue;
            }
            valid += 1;
            let a = grad.as_slice().unwrap()[idx];
            let err = relative_error(a, numeric, floor);
            if err > worst {
                worst = err;
                worst_name = format!("{name}[{idx}] analytic {a:e} numeric {numeric:e}");
            }
            checked += 1;
        }
        ensure(valid > 0, || format!("no differentiable probe point found for {name}"))?;
    }
    ensure(skipped * 10 <= checked + skipped, || format!("{skipped} of {} entries sit on kinks", checked + skipped))?;
    ensure(worst <= tolerance, || format!("relative error {worst:e} at {worst_name}"))?;
    within(start.elapsed(), Duration::from_secs(120), "gradient check")?;
    Ok(format!(
        "{} tensors, {checked} entries ({skipped} skipped at kinks), worst relative error {worst:.1e}",
        names.len()
    ))
}

struct ToyRun {
    trainer: Trainer,
    reports: Vec<LossReport>,
    elapsed: Duration,
}

fn toy_run(fusion: FusionPlace, dir: &std::path::Path) -> Result<ToyRun, String> {
    let data = toy_dataset();
    let mut trainer = Trainer::new(&toy_generator(fusion), &toy_discriminator(), &toy_training(200, 0)).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = train(&mut trainer, &data.dataset, dir).map_err(|e| e.to_string())?;
    Ok(ToyRun {
        trainer,
        reports: outcome.reports,
        elapsed: start.elapsed(),
    })
}

fn toy_descent(head: &ToyRun) -> Outcome {
    let first = head.reports.first().ok_or("no steps ran")?.l1;
    let last = head.reports.last().unwrap().l1;
    let gammas = head.trainer.generator_gammas();
    let moved = gammas.iter().filter(|(_, g)| g.abs() > 1e-3).count();
    ensure(head.reports.len() == 200, || format!("{} steps ran", head.reports.len()))?;
    ensure(last <= 0.5 * first, || format!("L1 {first:.4} -> {last:.4}"))?;
    ensure(moved > 0, || format!("no gate moved past 1e-3: {gammas:?}"))?;
    within(head.elapsed, Duration::from_secs(300), "toy training")?;
    Ok(format!(
        "L1 {first:.4} -> {last:.4} ({:.0}%), {moved}/{} gates |γ| > 1e-3, {:.1?}",
        100.0 * last / first,
        gammas.len(),
        head.elapsed
    ))
}

fn toy_ssim(run: &ToyRun) -> Result<f64, String> {
    let data = toy_dataset();
    let pairs = pona::metrics::generate_pairs(run.trainer.model(), run.trainer.store(), &data.dataset, 2.0).map_err(|e| e.to_string())?;
    let mut total = 0.0;
    for p in &pairs {
        total += ssim(&p.generated, &p.target).map_err(|e| e.to_string())?;
    }
    Ok(total / pairs.len() as f64)
}

fn ablation_direction(head: &ToyRun, tmp: &std::path::Path) -> Outcome {
    let none = toy_run(FusionPlace::None, &tmp.join("none"))?;
    let (sh, sn) = (toy_ssim(head)?, toy_ssim(&none)?);
    ensure(sh >= sn, || format!("head SSIM {sh:.4} < none SSIM {sn:.4}"))?;
    Ok(format!("head {sh:.4} >= none {sn:.4}"))
}

/// Hand count of one head-fusion block with self and cross attention.
fn block_oracle(c: usize, r: usize) -> usize {
    let conv_unit = |i: usize, o: usize| i * o * 9 + 2 * o;
    let attention = |src: usize, v: usize| {
        let k = (src / r).max(1);
        2 * (src * k + k) + 2 * (v * v + v) + 1
    };
    3 * conv_unit(2 * c, 2 * c) + conv_unit(2 * c, c) + attention(2 * c, 2 * c) + 4 * conv_unit(c, c) + attention(c, c)
}

fn block_additivity() -> Outcome {
    let d = DiscriminatorConfig::default();
    let g3 = GeneratorConfig::default();
    let g2 = GeneratorConfig {
        num_blocks: 2,
        ..Default::default()
    };
    let (p3, p2) = (
        count_parameters(&g3, &d).map_err(|e| e.to_string())?,
        count_parameters(&g2, &d).map_err(|e| e.to_string())?,
    );
    let block = block_parameter_count(&g3).map_err(|e| e.to_string())?;
    let oracle = block_oracle(g3.code_channels(), g3.attention_reduction);
    ensure(p3 - p2 == block, || format!("difference {} vs block {block}", p3 - p2))?;
    ensure(block == oracle, || format!("block {block} vs hand count {oracle}"))?;
    let band = 20_000_000..=40_000_000;
    ensure(band.contains(&p3) && band.contains(&p2), || format!("totals {p3} / {p2} outside 20-40 M"))?;
    Ok(format!(
        "3 blocks {:.2} M, 2 blocks {:.2} M, one block {:.2} M",
        p3 as f64 / 1e6,
        p2 as f64 / 1e6,
        block as f64 / 1e6
    ))
}

struct OneHot(usize);

impl ClassifierBackend for OneHot {
    fn name(&self) -> &str {
        "one-hot"
    }
    fn num_labels(&self) -> usize {
        self.0
    }
    fn classify(&self, image: &ImageTensor) -> pona::Result<Vec<f64>> {
        let label = image.data[[0, 0, 0]].to_bits() as usize % self.0;
        let mut p = vec![0.0; self.0];
        p[label] = 1.0;
        Ok(p)
    }
}

fn metric_fixtures() -> Outcome {
    let e = |x: PonaError| x.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = |rng: &mut ChaCha8Rng| {
        let a = random_array(&[3, 24, 16], 1.0, rng);
        ImageTensor::new(a.into_dimensionality().unwrap()).unwrap()
    };
    let (x, y) = (img(&mut rng), img(&mut rng));
    let s = ssim(&x, &x).map_err(e)?;
    ensure(s == 1.0, || format!("ssim(x, x) = {s}"))?;
    let full = MaskImage::full(24, 16);
    ensure(mask_ssim(&x, &y, &full).map_err(e)? == ssim(&x, &y).map_err(e)?, || "full-mask SSIM differs".into())?;
    let shifted = ImageTensor::new(x.data.mapv(|v| v + PSNR_MAX / 10.0)).unwrap();
    let Psnr::Decibels(db) = psnr(&x, &shifted).map_err(e)? else {
        return Err("uniform error gave infinite PSNR".into());
    };
    ensure((db - 20.0).abs() <= 1e-9, || format!("PSNR {db}"))?;
    let constant: Vec<ImageTensor> = (0..10).map(|_| img(&mut rng)).collect();
    let uniform_classifier = ConstantClassifier;
    let is1 = inception_score(&constant, &uniform_classifier, 1).map_err(e)?.mean;
    ensure((is1 - 1.0).abs() <= 1e-9, || format!("constant-classifier IS {is1}"))?;
    let labels = 7;
    let distinct: Vec<ImageTensor> = (0..labels)
        .map(|k| {
            let mut t = ImageTensor::filled(4, 4, 0.0);
            t.data[[0, 0, 0]] = f64::from_bits(k as u64);
            t
        })
        .collect();
    let isl = inception_score(&distinct, &OneHot(labels), 1).map_err(e)?.mean;
    ensure((isl - labels as f64).abs() <= 1e-6, || format!("one-hot IS {isl}"))?;
    let data = toy_dataset();
    let kp = &data.dataset.samples[0].keypoints;
    let p = pckh(kp, kp).map_err(e)?;
    ensure(p == 1.0, || format!("pckh identity {p}"))?;
    let _ = ColorHistogramClassifier::default();
    Ok(format!("ssim 1, psnr {db:.12} dB, IS {is1} / {isl:.9}, pckh {p}"))
}

struct ConstantClassifier;

impl ClassifierBackend for ConstantClassifier {
    fn name(&self) -> &str {
        "constant"
    }
    fn num_labels(&self) -> usize {
        4
    }
    fn classify(&self, _: &ImageTensor) -> pona::Result<Vec<f64>> {
        Ok(vec![0.1, 0.2, 0.3, 0.4])
    }
}

fn real_data_row() -> Outcome {
    let data = toy_dataset();
    let estimator = NearestAnnotationEstimator::from_dataset(&data.dataset).map_err(|e| e.to_string())?;
    let classifier = ColorHistogramClassifier::default();
    let backends = Backends {
        classifier: &classifier,
        pose_estimator: &estimator,
    };
    let report = evaluate_images(&reference_pairs(&data.dataset), &backends, 10).map_err(|e| e.to_string())?;
    let s = report.number("SSIM").ok_or("SSIM missing")?;
    let p = report.number("PCKh").ok_or("PCKh missing")?;
    let psnr_row = report.get("PSNR").ok_or("PSNR missing")?.value;
    ensure(format!("{s:.3}") == "1.000" && format!("{p:.2}") == "1.00", || format!("SSIM {s}, PCKh {p}"))?;
    ensure(psnr_row == MetricValue::Infinite, || format!("PSNR {psnr_row}"))?;
    ensure(report.rows.len() == 6, || format!("{} rows", report.rows.len()))?;
    Ok(format!("SSIM {s:.3}, PCKh {p:.2}, PSNR {psnr_row}"))
}

fn determinism(tmp: &std::path::Path) -> Outcome {
    let data = toy_dataset();
    let run = |dir: &std::path::Path| -> Result<Trainer, String> {
        let mut t = Trainer::new(&toy_generator(FusionPlace::Head), &toy_discriminator(), &toy_training(6, 42)).map_err(|e| e.to_string())?;
        train(&mut t, &data.dataset, dir).map_err(|e| e.to_string())?;
        Ok(t)
    };
    let (a, b) = (tmp.join("det_a"), tmp.join("det_b"));
    let ta = run(&a)?;
    run(&b)?;
    let la = std::fs::read(a.join(LOSS_LOG_FILE)).map_err(|e| e.to_string())?;
    let lb = std::fs::read(b.join(LOSS_LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(la == lb, || "loss logs differ".into())?;
    let rows = read_loss_log(&a.join(LOSS_LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(rows.len() == 6, || format!("{} log rows", rows.len()))?;
    let first = ta.checkpoint().to_bytes();
    let path = tmp.join("roundtrip.ckpt");
    ta.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let second = Checkpoint::load(&path).map_err(|e| e.to_string())?.to_bytes();
    ensure(first == second, || "checkpoint bytes changed after load".into())?;
    let _ = BatchSchedule::new(data.dataset.len(), 4, 42).map_err(|e| e.to_string())?;
    Ok(format!("identical {}-byte logs, {}-byte checkpoint round trip", la.len(), first.len()))
}

/// Criterion numbers given on the command line restrict the run.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| only.is_empty() || only.contains(&n);
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !selected(n) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match &outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{elapsed:.1?}]"),
            Err(reason) => println!("FAIL {n:>2} {name}: {reason} [{elapsed:.1?}]"),
        }
        results.push((n, outcome));
    };
    run(1, "attention oracle equivalence", &mut attention_oracle);
    run(2, "row stochasticity", &mut row_stochasticity);
    run(3, "gate at init", &mut gate_at_init);
    run(4, "gradient check", &mut gradient_check);
    let head = if selected(5) || selected(6) {
        toy_run(FusionPlace::Head, &tmp.path().join("head"))
    } else {
        Err("not run".into())
    };
    run(5, "toy training descent", &mut || toy_descent(head.as_ref().map_err(Clone::clone)?));
    run(6, "ablation direction", &mut || ablation_direction(head.as_ref().map_err(Clone::clone)?, tmp.path()));
    run(7, "block-count additivity", &mut block_additivity);
    run(8, "metric fixtures", &mut metric_fixtures);
    run(9, "real-data analogue row", &mut real_data_row);
    run(10, "determinism and checkpoint round trip", &mut || determinism(tmp.path()));
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
