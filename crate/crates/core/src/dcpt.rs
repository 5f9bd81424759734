//! Paired clean/degraded training: view construction, the shared-head dual
//! forward, the four-term objective, the epoch loop and the loss ablation.
//!
//! Objective per sample:
//!
//! ```text
//! L = CE(ŷ_c, y) + CE(ŷ_d, y) + λ_f · (1 − cos(h_c, h_d)) + λ_p · SKL(sg[p_c], p_d)
//! ```
//!
//! where `h` is the representation selected by [`FeatPoint`] and `sg` marks
//! the clean distribution as a constant. Batch losses and gradients are
//! per-sample means.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{apply, sample_degradation, DegradationSpec};
use crate::error::{Error, Result};
use crate::eval::{degradation_grid, Condition, GridReport};
use crate::grad::{
    cosine_distance_loss, finite_diff_check, softmax, softmax_ce, symmetric_kl_loss, AdamW,
    AdamWState, Logits,
};
use crate::head::HeadParams;
use crate::image::Image;
use crate::toyworld::{FeatureExtractor, ToySample};

/// Where the feature-consistency term attaches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatPoint {
    /// The head's hidden layer; gradients flow into the first layer.
    #[default]
    Hidden,
    /// The frozen extractor output. Carries no trainable parameters, so the
    /// term is reported but contributes no gradient.
    Backbone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcptConfig {
    pub lambda_f: f64,
    pub lambda_p: f64,
    pub p_deg: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub feat_consistency_point: FeatPoint,
    pub crop_size: usize,
    pub hidden: usize,
}

impl Default for DcptConfig {
    fn default() -> Self {
        DcptConfig {
            lambda_f: 0.5,
            lambda_p: 0.1,
            p_deg: 0.5,
            lr: 1e-4,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            feat_consistency_point: FeatPoint::Hidden,
            crop_size: 64,
            hidden: 256,
        }
    }
}

impl DcptConfig {
    /// Same config with both consistency weights zeroed.
    pub fn baseline(&self) -> Self {
        DcptConfig {
            lambda_f: 0.0,
            lambda_p: 0.0,
            ..self.clone()
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut nonneg = |name: &str, v: f64| {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        };
        nonneg("lambda_f", self.lambda_f);
        nonneg("lambda_p", self.lambda_p);
        nonneg("lr", self.lr);
        nonneg("weight_decay", self.weight_decay);
        if !(0.0..=1.0).contains(&self.p_deg) {
            bad.push(format!("p_deg must be in [0, 1], got {}", self.p_deg));
        }
        if self.epochs == 0 {
            bad.push("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be ≥ 1".into());
        }
        if self.crop_size < crate::toyworld::MIN_EXTRACT_SIDE {
            bad.push(format!(
                "crop_size must be ≥ {}, got {}",
                crate::toyworld::MIN_EXTRACT_SIDE,
                self.crop_size
            ));
        }
        if self.hidden == 0 {
            bad.push("hidden must be ≥ 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            lambda_f: self.lambda_f,
            lambda_p: self.lambda_p,
            point: self.feat_consistency_point,
            ce_enabled: true,
        }
    }
}

/// Loss weights for one evaluation of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub lambda_f: f64,
    pub lambda_p: f64,
    pub point: FeatPoint,
    /// Test-only switch that drops both cross-entropy terms. The training
    /// entry points always set it.
    #[doc(hidden)]
    pub ce_enabled: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_clean: f64,
    pub ce_deg: f64,
    pub l_feat: f64,
    pub l_pred: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(ce_clean: f64, ce_deg: f64, l_feat: f64, l_pred: f64, obj: &Objective) -> Self {
        LossBreakdown {
            ce_clean,
            ce_deg,
            l_feat,
            l_pred,
            total: ce_clean + ce_deg + obj.lambda_f * l_feat + obj.lambda_p * l_pred,
        }
    }

    /// Residual of `total = ce_clean + ce_deg + λ_f·l_feat + λ_p·l_pred`.
    pub fn identity_residual(&self, lambda_f: f64, lambda_p: f64) -> f64 {
        (self.total
            - (self.ce_clean + self.ce_deg + lambda_f * self.l_feat + lambda_p * self.l_pred))
            .abs()
    }

    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.ce_clean += s * o.ce_clean;
        self.ce_deg += s * o.ce_deg;
        self.l_feat += s * o.l_feat;
        self.l_pred += s * o.l_pred;
        self.total += s * o.total;
    }
}

/// Random crop + horizontal flip for the clean view, then a sampled
/// degradation of that clean view.
pub fn build_views<R: Rng + ?Sized>(
    img: &Image,
    rng: &mut R,
    cfg: &DcptConfig,
) -> Result<(Image, Image, DegradationSpec)> {
    let c = cfg.crop_size;
    if img.width() < c || img.height() < c {
        return Err(Error::Param(format!(
            "image {}x{} is smaller than the {c}x{c} crop",
            img.width(),
            img.height()
        )));
    }
    let x0 = rng.random_range(0..=img.width() - c);
    let y0 = rng.random_range(0..=img.height() - c);
    let mut clean = img.crop(x0, y0, c, c)?;
    if rng.random_bool(0.5) {
        clean = clean.flip_horizontal();
    }
    let spec = sample_degradation(rng, cfg.p_deg);
    let degraded = apply(&spec, &clean)?;
    Ok((clean, degraded, spec))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualOutput {
    pub hidden_clean: Vec<f64>,
    pub logits_clean: Logits,
    pub hidden_deg: Vec<f64>,
    pub logits_deg: Logits,
}

/// Both views through the same head.
pub fn dual_forward(params: &HeadParams, feat_clean: &[f64], feat_deg: &[f64]) -> Result<DualOutput> {
    if feat_clean.len() != feat_deg.len() {
        return Err(Error::Shape(format!(
            "clean/degraded features differ in length: {} vs {}",
            feat_clean.len(),
            feat_deg.len()
        )));
    }
    let (hidden_clean, logits_clean) = params.forward(feat_clean)?;
    let (hidden_deg, logits_deg) = params.forward(feat_deg)?;
    Ok(DualOutput {
        hidden_clean,
        logits_clean,
        hidden_deg,
        logits_deg,
    })
}

/// Upstream gradients arriving at each path's hidden layer and logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Upstream {
    pub d_logits_clean: Logits,
    pub d_logits_deg: Logits,
    pub d_hidden_clean: Option<Vec<f64>>,
    pub d_hidden_deg: Option<Vec<f64>>,
}

/// Loss values and the upstream signals they send into the head.
pub fn loss_terms(
    obj: &Objective,
    out: &DualOutput,
    feat_clean: &[f64],
    feat_deg: &[f64],
    label: usize,
) -> Result<(LossBreakdown, Upstream)> {
    loss_terms_with_target(obj, out, feat_clean, feat_deg, label, out.logits_clean)
}

/// Objective value with the prediction target fixed at `frozen_clean`.
/// Its ordinary derivative is exactly the stop-gradient gradient produced
/// by [`total_loss`] when `frozen_clean` equals the current clean logits, so
/// it is the function to difference numerically.
pub fn frozen_target_value(
    obj: &Objective,
    params: &HeadParams,
    feat_clean: &[f64],
    feat_deg: &[f64],
    label: usize,
    frozen_clean: Logits,
) -> Result<f64> {
    let out = dual_forward(params, feat_clean, feat_deg)?;
    Ok(loss_terms_with_target(obj, &out, feat_clean, feat_deg, label, frozen_clean)?.0.total)
}

fn loss_terms_with_target(
    obj: &Objective,
    out: &DualOutput,
    feat_clean: &[f64],
    feat_deg: &[f64],
    label: usize,
    target: Logits,
) -> Result<(LossBreakdown, Upstream)> {
    let mut up = Upstream {
        d_logits_clean: [0.0; 2],
        d_logits_deg: [0.0; 2],
        d_hidden_clean: None,
        d_hidden_deg: None,
    };

    let (mut ce_clean, mut ce_deg) = (0.0, 0.0);
    if obj.ce_enabled {
        let (l, g) = softmax_ce(out.logits_clean, label)?;
        ce_clean = l;
        up.d_logits_clean = g;
        let (l, g) = softmax_ce(out.logits_deg, label)?;
        ce_deg = l;
        up.d_logits_deg = g;
    } else if label > 1 {
        return Err(Error::Param(format!("label must be 0 or 1, got {label}")));
    }

    // disabled terms are not evaluated and log as zero
    let l_feat = match (obj.lambda_f != 0.0, obj.point) {
        (false, _) => 0.0,
        (true, FeatPoint::Hidden) => {
            let (l, ga, gb) = cosine_distance_loss(&out.hidden_clean, &out.hidden_deg)?;
            up.d_hidden_clean = Some(ga.iter().map(|g| obj.lambda_f * g).collect());
            up.d_hidden_deg = Some(gb.iter().map(|g| obj.lambda_f * g).collect());
            l
        }
        (true, FeatPoint::Backbone) => cosine_distance_loss(feat_clean, feat_deg)?.0,
    };

    let mut l_pred = 0.0;
    if obj.lambda_p != 0.0 {
        // the clean path receives nothing from this term
        let (l, g) = symmetric_kl_loss(target, out.logits_deg)?;
        l_pred = l;
        up.d_logits_deg[0] += obj.lambda_p * g[0];
        up.d_logits_deg[1] += obj.lambda_p * g[1];
    }

    Ok((
        LossBreakdown::assemble(ce_clean, ce_deg, l_feat, l_pred, obj),
        up,
    ))
}

/// Adds `scale ×` the sample's parameter gradient into `acc`.
pub fn accumulate_sample(
    obj: &Objective,
    params: &HeadParams,
    feat_clean: &[f64],
    feat_deg: &[f64],
    label: usize,
    scale: f64,
    acc: &mut HeadParams,
) -> Result<(LossBreakdown, DualOutput)> {
    let out = dual_forward(params, feat_clean, feat_deg)?;
    let (loss, up) = loss_terms(obj, &out, feat_clean, feat_deg, label)?;
    params.backward_accumulate(
        feat_clean,
        &out.hidden_clean,
        up.d_hidden_clean.as_deref(),
        up.d_logits_clean,
        scale,
        acc,
    )?;
    params.backward_accumulate(
        feat_deg,
        &out.hidden_deg,
        up.d_hidden_deg.as_deref(),
        up.d_logits_deg,
        scale,
        acc,
    )?;
    Ok((loss, out))
}

/// Single-sample objective and its full parameter gradient.
pub fn total_loss(
    obj: &Objective,
    params: &HeadParams,
    feat_clean: &[f64],
    feat_deg: &[f64],
    label: usize,
) -> Result<(LossBreakdown, HeadParams)> {
    let mut grad = HeadParams::zeros(params.dim(), params.hidden());
    let (loss, _) = accumulate_sample(obj, params, feat_clean, feat_deg, label, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Feature pair and label for one training sample.
pub struct PairedFeatures {
    pub clean: Vec<f64>,
    pub degraded: Vec<f64>,
    pub label: usize,
}

/// Mean loss and mean gradient over a batch, summed in sample order. Also
/// returns the number of clean views classified correctly.
pub fn batch_loss(
    obj: &Objective,
    params: &HeadParams,
    batch: &[PairedFeatures],
) -> Result<(LossBreakdown, HeadParams, usize)> {
    let mut grad = HeadParams::zeros(params.dim(), params.hidden());
    let mut mean = LossBreakdown::default();
    let scale = 1.0 / batch.len() as f64;
    let mut correct = 0;
    for (i, s) in batch.iter().enumerate() {
        let (loss, out) =
            accumulate_sample(obj, params, &s.clean, &s.degraded, s.label, scale, &mut grad)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("batch sample {i}: {m}")),
                    other => other,
                })?;
        mean.add_scaled(&loss, scale);
        if (softmax(out.logits_clean)[1] >= 0.5) == (s.label == 1) {
            correct += 1;
        }
    }
    Ok((mean, grad, correct))
}

/// Per-epoch means of the loss terms plus clean-view training accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_clean: f64,
    pub ce_deg: f64,
    pub l_feat: f64,
    pub l_pred: f64,
    pub total: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial: HeadParams,
    pub params: HeadParams,
    pub log: Vec<EpochLog>,
}

const SHUFFLE_STREAM: u64 = 1;
const VIEW_SEED_SALT: u64 = 0x5eed_0f_7e_57_da7a;

/// Generator for the view of dataset sample `index` in `epoch`. Independent
/// of the shuffle stream and of batch composition.
pub fn view_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VIEW_SEED_SALT);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Initial head parameters for a run; depends only on the seed and shape.
pub fn initial_params(seed: u64, dim: usize, hidden: usize) -> Result<HeadParams> {
    HeadParams::init(&mut ChaCha8Rng::seed_from_u64(seed), dim, hidden)
}

/// Dataset visiting order for every epoch, from a dedicated stream.
pub fn epoch_orders(seed: u64, epochs: usize, n: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Trains a head on paired views. Deterministic for a given config.
pub fn train(
    cfg: &DcptConfig,
    dataset: &[ToySample],
    extractor: &dyn FeatureExtractor,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config(vec!["training set is empty".into()]));
    }
    if !dataset.iter().any(|s| s.label == 0) || !dataset.iter().any(|s| s.label == 1) {
        return Err(Error::Config(vec![
            "training set must contain both real and fake samples".into(),
        ]));
    }
    let obj = cfg.objective();
    let opt = AdamW::with_lr(cfg.lr, cfg.weight_decay);
    let initial = initial_params(cfg.seed, extractor.dim(), cfg.hidden)?;
    let mut params = initial.clone();
    let mut state = AdamWState::new(params.param_count());
    let mut log = Vec::with_capacity(cfg.epochs);

    for (epoch, order) in epoch_orders(cfg.seed, cfg.epochs, dataset.len()).into_iter().enumerate() {
        let mut sums = LossBreakdown::default();
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // extraction is pure and order-independent; accumulation below
            // runs in sample order
            let batch: Vec<PairedFeatures> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &dataset[i];
                    let (clean, degraded, _) =
                        build_views(&s.image, &mut view_rng(cfg.seed, epoch, i), cfg)?;
                    Ok(PairedFeatures {
                        clean: extractor.extract(&clean)?,
                        degraded: extractor.extract(&degraded)?,
                        label: s.label as usize,
                    })
                })
                .collect::<Result<_>>()?;
            let (loss, grad, hits) = batch_loss(&obj, &params, &batch)?;
            let residual = loss.identity_residual(obj.lambda_f, obj.lambda_p);
            if residual > 1e-12 * (1.0 + loss.total.abs()) {
                return Err(Error::Numeric(format!(
                    "loss decomposition violated by {residual:e}"
                )));
            }
            opt.step(params.values_mut(), grad.values(), &mut state)?;
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameters in epoch {epoch}")));
            }
            sums.add_scaled(&loss, chunk.len() as f64);
            correct += hits;
        }
        let n = dataset.len() as f64;
        log.push(EpochLog {
            epoch,
            ce_clean: sums.ce_clean / n,
            ce_deg: sums.ce_deg / n,
            l_feat: sums.l_feat / n,
            l_pred: sums.l_pred / n,
            total: sums.total / n,
            train_acc: correct as f64 / n,
        });
    }
    Ok(TrainOutcome {
        initial,
        params,
        log,
    })
}

pub fn write_epoch_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut wtr = csv::Writer::from_path(path).map_err(err)?;
    for row in log {
        wtr.serialize(row).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// The four loss-component variants, in report order.
pub const ABLATION_VARIANTS: [(&str, f64, f64); 4] = [
    ("Baseline", 0.0, 0.0),
    ("feat-only", 0.5, 0.0),
    ("pred-only", 0.0, 0.1),
    ("both", 0.5, 0.1),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub lambda_f: f64,
    pub lambda_p: f64,
    pub seed: u64,
    pub report: GridReport,
}

impl AblationRow {
    pub fn jpeg_avg(&self) -> f64 {
        self.report.jpeg_avg_acc()
    }
}

/// Trains every ablation variant from the same seed (hence the same initial
/// head) and evaluates each on clean + JPEG conditions.
pub fn ablation_suite(
    base: &DcptConfig,
    train_set: &[ToySample],
    eval_set: &[ToySample],
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<AblationRow>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&(name, lambda_f, lambda_p)| {
            let cfg = DcptConfig {
                lambda_f,
                lambda_p,
                ..base.clone()
            };
            let outcome = train(&cfg, train_set, extractor)?;
            let report =
                degradation_grid(&outcome.params, extractor, eval_set, &Condition::JPEG_ONLY)?;
            Ok(AblationRow {
                variant: name.to_string(),
                lambda_f,
                lambda_p,
                seed: cfg.seed,
                report,
            })
        })
        .collect()
}

/// Writes the ablation table: one row per variant with clean and JPEG
/// accuracies and their JPEG mean.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut wtr = csv::Writer::from_path(path).map_err(err)?;
    wtr.write_record([
        "variant", "lambda_f", "lambda_p", "seed", "clean", "j70", "j50", "j30", "jpeg_avg",
    ])
    .map_err(err)?;
    for r in rows {
        let acc = |c| r.report.acc(c).map_or(String::new(), |v: f64| v.to_string());
        wtr.write_record([
            r.variant.clone(),
            r.lambda_f.to_string(),
            r.lambda_p.to_string(),
            r.seed.to_string(),
            acc(Condition::Clean),
            acc(Condition::Jpeg70),
            acc(Condition::Jpeg50),
            acc(Condition::Jpeg30),
            r.jpeg_avg().to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    let json_path = path.with_extension("json");
    let json = serde_json::to_string_pretty(rows).expect("ablation rows serialize");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

/// Result of a randomized finite-difference check of the full objective.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub configurations: usize,
    pub max_rel_error: f64,
    /// Worst error per `(lambda_f, lambda_p)` on/off combination, in the
    /// order off/off, feat, pred, both.
    pub per_combination: [f64; 4],
    /// Draws rejected for sitting on a ReLU kink.
    pub resampled: usize,
}

/// Central-difference step for the full objective. Smaller steps lose
/// gradient entries of order 1e-7 to roundoff in the objective, larger
/// ones to truncation.
pub const GRADCHECK_STEP: f64 = 3e-5;
const KINK_MARGIN: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Compares analytic head gradients of the full objective against central
/// differences over `configurations` random draws of parameters, features,
/// label, weights and attachment point. With `corrupt` the analytic
/// gradient is deliberately perturbed (harness self-test).
pub fn gradcheck(
    seed: u64,
    dim: usize,
    hidden: usize,
    configurations: usize,
    corrupt: bool,
) -> Result<GradcheckReport> {
    if dim == 0 || hidden == 0 {
        return Err(Error::Param("gradcheck dimensions must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_combination = [0.0f64; 4];
    let mut resampled = 0;
    for k in 0..configurations {
        let combo = k % 4;
        let lambda_f = if combo & 1 == 1 { rng.random_range(0.05..2.0) } else { 0.0 };
        let lambda_p = if combo & 2 == 2 { rng.random_range(0.05..2.0) } else { 0.0 };
        let point = if rng.random_bool(0.5) {
            FeatPoint::Hidden
        } else {
            FeatPoint::Backbone
        };
        let obj = Objective {
            lambda_f,
            lambda_p,
            point,
            ce_enabled: true,
        };
        let (params, feat_clean, feat_deg) = loop {
            let draw = draw_gradcheck_point(&mut rng, dim, hidden)?;
            if differentiable_at(&draw.0, &draw.1, &draw.2) {
                break draw;
            }
            resampled += 1;
            if resampled > 1000 * configurations.max(1) {
                return Err(Error::Numeric(
                    "could not draw a point away from the ReLU kinks".into(),
                ));
            }
        };
        let label = rng.random_range(0..2usize);

        let frozen = params.forward(&feat_clean)?.1;
        let (_, mut grad) = total_loss(&obj, &params, &feat_clean, &feat_deg, label)?;
        if corrupt {
            for g in grad.values_mut() {
                *g = *g * 1.01 + 1e-3;
            }
        }
        let err = finite_diff_check(
            |v| {
                let p = HeadParams::from_values(dim, hidden, v.to_vec()).expect("shape");
                frozen_target_value(&obj, &p, &feat_clean, &feat_deg, label, frozen)
                    .expect("finite objective")
            },
            params.values(),
            grad.values(),
            GRADCHECK_STEP,
        );
        per_combination[combo] = per_combination[combo].max(err);
    }
    Ok(GradcheckReport {
        configurations,
        max_rel_error: per_combination.iter().copied().fold(0.0, f64::max),
        per_combination,
        resampled,
    })
}

fn draw_gradcheck_point(
    rng: &mut ChaCha8Rng,
    dim: usize,
    hidden: usize,
) -> Result<(HeadParams, Vec<f64>, Vec<f64>)> {
    let mut params = HeadParams::init(rng, dim, hidden)?;
    // positive biases keep most units active
    for b in params.b1_mut() {
        *b = rng.random_range(0.1..0.6);
    }
    for b in params.b2_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    // positive and O(1) like the extractor's log-energies; a feature near
    // zero would make its whole W1 row's gradient vanish into roundoff
    let feat_clean: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
    let feat_deg: Vec<f64> = feat_clean
        .iter()
        .map(|v| v * rng.random_range(0.6..1.4))
        .collect();
    Ok((params, feat_clean, feat_deg))
}

/// Pre-activations stay clear of zero by more than any probe step can move
/// them, and each view keeps at least one active unit so the hidden-layer
/// cosine is defined.
fn differentiable_at(params: &HeadParams, feat_clean: &[f64], feat_deg: &[f64]) -> bool {
    [feat_clean, feat_deg].iter().all(|feat| {
        let mut pre = params.b1().to_vec();
        for (&x, row) in feat.iter().zip(params.w1().chunks_exact(params.hidden())) {
            for (acc, &w) in pre.iter_mut().zip(row) {
                *acc += x * w;
            }
        }
        pre.iter().all(|v| v.abs() > KINK_MARGIN) && pre.iter().any(|&v| v > 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::DctEnergyExtractor;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = DcptConfig::default();
        assert_eq!((cfg.lambda_f, cfg.lambda_p, cfg.p_deg), (0.5, 0.1, 0.5));
        assert_eq!((cfg.lr, cfg.weight_decay), (1e-4, 0.01));
        assert_eq!((cfg.epochs, cfg.batch_size), (20, 64));
        cfg.validate().unwrap();

        let partial = DcptConfig::from_json(r#"{"lambda_f": 0.0, "seed": 7}"#).unwrap();
        assert_eq!(partial.lambda_f, 0.0);
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.lambda_p, 0.1);
        assert!(DcptConfig::from_json(r#"{"lamda_f": 0.0}"#).is_err());

        let bad = DcptConfig {
            lambda_f: -1.0,
            p_deg: 1.5,
            ..DcptConfig::default()
        };
        match bad.validate() {
            Err(Error::Config(fields)) => {
                assert_eq!(fields.len(), 2);
                assert!(fields[0].contains("lambda_f"));
                assert!(fields[1].contains("p_deg"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn views_without_degradation_match() {
        let img = Image::from_fn(64, 64, |x, y, c| (x * 3 + y * 5 + c) as u8).unwrap();
        let cfg = DcptConfig {
            p_deg: 0.0,
            ..DcptConfig::default()
        };
        let (c, d, s) = build_views(&img, &mut view_rng(0, 0, 0), &cfg).unwrap();
        assert_eq!(c, d);
        assert_eq!(s, DegradationSpec::None);

        let cfg = DcptConfig::default();
        let a = build_views(&img, &mut view_rng(3, 1, 9), &cfg).unwrap();
        let b = build_views(&img, &mut view_rng(3, 1, 9), &cfg).unwrap();
        assert_eq!(a, b);

        let small = Image::filled(32, 32, 0).unwrap();
        assert!(build_views(&small, &mut view_rng(0, 0, 0), &cfg).is_err());
    }

    #[test]
    fn view_crop_varies_on_larger_images() {
        let img = Image::from_fn(80, 72, |x, y, _| (x * 2 + y) as u8).unwrap();
        let cfg = DcptConfig::default();
        let mut corners = std::collections::HashSet::new();
        for i in 0..50 {
            let (c, _, _) = build_views(&img, &mut view_rng(0, 0, i), &cfg).unwrap();
            assert_eq!((c.width(), c.height()), (64, 64));
            corners.insert(c.data()[..6].to_vec());
        }
        assert!(corners.len() > 5);
    }

    #[test]
    fn none_rate_over_many_views() {
        let img = Image::filled(64, 64, 100).unwrap();
        let cfg = DcptConfig::default();
        let n = 10_000;
        let none = (0..n)
            .filter(|&i| {
                let mut rng = view_rng(0, 0, i);
                // only the spec matters here; skip the degradation itself
                let _ = rng.random_range(0..=0usize);
                let _ = rng.random_range(0..=0usize);
                let _ = rng.random_bool(0.5);
                sample_degradation(&mut rng, cfg.p_deg) == DegradationSpec::None
            })
            .count();
        let rate = none as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "{rate}");
        // spot-check that build_views agrees with the replayed draws
        for i in 0..20 {
            let (_, _, s) = build_views(&img, &mut view_rng(0, 0, i), &cfg).unwrap();
            let mut rng = view_rng(0, 0, i);
            let _ = rng.random_range(0..=0usize);
            let _ = rng.random_range(0..=0usize);
            let _ = rng.random_bool(0.5);
            assert_eq!(s, sample_degradation(&mut rng, cfg.p_deg));
        }
    }

    fn small_head(seed: u64) -> HeadParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HeadParams::init(&mut rng, 8, 4).unwrap();
        p.b1_mut().fill(0.3);
        p
    }

    #[test]
    fn dual_forward_shares_parameters() {
        let p = small_head(1);
        let f = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8];
        let before = p.clone();
        let out = dual_forward(&p, &f, &f).unwrap();
        assert_eq!(out.hidden_clean, out.hidden_deg);
        assert_eq!(out.logits_clean, out.logits_deg);
        assert_eq!(p.forward(&f).unwrap(), (out.hidden_clean.clone(), out.logits_clean));
        assert_eq!(p, before);
        assert!(dual_forward(&p, &f, &f[..7]).is_err());
    }

    #[test]
    fn baseline_objective_is_two_ce_terms() {
        let p = small_head(2);
        let fc = [0.3; 8];
        let fd = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let obj = DcptConfig::default().baseline().objective();
        let (loss, _) = total_loss(&obj, &p, &fc, &fd, 1).unwrap();
        assert_eq!(loss.total, loss.ce_clean + loss.ce_deg);
        assert_eq!((loss.l_feat, loss.l_pred), (0.0, 0.0));

        let full = DcptConfig::default().objective();
        let (same, _) = total_loss(&full, &p, &fc, &fc, 0).unwrap();
        assert!(same.l_feat.abs() < 1e-15);
        assert_eq!(same.l_pred, 0.0);
        assert!((same.total - 2.0 * same.ce_clean).abs() < 1e-15);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let p = small_head(3);
        let fc = [0.9, -0.4, 0.2, 0.5, -0.1, 0.3, 0.8, -0.6];
        let fd = [0.7, -0.1, 0.4, 0.1, -0.3, 0.2, 0.5, -0.2];
        for point in [FeatPoint::Hidden, FeatPoint::Backbone] {
            let obj = Objective {
                lambda_f: 0.5,
                lambda_p: 0.1,
                point,
                ce_enabled: true,
            };
            let (_, g) = total_loss(&obj, &p, &fc, &fd, 1).unwrap();
            let frozen = p.forward(&fc).unwrap().1;
            let err = finite_diff_check(
                |v| {
                    let q = HeadParams::from_values(8, 4, v.to_vec()).unwrap();
                    frozen_target_value(&obj, &q, &fc, &fd, 1, frozen).unwrap()
                },
                p.values(),
                g.values(),
                1e-6,
            );
            assert!(err < 1e-5, "{point:?}: {err}");
        }
    }

    #[test]
    fn degenerate_hidden_reports_sample_index() {
        let mut p = small_head(4);
        p.b1_mut().fill(-50.0);
        let batch = vec![
            PairedFeatures { clean: vec![0.1; 8], degraded: vec![0.1; 8], label: 0 },
        ];
        let obj = DcptConfig::default().objective();
        match batch_loss(&obj, &p, &batch) {
            Err(Error::Numeric(m)) => assert!(m.contains("sample 0"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn train_rejects_single_class() {
        let data = crate::toyworld::gen_dataset(0, 4, 2).unwrap();
        let reals: Vec<_> = data.into_iter().filter(|s| s.label == 0).collect();
        let cfg = DcptConfig {
            epochs: 1,
            ..DcptConfig::default()
        };
        assert!(matches!(
            train(&cfg, &reals, &DctEnergyExtractor),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradcheck_small_run_passes_and_self_test_fails() {
        let ok = gradcheck(1, 8, 4, 16, false).unwrap();
        assert!(ok.max_rel_error < GRADCHECK_TOLERANCE, "{ok:?}");
        let bad = gradcheck(1, 8, 4, 4, true).unwrap();
        assert!(bad.max_rel_error > GRADCHECK_TOLERANCE);
    }
}
