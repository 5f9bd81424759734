//! Acceptance run: one PASS/FAIL line per criterion. Failing criteria make
//! the process exit non-zero only with `ACCEPTANCE_STRICT=1`.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{brute_force_auc, codec_test_image, random_image, recount_accuracy, reference_jpeg};
use dcpt::cli::{run, EXIT_OK};
use dcpt::dcpt::{
    frozen_target_value, gradcheck, initial_params, loss_terms, dual_forward, total_loss, train,
    DcptConfig, FeatPoint, Objective, ABLATION_VARIANTS, GRADCHECK_TOLERANCE,
};
use dcpt::degrade::{
    gaussian_blur, jpeg_roundtrip, resize_down_up, scaled_table, BLUR_SIGMAS, JPEG_QUALITIES,
    RESIZE_SCALES, STD_LUMA_QTABLE,
};
use dcpt::eval::{accuracy, auc, degradation_grid, Condition};
use dcpt::grad::{cosine_distance_loss, finite_diff_check, softmax, symmetric_kl_loss};
use dcpt::head::{param_count_for, HeadParams};
use dcpt::image::{channel_variance, mse, psnr};
use dcpt::toyworld::{gen_dataset, DctEnergyExtractor, FEATURE_DIM};
use dcpt::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("dcpt").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let code = cli(&["gradcheck", "--seed", "0"]);
    let report = gradcheck(0, 16, 8, 128, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = code == EXIT_OK
        && report.configurations >= 100
        && report.max_rel_error < GRADCHECK_TOLERANCE
        && secs < 30.0;
    outcome(
        pass,
        format!(
            "{} configs, max rel err {:.2e} (ce-only {:.2e}), {:.1}s, exit {}",
            report.configurations, report.max_rel_error, report.per_combination[0], secs, code
        ),
    )
}

fn loss_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for i in 0..10_000 {
        let n = rng.random_range(1..200);
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = if i % 3 == 0 {
            a.iter().map(|v| -v).collect()
        } else {
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        };
        let l = cosine_distance_loss(&a, &b).unwrap().0;
        failures += !(0.0..=2.0).contains(&l) as usize;

        let spread = [0.5, 3.0, 30.0][i % 3];
        let zc = [spread * rng.sample::<f64, _>(StandardNormal), spread * rng.sample::<f64, _>(StandardNormal)];
        let zd = if i % 4 == 0 {
            zc
        } else {
            [spread * rng.sample::<f64, _>(StandardNormal), spread * rng.sample::<f64, _>(StandardNormal)]
        };
        let kl = symmetric_kl_loss(zc, zd).unwrap().0;
        let (pc, pd) = (softmax(zc), softmax(zd));
        let gap = (pc[0] - pd[0]).abs().max((pc[1] - pd[1]).abs());
        let ok = kl >= 0.0 && (gap != 0.0 || kl == 0.0) && (gap <= 1e-6 || kl > 0.0);
        failures += !ok as usize;
    }
    outcome(failures == 0, format!("10000 cosine + 10000 KL cases, {failures} failures"))
}

fn stop_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, h) = (12, 6);
    let mut worst = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut clean_zero = true;
    for _ in 0..50 {
        let mut params = HeadParams::init(&mut rng, d, h).unwrap();
        params.b1_mut().iter_mut().for_each(|b| *b = rng.random_range(0.1..0.5));
        let fc: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fd: Vec<f64> = fc.iter().map(|v| v + rng.random_range(-0.8..0.8)).collect();
        let label = rng.random_range(0..2usize);
        let obj = Objective {
            lambda_f: 0.0,
            lambda_p: rng.random_range(0.05..1.0),
            point: FeatPoint::Hidden,
            ce_enabled: false,
        };
        let (_, grad) = total_loss(&obj, &params, &fc, &fd, label).unwrap();

        let out = dual_forward(&params, &fc, &fd).unwrap();
        let (_, up) = loss_terms(&obj, &out, &fc, &fd, label).unwrap();
        clean_zero &= up.d_logits_clean == [0.0, 0.0] && up.d_hidden_clean.is_none();

        // the clean logits become plain numbers; only the degraded path is
        // differentiated, using the two-class form of the KL gradient
        let frozen = params.forward(&fc).unwrap().1;
        let pc = softmax(frozen);
        let pd = softmax(out.logits_deg);
        let dp: Vec<f64> = (0..2).map(|j| (pd[j] / pc[j]).ln() - pc[j] / pd[j] + 1.0).collect();
        let dz0 = obj.lambda_p * pd[0] * pd[1] * (dp[0] - dp[1]);
        let (oracle, _) = params.backward(&fd, &out.hidden_deg, None, [dz0, -dz0]).unwrap();
        for (a, b) in grad.values().iter().zip(oracle.values()) {
            worst = worst.max((a - b).abs());
        }
        let fd_err = finite_diff_check(
            |v| {
                let p = HeadParams::from_values(d, h, v.to_vec()).unwrap();
                frozen_target_value(&obj, &p, &fc, &fd, label, frozen).unwrap()
            },
            params.values(),
            grad.values(),
            1e-6,
        );
        worst_fd = worst_fd.max(fd_err);
    }
    outcome(
        worst <= 1e-10 && clean_zero && worst_fd < 1e-5,
        format!(
            "max |analytic − frozen-path| {worst:.1e}, clean-logit grad exactly zero: {clean_zero}, frozen FD rel err {worst_fd:.1e}"
        ),
    )
}

fn zero_parameter_overhead() -> Outcome {
    let dcpt_cfg = DcptConfig::default();
    let base_cfg = dcpt_cfg.baseline();
    let a = initial_params(0, 768, dcpt_cfg.hidden).unwrap().param_count();
    let b = initial_params(0, 768, base_cfg.hidden).unwrap().param_count();
    let formula = 768 * 256 + 256 + 256 * 2 + 2;

    let data = gen_dataset(5, 20, 3).unwrap();
    let params = initial_params(0, FEATURE_DIM, 32).unwrap();
    let report = degradation_grid(&params, &DctEnergyExtractor, &data, &Condition::GRID).unwrap();
    let calls_ok = report.rows.iter().all(|r| r.forward_calls == data.len());
    outcome(
        a == b && a == 197_378 && a == formula && param_count_for(768, 256) == a && calls_ok,
        format!(
            "param_count dcpt {a} / baseline {b}; forward calls per condition {:?} for {} images",
            report.rows.iter().map(|r| r.forward_calls).collect::<Vec<_>>(),
            data.len()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut auc_mismatch = 0;
    let mut acc_mismatch = 0;
    for i in 0..1000 {
        let n = rng.random_range(2..70);
        let levels = rng.random_range(1..10);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=levels) as f64 / levels as f64).collect();
        if i < 500 && auc(&scores, &labels).unwrap() != brute_force_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
        if accuracy(&scores, &labels).unwrap() != recount_accuracy(&scores, &labels) {
            acc_mismatch += 1;
        }
    }
    outcome(
        auc_mismatch == 0 && acc_mismatch == 0,
        format!("AUC mismatches {auc_mismatch}/500 tied sets, accuracy mismatches {acc_mismatch}/1000"),
    )
}

fn degradation_pipeline() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // constants
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut const_ok = true;
    for _ in 0..50 {
        let rgb: [u8; 3] = rng.random();
        let img = Image::from_fn(32, 24, |_, _, c| rgb[c]).unwrap();
        for &sg in &BLUR_SIGMAS {
            const_ok &= gaussian_blur(&img, sg).unwrap() == img;
        }
        for &sc in &RESIZE_SCALES {
            const_ok &= resize_down_up(&img, sc).unwrap() == img;
        }
    }
    let mut jpeg_fixed = 0;
    let mut jpeg_checked = 0;
    for &q in &JPEG_QUALITIES {
        let step = scaled_table(&STD_LUMA_QTABLE, q)[0] as f64;
        for level in 0..=255u8 {
            let dc = 8.0 * (level as f64 - 128.0);
            // gray levels whose DC value is exactly representable
            if (dc / step).fract() != 0.0 {
                continue;
            }
            let img = Image::filled(24, 16, level).unwrap();
            jpeg_checked += 1;
            jpeg_fixed += (jpeg_roundtrip(&img, q).unwrap() == img) as usize;
        }
    }
    const_ok &= jpeg_checked > 0 && jpeg_fixed == jpeg_checked;
    pass &= const_ok;
    notes.push(format!(
        "constants fixed: {const_ok} (jpeg {jpeg_fixed}/{jpeg_checked} DC-representable grays)"
    ));

    // jpeg monotone error
    let images: Vec<Image> = (0..10)
        .map(|k| gaussian_blur(&random_image(700 + k, 48, 48), 1.0).unwrap())
        .collect();
    let errs: Vec<f64> = JPEG_QUALITIES
        .iter()
        .map(|&q| images.iter().map(|i| mse(i, &jpeg_roundtrip(i, q).unwrap())).sum::<f64>() / 10.0)
        .collect();
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    pass &= monotone;
    notes.push(format!(
        "mse q30..q90 {}",
        errs.iter().map(|e| format!("{e:.1}")).collect::<Vec<_>>().join("/")
    ));

    // variance
    let mut var_violations = 0;
    for k in 0..100 {
        let mut img = random_image(900 + k, 16 + (k as usize % 24), 16 + (k as usize * 7 % 24));
        if k % 2 == 0 {
            img = gaussian_blur(&img, 1.5).unwrap();
        }
        let outs: Vec<Image> = BLUR_SIGMAS
            .iter()
            .map(|&sg| gaussian_blur(&img, sg).unwrap())
            .chain(RESIZE_SCALES.iter().filter_map(|&sc| resize_down_up(&img, sc).ok()))
            .collect();
        for o in &outs {
            for c in 0..3 {
                var_violations += (channel_variance(o, c) > channel_variance(&img, c)) as usize;
            }
        }
    }
    pass &= var_violations == 0;
    notes.push(format!("variance increases {var_violations}"));

    // psnr vs reference
    let img = codec_test_image();
    let mut gaps = Vec::new();
    for &q in &JPEG_QUALITIES {
        let ours = psnr(&img, &jpeg_roundtrip(&img, q).unwrap());
        let reference = psnr(&img, &reference_jpeg(&img, q as u8));
        gaps.push(ours - reference);
    }
    pass &= gaps.iter().all(|g| g.abs() <= 1.5);
    notes.push(format!(
        "psnr gap vs reference {} dB",
        gaps.iter().map(|g| format!("{g:+.2}")).collect::<Vec<_>>().join("/")
    ));
    outcome(pass, notes.join("; "))
}

fn toy_reproduction() -> Outcome {
    let start = Instant::now();
    let train_set = gen_dataset(0, 2000, 9).unwrap();
    let eval_set = gen_dataset(1, 500, 9).unwrap();
    let cfg = DcptConfig { seed: 0, ..DcptConfig::default() };
    let mut reports = Vec::new();
    for c in [cfg.baseline(), cfg.clone()] {
        let trained = train(&c, &train_set, &DctEnergyExtractor).unwrap();
        reports.push(degradation_grid(&trained.params, &DctEnergyExtractor, &eval_set, &Condition::GRID).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let (base, dcpt) = (&reports[0], &reports[1]);
    let gain = dcpt.degraded_avg_acc - base.degraded_avg_acc;
    let clean_drop = base.acc(Condition::Clean).unwrap() - dcpt.acc(Condition::Clean).unwrap();
    outcome(
        gain >= 0.05 && clean_drop <= 0.03 && secs < 300.0,
        format!(
            "deg-avg baseline {:.2}% vs dcpt {:.2}% (gain {:+.2} pts, need ≥ +5), clean drop {:+.2} pts, {:.0}s",
            100.0 * base.degraded_avg_acc,
            100.0 * dcpt.degraded_avg_acc,
            100.0 * gain,
            100.0 * clean_drop,
            secs
        ),
    )
}

fn ablation_shape() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("ablation");
    let mut pass = cli(&["gen-data", "--seed", "0", "--n", "2000", "--out", s(&data)]) == EXIT_OK;
    pass &= cli(&["ablate", "--data", s(&data), "--out", s(&out), "--seed", "0"]) == EXIT_OK;
    let text = fs::read_to_string(out.join("ablation.csv")).unwrap_or_default();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();

    pass &= rows.len() == 4;
    let mut shape_ok = rows.len() == 4;
    for (r, &(name, lf, lp)) in rows.iter().zip(&ABLATION_VARIANTS) {
        shape_ok &= r[0] == name && num(r, 1) == lf && num(r, 2) == lp && r[3] == rows[0][3];
        let mean = (num(r, 5) + num(r, 6) + num(r, 7)) / 3.0;
        shape_ok &= (num(r, 8) - mean).abs() < 1e-12;
    }
    // every variant starts from the same head
    let tiny = gen_dataset(8, 8, 2).unwrap();
    let inits: Vec<HeadParams> = ABLATION_VARIANTS
        .iter()
        .map(|&(_, lambda_f, lambda_p)| {
            let c = DcptConfig { lambda_f, lambda_p, epochs: 1, hidden: 16, ..DcptConfig::default() };
            train(&c, &tiny, &DctEnergyExtractor).unwrap().initial
        })
        .collect();
    shape_ok &= inits.windows(2).all(|w| w[0] == w[1]);
    pass &= shape_ok;

    let jpeg_avg: Vec<f64> = rows.iter().map(|r| num(r, 8)).collect();
    let ordering_ok = jpeg_avg.len() == 4 && jpeg_avg[1] > jpeg_avg[0] && jpeg_avg[2] > jpeg_avg[0];
    pass &= ordering_ok;
    outcome(
        pass,
        format!(
            "table shape/λ/seed/init/avg column ok: {shape_ok}; JPEG-avg Baseline {:.2}% feat-only {:.2}% pred-only {:.2}% both {:.2}% (singles beat baseline: {ordering_ok})",
            100.0 * jpeg_avg.first().copied().unwrap_or(f64::NAN),
            100.0 * jpeg_avg.get(1).copied().unwrap_or(f64::NAN),
            100.0 * jpeg_avg.get(2).copied().unwrap_or(f64::NAN),
            100.0 * jpeg_avg.get(3).copied().unwrap_or(f64::NAN),
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut artifacts = Vec::new();
    for k in 0..2 {
        let root = tmp.path().join(format!("run{k}"));
        let (data, run_dir, eval) = (root.join("data"), root.join("train"), root.join("eval"));
        let ok = cli(&["gen-data", "--seed", "0", "--n", "150", "--out", s(&data)]) == EXIT_OK
            && cli(&["train", "--data", s(&data), "--out", s(&run_dir), "--seed", "0"]) == EXIT_OK
            && cli(&["eval", "--checkpoint", s(&run_dir.join("head.ckpt")), "--data", s(&data), "--out", s(&eval)]) == EXIT_OK;
        if !ok {
            return outcome(false, format!("run {k} failed"));
        }
        let read = |p: &Path| fs::read(p).unwrap();
        artifacts.push([
            read(&run_dir.join("head.ckpt")),
            read(&run_dir.join("epochs.csv")),
            read(&eval.join("grid_report.csv")),
            read(&eval.join("grid_report.json")),
        ]);
    }
    let same = artifacts[0] == artifacts[1];
    outcome(same, format!("checkpoint, epoch log and grid reports bit-identical: {same}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("loss bounds", loss_bounds),
        ("stop-gradient invariant", stop_gradient),
        ("zero parameter and inference overhead", zero_parameter_overhead),
        ("metric oracles", metric_oracles),
        ("degradation pipeline", degradation_pipeline),
        ("toy-scale robustness gain", toy_reproduction),
        ("ablation shape", ablation_shape),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "criterion {} [{}] {}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
    } else {
        let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
        println!(
            "acceptance: failing criteria {failed:?}{}",
            if strict { "" } else { " (report only; ACCEPTANCE_STRICT=1 makes this exit nonzero)" }
        );
        if strict {
            std::process::exit(1);
        }
    }
}
