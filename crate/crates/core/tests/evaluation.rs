use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbpn_core::config::ScaleFactor;
use rbpn_core::dataset::{SyntheticSequence, SyntheticSpec};
use rbpn_core::error::Error;
use rbpn_core::evaluation::ablation::AblationGrid;
use rbpn_core::evaluation::report::{text_table, to_json, write_csv};
use rbpn_core::evaluation::{
    evaluate_dataset, psnr, rgb_to_y, ssim, EvalProtocol, LumaPlane, Method, TierSpec, PSNR_CAP,
};
use rbpn_core::flow::{
    calibrate_thresholds, read_flo, stratify, write_flo, ExternalFlow, MotionTier, TierThresholds, ZeroFlow,
};
use rbpn_core::dataset::{load_dataset, DatasetKind};
use rbpn_core::{FlowField, Frame};

fn plane(h: usize, w: usize, seed: u64) -> LumaPlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LumaPlane::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn luma_of_primaries() {
    let y = |r, g, b| {
        let f = Frame::from_fn(1, 1, |c, _, _| [r, g, b][c]);
        rgb_to_y(&f).data[0]
    };
    assert!((y(1.0, 1.0, 1.0) - 235.0 / 255.0).abs() < 1e-12);
    assert!((y(0.0, 0.0, 0.0) - 16.0 / 255.0).abs() < 1e-12);
    assert!((y(0.0, 1.0, 0.0) - 144.553 / 255.0).abs() < 1e-12);
}

#[test]
fn identical_images_hit_the_cap() {
    let a = plane(12, 12, 0);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn border_crop_shrinks_each_side() {
    let a = plane(20, 17, 1);
    let c = a.crop_border(3).unwrap();
    assert_eq!((c.height, c.width), (14, 11));
    assert_eq!(c.get(0, 0), a.get(3, 3));
    assert!(a.crop_border(9).is_err());
    assert!(psnr(&a, &plane(20, 16, 2)).is_err());
}

#[test]
fn protocol_frame_counts() {
    assert_eq!(EvalProtocol::a().frame_range(12, 0, 0).len(), 3);
    assert_eq!(EvalProtocol::b().frame_range(41, 0, 0).len(), 37);
    assert_eq!(EvalProtocol::by_name("b").unwrap(), EvalProtocol::b());
    assert!(EvalProtocol::by_name("C").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric(h in 1usize..14, w in 1usize..14, seed in any::<u64>()) {
        let (a, b) = (plane(h, w, seed), plane(h, w, seed ^ 7));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn magnitude_ignores_orientation(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..h * w).map(|_| rng.random_range(-4.0..4.0)).collect();
        let v = (0..h * w).map(|_| rng.random_range(-4.0..4.0)).collect();
        let f = FlowField::from_components(h, w, u, v).unwrap();
        let m = f.mean_magnitude();
        let neg = FlowField::from_components(h, w, f.u().iter().map(|x| -x).collect(), f.v().iter().map(|x| -x).collect()).unwrap();
        for g in [neg, f.hflip(), f.vflip(), f.rot90()] {
            prop_assert!((g.mean_magnitude() - m).abs() < 1e-12);
        }
    }

    #[test]
    fn stratification_is_total(mags in proptest::collection::vec(0.0f64..20.0, 0..40)) {
        let tiers = stratify(&mags, &TierThresholds::DEFAULT);
        prop_assert_eq!(tiers.len(), mags.len());
        for (m, t) in mags.iter().zip(&tiers) {
            let want = if *m < TierThresholds::DEFAULT.slow_max {
                MotionTier::Slow
            } else if *m < TierThresholds::DEFAULT.medium_max {
                MotionTier::Medium
            } else {
                MotionTier::Fast
            };
            prop_assert_eq!(*t, want);
        }
    }
}

#[test]
fn magnitude_examples() {
    assert!((FlowField::uniform(3, 4, 3.0, 4.0).mean_magnitude() - 5.0).abs() < 1e-12);
    assert_eq!(TierThresholds::DEFAULT.tier(FlowField::zeros(2, 2).mean_magnitude()), MotionTier::Slow);
}

#[test]
fn calibration_reproduces_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mags: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..10.0)).collect();
    let t = calibrate_thresholds(&mags, [10, 30, 10]).unwrap();
    let tiers = stratify(&mags, &t);
    let count = |k| tiers.iter().filter(|&&x| x == k).count();
    assert_eq!([count(MotionTier::Slow), count(MotionTier::Medium), count(MotionTier::Fast)], [10, 30, 10]);
    assert!(calibrate_thresholds(&mags, [10, 30, 9]).is_err());
    assert!(calibrate_thresholds(&[1.0, 1.0, 2.0], [1, 1, 1]).is_err());
}

#[test]
fn malformed_flo_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.flo");
    write_flo(&FlowField::uniform(2, 3, 0.5, -1.0), &good).unwrap();
    let bytes = fs::read(&good).unwrap();

    let trunc = dir.path().join("t.flo");
    fs::write(&trunc, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(read_flo(&trunc), Err(Error::Format { .. })));

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    let magic = dir.path().join("m.flo");
    fs::write(&magic, &bad).unwrap();
    assert!(matches!(read_flo(&magic), Err(Error::Format { .. })));

    fs::write(&trunc, &bytes[..8]).unwrap();
    assert!(matches!(read_flo(&trunc), Err(Error::Format { .. })));
}

fn write_sequences(root: &Path, count: u64, frames: usize) {
    for i in 0..count {
        let seq = SyntheticSequence::generate(&SyntheticSpec::small(16, 16, frames), i);
        let dir = root.join(format!("s{i}"));
        fs::create_dir(&dir).unwrap();
        for (k, f) in seq.hr.iter().enumerate() {
            f.save_png(&dir.join(format!("{k:02}.png"))).unwrap();
        }
    }
}

#[test]
fn bicubic_dataset_report() {
    let root = tempfile::tempdir().unwrap();
    write_sequences(root.path(), 2, 7);
    let records = load_dataset(DatasetKind::FrameDir, root.path(), None, 7).unwrap();
    let tiers = TierSpec {
        thresholds: TierThresholds::DEFAULT,
        flows: &ZeroFlow,
    };
    let report = evaluate_dataset(Method::Bicubic, &records, &EvalProtocol::b(), ScaleFactor::X4, Some(tiers)).unwrap();
    assert_eq!(report.records.len(), 2 * 3);
    assert_eq!(report.sequences.len(), 2);
    assert_eq!(report.tiers.len(), 1);
    assert_eq!(report.tiers[0].name, "slow");
    let mean = report.records.iter().map(|r| r.psnr).sum::<f64>() / 6.0;
    assert!((report.overall.psnr - mean).abs() < 1e-9);
    assert!(report.overall.psnr > 15.0 && report.overall.psnr < PSNR_CAP);

    let table = text_table(&report);
    assert!(table.contains("s0") && table.contains("Average") && table.contains("slow"));
    let json: serde_json::Value = serde_json::from_str(&to_json(&report).unwrap()).unwrap();
    assert_eq!(json["overall"]["frames"], 6);
    let csv = root.path().join("m.csv");
    write_csv(&report.records, &csv).unwrap();
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 7);
}

#[test]
fn ablation_grid_over_context() {
    let grid: AblationGrid = toml::from_str("n = [2, 4]").unwrap();
    let base = rbpn_core::evaluation::ablation::ToyTrainConfig::default().base_model();
    let cells = grid.cells(&base);
    assert_eq!(cells.iter().map(|c| c.context_n).collect::<Vec<_>>(), [2, 4]);
    assert!(cells.iter().all(|c| c.order == base.order && c.use_flow == base.use_flow));
}

fn farneback() -> Option<ExternalFlow> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/farneback_flow.py");
    let ok = Command::new("python3").args(["-c", "import cv2, numpy"]).output().is_ok_and(|o| o.status.success());
    ok.then(|| ExternalFlow::new("python3", vec![script.display().to_string()]))
}

#[test]
fn external_estimator_sanity() {
    let Some(flow) = farneback() else {
        eprintln!("python3 with cv2 unavailable; skipping");
        return;
    };
    let spec = SyntheticSpec {
        max_speed: 0,
        ..SyntheticSpec::small(48, 64, 1)
    };
    let frame = SyntheticSequence::generate(&spec, 3).hr.remove(0);
    let still = flow.estimate(&frame, &frame).unwrap();
    assert_eq!((still.height(), still.width()), (48, 64));
    assert!(still.mean_magnitude() < 0.1, "{}", still.mean_magnitude());

    let shifted = Frame::from_fn(48, 64, |c, y, x| frame.get(c, y, x.saturating_sub(2)));
    let moving = flow.estimate(&frame, &shifted).unwrap();
    let interior: Vec<f64> = (8..40).flat_map(|y| (8..56).map(move |x| y * 64 + x)).map(|i| moving.u()[i]).collect();
    let mean_u = interior.iter().sum::<f64>() / interior.len() as f64;
    assert!((mean_u - 2.0).abs() < 0.5, "mean u {mean_u}");
}
