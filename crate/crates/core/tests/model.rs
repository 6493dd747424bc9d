mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbpn_core::config::{Integration, ModelConfig, PfSequence, ScaleFactor, TemporalOrder};
use rbpn_core::context::{plan_context, plan_context_clamped};
use rbpn_core::dataset::bicubic_resize;
use rbpn_core::error::Error;
use rbpn_core::model::{Architecture, VsrModel};
use rbpn_core::nn::archive::DType;
use rbpn_core::training::batch_gradients;
use rbpn_core::{FlowField, Frame};
use rbpn_tensor::{ParamGrads, Tape, Tensor};

fn inputs(n: usize, h: usize, w: usize, seed: u64) -> (Frame, Vec<Frame>, Vec<FlowField>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = || Frame::from_fn(h, w, |_, _, _| rng.random::<f64>());
    let target = frame();
    let nbs = (0..n).map(|_| frame()).collect();
    let flows = (0..n).map(|k| FlowField::uniform(h, w, 0.5 * k as f64, -0.25)).collect();
    (target, nbs, flows)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn concat_and_last_agree_for_one_neighbour() {
    let (t, nbs, flows) = inputs(1, 5, 6, 0);
    let run = |integration| {
        let cfg = ModelConfig { integration, ..common::tiny_config(4, ScaleFactor::X4, 1) };
        let m = VsrModel::new(Architecture::Rbpn, cfg.validate().unwrap(), 7).unwrap();
        m.infer(&t, &nbs, &flows, false).unwrap().sr_frame
    };
    assert_eq!(bits(run(Integration::Concat).tensor()), bits(run(Integration::Last).tensor()));
}

#[test]
fn zero_weights_with_residual_learning_give_bicubic() {
    let cfg = ModelConfig { residual_learning: true, ..common::tiny_config(4, ScaleFactor::X4, 2) };
    let mut m = VsrModel::new(Architecture::Rbpn, cfg.validate().unwrap(), 1).unwrap();
    for (_, _, p) in m.params_mut().iter_mut() {
        p.fill(0.0);
    }
    let (t, nbs, flows) = inputs(2, 6, 5, 2);
    let sr = m.infer(&t, &nbs, &flows, false).unwrap().sr_frame;
    let up = bicubic_resize(t.tensor(), 4.0).unwrap();
    assert_eq!(bits(sr.tensor()), bits(&up));
}

#[test]
fn forward_is_deterministic() {
    let (t, nbs, flows) = inputs(2, 4, 4, 3);
    let a = common::tiny_model(4, ScaleFactor::X2, 2, 9);
    let b = common::tiny_model(4, ScaleFactor::X2, 2, 9);
    let ra = a.infer(&t, &nbs, &flows, true).unwrap();
    let rb = b.infer(&t, &nbs, &flows, true).unwrap();
    assert_eq!(bits(ra.sr_frame.tensor()), bits(rb.sr_frame.tensor()));
    assert_eq!(ra.per_step_h.as_ref().unwrap().len(), 2);
}

#[test]
fn identical_frames_are_well_defined() {
    let (t, _, _) = inputs(0, 4, 4, 4);
    let m = common::tiny_model(4, ScaleFactor::X4, 2, 0);
    let nbs = vec![t.clone(), t.clone()];
    let flows = vec![FlowField::zeros(4, 4); 2];
    let a = m.infer(&t, &nbs, &flows, true).unwrap();
    let b = m.infer(&t, &nbs, &flows, true).unwrap();
    assert!(a.per_step_h.unwrap().iter().all(Tensor::is_finite));
    assert_eq!(bits(a.sr_frame.tensor()), bits(b.sr_frame.tensor()));
}

#[test]
fn zero_context_is_single_image() {
    let (t, _, _) = inputs(0, 3, 4, 5);
    let m = common::tiny_model(4, ScaleFactor::X8, 0, 0);
    assert_eq!(m.infer(&t, &[], &[], false).unwrap().sr_frame.tensor().shape(), &[3, 24, 32]);
}

#[test]
fn arity_and_shape_errors() {
    let m = common::tiny_model(4, ScaleFactor::X2, 2, 0);
    let (t, nbs, flows) = inputs(2, 4, 4, 6);
    assert!(matches!(m.infer(&t, &nbs[..1], &flows, false), Err(Error::Arity { .. })));
    assert!(matches!(m.infer(&t, &nbs, &flows[..1], false), Err(Error::Arity { .. })));
    let wide = vec![Frame::zeros(4, 5), Frame::zeros(4, 4)];
    assert!(matches!(m.infer(&t, &wide, &flows, false), Err(Error::Shape(_))));
}

#[test]
fn projection_weights_do_not_grow_with_context() {
    let count = |n, integration| {
        let cfg = ModelConfig { integration, ..common::tiny_config(4, ScaleFactor::X4, n) };
        VsrModel::new(Architecture::Rbpn, cfg.validate().unwrap(), 0).unwrap().param_count()
    };
    assert_eq!(count(2, Integration::Last), count(6, Integration::Last));
    // only the reconstruction input widens: 4 more c_h = 4 maps into a 3x3 conv to 3 channels
    assert_eq!(count(6, Integration::Concat) - count(2, Integration::Concat), 4 * 4 * 9 * 3);
}

#[test]
fn every_subnet_receives_gradient() {
    let m = common::tiny_model(4, ScaleFactor::X4, 2, 3);
    let (t, nbs, flows) = inputs(2, 6, 6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = rbpn_core::dataset::TrainSample {
        lr_target: t,
        lr_neighbors: nbs,
        flows,
        hr_target: Frame::from_fn(24, 24, |_, _, _| rng.random::<f64>()),
        origin: (0, 0),
    };
    let (_, grads) = batch_gradients(&m, &[sample]).unwrap();
    for prefix in ["feat_l", "feat_m", "sisr", "misr", "res", "dec", "rec"] {
        let norm: f64 = m
            .params()
            .iter()
            .filter(|(_, name, _)| name.starts_with(prefix))
            .map(|(id, _, _)| grads.get(id).max_abs())
            .fold(0.0, f64::max);
        assert!(norm > 0.0, "{prefix} has zero gradient");
    }
}

#[test]
fn decoder_gradient_matches_finite_differences() {
    let m = common::tiny_model(4, ScaleFactor::X2, 2, 2);
    let module = m.projection().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = Tensor::from_fn(&[4, 8, 8], |_| rng.random_range(-1.0..1.0));
    let mean_l = |x: &Tensor| {
        let mut tape = Tape::new(m.params());
        let v = tape.leaf(x.clone());
        let l = module.decode(&mut tape, v).unwrap();
        tape.value(l).mean()
    };
    let mut tape = Tape::new(m.params());
    let v = tape.leaf(h.clone());
    let l = module.decode(&mut tape, v).unwrap();
    let numel = tape.value(l).numel();
    assert_eq!(tape.value(l).shape(), &[4, 4, 4]);
    let seed = Tensor::full(tape.value(l).shape(), 1.0 / numel as f64);
    let mut pg = ParamGrads::zeros_like(m.params());
    let grads = tape.backward(l, seed, &mut pg).unwrap();
    let analytic = grads.get(v).unwrap();
    let eps = 1e-6;
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for j in (0..h.numel()).step_by(7) {
        let mut up = h.clone();
        up.data_mut()[j] += eps;
        let mut down = h.clone();
        down.data_mut()[j] -= eps;
        let fd = (mean_l(&up) - mean_l(&down)) / (2.0 * eps);
        diff = diff.max((analytic.data()[j] - fd).abs());
        norm = norm.max(fd.abs());
    }
    assert!(diff / norm < 1e-3, "rel err {}", diff / norm);
}

#[test]
fn save_and_load_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::tiny_model(4, ScaleFactor::X4, 2, 12);
    m.save(dir.path(), DType::F64).unwrap();
    let back = VsrModel::load(dir.path()).unwrap();
    let (t, nbs, flows) = inputs(2, 4, 5, 1);
    let a = m.infer(&t, &nbs, &flows, false).unwrap().sr_frame;
    let b = back.infer(&t, &nbs, &flows, false).unwrap().sr_frame;
    assert_eq!(bits(a.tensor()), bits(b.tensor()));

    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"context_n\": 2", "\"context_n\": 4")).unwrap();
    assert!(VsrModel::load(dir.path()).is_err());
}

#[test]
fn context_examples() {
    let plan = |order| plan_context(10, 6, order, PfSequence::Alternating, 0, 20).unwrap().neighbors;
    assert_eq!(plan(TemporalOrder::P), [9, 8, 7, 6, 5, 4]);
    assert_eq!(plan(TemporalOrder::PF), [9, 11, 8, 12, 7, 13]);
    let ptf = plan_context(10, 6, TemporalOrder::PF, PfSequence::PastThenFuture, 0, 20).unwrap();
    assert_eq!(ptf.neighbors, [9, 8, 7, 11, 12, 13]);
    assert!(matches!(plan_context(2, 6, TemporalOrder::P, PfSequence::Alternating, 0, 20), Err(Error::Range(_))));
    assert!(plan_context(10, 3, TemporalOrder::PF, PfSequence::Alternating, 0, 20).is_err());

    let edge = plan_context_clamped(1, 4, TemporalOrder::PF, PfSequence::Alternating, 0, 4).unwrap();
    assert_eq!(edge.neighbors, [0, 2, 0, 3]);
    assert_eq!(edge.replicated, [false, false, true, false]);
}

proptest! {
    #[test]
    fn plan_properties(t in 0usize..40, half in 0usize..5, seed in any::<u64>()) {
        let n = 2 * half;
        let len = 60;
        prop_assume!(t >= n && t + n < len);
        let get = |o| plan_context(t, n, o, PfSequence::Alternating, seed, len).unwrap().neighbors;
        let (p, pr, pf) = (get(TemporalOrder::P), get(TemporalOrder::PR), get(TemporalOrder::PF));
        for plan in [&p, &pr, &pf] {
            prop_assert_eq!(plan.len(), n);
            prop_assert!(!plan.contains(&t));
        }
        prop_assert_eq!(&p, &(1..=n).map(|k| t - k).collect::<Vec<_>>());
        let (mut a, mut b) = (p.clone(), pr.clone());
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(&a, &b);
        let mut f = pf.clone();
        f.sort_unstable();
        let want: Vec<usize> = (t - half..t).chain(t + 1..=t + half).collect();
        prop_assert_eq!(&f, &want);
        if n >= 2 {
            prop_assert_ne!(&f, &a);
        }
    }

    #[test]
    fn clamped_plans_stay_in_range(t in 0usize..8, half in 0usize..4, len in 1usize..9) {
        prop_assume!(t < len);
        let plan = plan_context_clamped(t, 2 * half, TemporalOrder::PF, PfSequence::Alternating, 0, len).unwrap();
        prop_assert!(plan.neighbors.iter().all(|&k| k < len));
        for (&k, &rep) in plan.neighbors.iter().zip(&plan.replicated) {
            prop_assert!(!rep || k == 0 || k == len - 1);
        }
    }
}
