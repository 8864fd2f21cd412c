mod common;

use common::*;
use rand::Rng;
use refsr_core::data::{bicubic_downsample, procedural_clip, procedural_texture};
use refsr_core::flow::*;
use refsr_core::graph::Graph;
use refsr_core::nn::{Init, ParamStore};
use refsr_core::video_sr::*;
use refsr_core::{ImageTensor, Tensor};

fn tiny() -> VsrConfig {
    VsrConfig { channels: 4, extract_blocks: 1, prop_blocks: 1, fusion_blocks: 1, flow_hidden: 4, ..Default::default() }
}

fn random_tensor(seed: u64, shape: [usize; 4]) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect())
}

fn inputs(clip: &[ImageTensor], seed: u64) -> ClipInputs {
    let (h, w) = (clip[0].height(), clip[0].width());
    let reference = procedural_texture(seed, 4 * h, 4 * w);
    clip_inputs(clip, &reference, RefSource::None, 1, &LkConfig::default()).unwrap()
}

#[test]
fn zero_flow_warp_is_identity_and_integer_flow_shifts() {
    let feat = random_tensor(1, [2, 3, 5, 6]);
    assert_eq!(flow_warp(&feat, &Tensor::zeros([2, 2, 5, 6])).unwrap(), feat);
    let mut flow = Tensor::zeros([1, 2, 5, 6]);
    flow.item_mut(0)[..30].iter_mut().for_each(|v| *v = 1.0);
    let f1 = random_tensor(2, [1, 1, 5, 6]);
    let out = flow_warp(&f1, &flow).unwrap();
    for y in 0..5 {
        for x in 0..6 {
            let want = if x + 1 < 6 { f1.at(0, 0, y, x + 1) } else { 0.0 };
            assert_eq!(out.at(0, 0, y, x), want);
        }
    }
    assert!(flow_warp(&feat, &Tensor::zeros([2, 2, 5, 5])).is_err());
}

#[test]
fn flow_of_identical_and_shifted_frames() {
    let clip = procedural_clip(3, 2, 32, 32, (2.0, 0.0));
    let same = estimate_flow(&clip[0], &clip[0]).unwrap();
    assert!(same.mean_magnitude(4) < 0.5);
    // frame1(p) = frame0(p + 2)
    let f = estimate_flow(&clip[1], &clip[0]).unwrap();
    assert!(f.is_finite());
    assert!(f.mean_error(4, (2.0, 0.0)) < 0.5, "{}", f.mean_error(4, (2.0, 0.0)));
}

#[test]
fn single_frame_propagation() {
    let m = RefVideoSr::new(tiny(), 1);
    let clip = procedural_clip(4, 1, 8, 8, (0.0, 0.0));
    let inp = inputs(&clip, 5);
    for dir in [Direction::Forward, Direction::Backward] {
        let h = m.hidden_states(&inp, dir).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].shape(), [1, 4, 8, 8]);
    }
    let out = restore_inputs(&m, &inp, true).unwrap();
    assert_eq!((out.len(), out[0].height()), (1, 32));
}

#[test]
fn propagation_is_causal_in_both_directions() {
    let m = RefVideoSr::new(tiny(), 2);
    let clip = procedural_clip(6, 5, 8, 8, (1.0, 0.5));
    let base = inputs(&clip, 7);
    let t = 2;
    let mut later = clip.clone();
    for f in &mut later[t + 1..] {
        f.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    let fwd_a = m.hidden_states(&base, Direction::Forward).unwrap();
    let fwd_b = m.hidden_states(&inputs(&later, 7), Direction::Forward).unwrap();
    assert_eq!(fwd_a[..=t], fwd_b[..=t]);
    assert_ne!(fwd_a[t + 1], fwd_b[t + 1]);

    let mut earlier = clip.clone();
    for f in &mut earlier[..t] {
        f.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    let bwd_a = m.hidden_states(&base, Direction::Backward).unwrap();
    let bwd_b = m.hidden_states(&inputs(&earlier, 7), Direction::Backward).unwrap();
    assert_eq!(bwd_a[t..], bwd_b[t..]);
    assert_ne!(bwd_a[t - 1], bwd_b[t - 1]);
}

#[test]
fn three_and_five_frame_shapes() {
    let m = RefVideoSr::new(tiny(), 3);
    let clip = procedural_clip(8, 3, 6, 10, (0.5, 0.0));
    let inp = inputs(&clip, 9);
    for dir in [Direction::Forward, Direction::Backward] {
        assert!(m.hidden_states(&inp, dir).unwrap().iter().all(|h| h.shape() == [1, 4, 6, 10]));
    }
    let clip = procedural_clip(10, 5, 32, 32, (1.0, 0.0));
    let out = restore_inputs(&m, &inputs(&clip, 11), true).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|f| (f.height(), f.width(), f.channels()) == (128, 128, 3)));
}

#[test]
fn attention_mask_limits() {
    let mut store = ParamStore::new();
    let head = AttentionHead::new(&mut store, &mut Init::new(1), "att", 3);
    let f = random_tensor(2, [1, 3, 4, 4]);
    let h = random_tensor(3, [1, 3, 4, 4]);
    let fuse = |store: &ParamStore| {
        let mut g = Graph::new();
        let (fv, hv) = (g.input(f.clone()), g.input(h.clone()));
        let y = attention_fuse(&mut g, store, &head, fv, hv).unwrap();
        let m = head.mask(&mut g, store, fv, hv);
        (g.value(y).clone(), g.value(m).clone())
    };
    // zero-initialised last layer: mask 0.5
    let (y, m) = fuse(&store);
    assert!(m.data().iter().all(|&v| v == 0.5));
    assert_eq!(y, h.map(|v| v * 0.5));
    // saturated bias: the hidden state passes unchanged
    store.get_mut(head.c2.b).value.data_mut().iter_mut().for_each(|v| *v = 100.0);
    assert_eq!(fuse(&store).0, h);
    // arbitrary weights keep the mask in [0, 1]
    let mut r = rng(4);
    store.get_mut(head.c2.w).value.data_mut().iter_mut().for_each(|v| *v = r.random_range(-5.0..5.0));
    store.get_mut(head.c2.b).value.data_mut().iter_mut().for_each(|v| *v = r.random_range(-5.0..5.0));
    assert!(fuse(&store).1.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let mut g = Graph::new();
    let (fv, hv) = (g.input(f.clone()), g.input(random_tensor(5, [1, 3, 4, 5])));
    assert!(attention_fuse(&mut g, &store, &head, fv, hv).is_err());
}

#[test]
fn zeroed_reference_branch_equals_baseline_bitwise() {
    let clip = procedural_clip(12, 3, 8, 8, (0.5, 0.5));
    let reference = procedural_texture(13, 32, 32);
    let inp = clip_inputs(&clip, &reference, RefSource::Flow, 1, &LkConfig::default()).unwrap();
    let mut m = RefVideoSr::new(tiny(), 4);
    // Make the reference head non-trivial so the branch is active.
    let att = m.store.find("att.ref.1.b").unwrap();
    m.store.get_mut(att).value.data_mut().iter_mut().for_each(|v| *v = 1.0);
    assert_ne!(restore_inputs(&m, &inp, true).unwrap(), restore_inputs(&m, &inp, false).unwrap());
    m.zero_reference_branch();
    assert_eq!(restore_inputs(&m, &inp, true).unwrap(), restore_inputs(&m, &inp, false).unwrap());
}

fn vsr_example(seed: u64) -> VsrExample {
    let hr = procedural_clip(seed, 4, 32, 32, (2.0, 1.0));
    let lr: Vec<ImageTensor> = hr.iter().map(|f| bicubic_downsample(f, 4).unwrap()).collect();
    let reference = procedural_texture(seed + 1, 32, 32);
    VsrExample::new(&lr, &hr, &reference, RefSource::Flow, 1, &LkConfig::default()).unwrap()
}

#[test]
fn training_is_deterministic_and_flow_stays_frozen() {
    let data = vec![vsr_example(20), vsr_example(21)];
    let cfg = VsrTrainConfig { steps: 3, batch_size: 2, window: 3, crop: 6, flow_freeze_iters: 3, learning_rate: 1e-3, ..Default::default() };
    let run = || {
        let mut m = RefVideoSr::new(tiny(), 5);
        let flow_before: Vec<Vec<f32>> = m.store.params().iter().filter(|p| p.name.starts_with("flow.")).map(|p| p.value.data().to_vec()).collect();
        let log = train_vsr(&mut m, &data, &cfg).unwrap();
        let flow_after: Vec<Vec<f32>> = m.store.params().iter().filter(|p| p.name.starts_with("flow.")).map(|p| p.value.data().to_vec()).collect();
        assert_eq!(flow_before, flow_after);
        (log, m.store.params().iter().map(|p| p.value.data().to_vec()).collect::<Vec<_>>())
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
    assert!(a.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn charbonnier_examples() {
    let a = ImageTensor::from_fn(4, 4, 3, |y, x, c| ((y + x + c) % 5) as f32 / 5.0);
    let l = charbonnier_loss(&[a.clone()], &[a.clone()]).unwrap();
    assert!((l - CHARBONNIER_EPS).abs() < 1e-20);
    let b = ImageTensor::from_fn(4, 4, 3, |y, x, c| a.get(y, x, c) + 0.3);
    let l = charbonnier_loss(&[b.clone()], &[a.clone()]).unwrap();
    assert!((l - 0.3).abs() < 1e-6);
    let mut r = rng(6);
    let p: Vec<ImageTensor> = (0..3).map(|_| ImageTensor::new(5, 5, 3, (0..75).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()).collect();
    let q: Vec<ImageTensor> = (0..3).map(|_| ImageTensor::new(5, 5, 3, (0..75).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()).collect();
    let mut want = 0.0;
    let mut n = 0;
    for (x, y) in p.iter().zip(&q) {
        for (u, v) in x.data().iter().zip(y.data()) {
            let d = *u as f64 - *v as f64;
            want += (d * d + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt();
            n += 1;
        }
    }
    want /= n as f64;
    assert!((charbonnier_loss(&p, &q).unwrap() - want).abs() < 1e-10);
    assert!(charbonnier_loss(&p[..2], &q).is_err());
}

#[test]
fn missing_matcher_is_configuration_error() {
    let m = RefVideoSr::new(tiny(), 1);
    let clip = procedural_clip(1, 2, 8, 8, (0.0, 0.0));
    assert!(matches!(restore_clip(&m, None, &clip, &clip[0]), Err(refsr_core::Error::Config(_))));
}
