mod common;

use common::gradcheck;

const TOL: f64 = 1e-3;
const INSTANCES: usize = 24;

fn check(name: &str, errs: Vec<f64>) {
    assert!(errs.len() >= 20, "{name}: only {} instances", errs.len());
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= TOL, "{name}: worst relative error {worst:e}");
}

#[test]
fn margin_gradient() {
    check("margin", gradcheck::margin(INSTANCES, 1));
}

#[test]
fn kl_gradient() {
    check("kl", gradcheck::kl(INSTANCES, 2));
}

#[test]
fn charbonnier_gradient() {
    check("charbonnier", gradcheck::charbonnier_check(INSTANCES, 3));
}

#[test]
fn perceptual_identity_gradient() {
    check("perceptual", gradcheck::perceptual_identity(INSTANCES, 4));
}

#[test]
fn dynamic_aggregation_gradient() {
    check("aggregation", gradcheck::dynamic_aggregation(INSTANCES, 5));
}

// Descriptor normalisation runs only in the f32 graph; checked there with a
// looser tolerance.
fn normalised_loss(x: &[f32], proj: &[f32], shape: [usize; 4]) -> (f64, Vec<f32>) {
    use refsr_core::graph::Graph;
    use refsr_core::Tensor;
    let mut g = Graph::new();
    let v = g.leaf(Tensor::from_vec(shape, x.to_vec()));
    let c = g.center_spatial(v);
    let u = g.unit_channels(c, 1e-8);
    let p = g.input(Tensor::from_vec(shape, proj.to_vec()));
    let m = g.mul(u, p);
    let l = g.mean(m);
    g.backward(l);
    (g.scalar(l) as f64, g.grad(v).unwrap().data().to_vec())
}

#[test]
fn descriptor_normalisation_gradient() {
    let shape = [2, 3, 3, 2];
    let n: usize = shape.iter().product();
    let mut errs = Vec::new();
    for k in 0..INSTANCES as u64 {
        let mut r = common::rng(100 + k);
        let x: Vec<f32> = common::uniform(&mut r, n).iter().map(|&v| (2.0 * v - 1.0) as f32).collect();
        let proj: Vec<f32> = common::uniform(&mut r, n).iter().map(|&v| (2.0 * v - 1.0) as f32).collect();
        let (_, an) = normalised_loss(&x, &proj, shape);
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let fd = common::fd_grad(&x64, 1e-3, |y| {
            let y: Vec<f32> = y.iter().map(|&v| v as f32).collect();
            normalised_loss(&y, &proj, shape).0
        });
        let an: Vec<f64> = an.iter().map(|&v| v as f64).collect();
        errs.push(common::rel_err(&fd, &an));
    }
    assert!(errs.len() >= 20);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 2e-2, "worst relative error {worst:e}");
}
