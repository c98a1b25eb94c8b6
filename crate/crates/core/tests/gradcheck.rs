//! Reverse-mode gradients against central finite differences (h = 1e-5).

use lqgan::autodiff::{ConvGeom, Graph, Tensor, Var};
use lqgan::rng::Streams;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-2)`; the floor keeps near-zero entries from
/// turning rounding noise into huge ratios.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

fn random(shape: &[usize], rng: &mut impl Rng, away_from_zero: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut x: f64 = rng.gen_range(-1.0..1.0);
            if away_from_zero && x.abs() < 0.1 {
                x += 0.2f64.copysign(x);
            }
            x
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `sum(f(inputs) * r)` for a fixed random `r` and compares the
/// gradient for every input entry with central differences.
fn check(name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = Streams::new(99).stream(name);
    let eval = |vals: &[Tensor], r: Option<&Tensor>| -> (f64, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let r = r.cloned().unwrap_or_else(|| Tensor::ones(&shape));
        let rv = g.constant(r.clone());
        let prod = g.mul(out, rv).unwrap();
        let loss = g.sum(prod).unwrap();
        (g.value(loss).item(), r)
    };
    // fix the weighting tensor once
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let r = random(&shape, &mut rng, false);
    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let rv = g.constant(r.clone());
        let prod = g.mul(out, rv).unwrap();
        let loss = g.sum(prod).unwrap();
        g.gradients(loss, &vars).unwrap()
    };
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= H;
            let fd = (eval(&plus, Some(&r)).0 - eval(&minus, Some(&r)).0) / (2.0 * H);
            worst = worst.max(rel_err(analytic[k].data()[j], fd));
        }
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

fn shapes2() -> [[usize; 2]; 3] {
    [[1, 1], [3, 4], [5, 2]]
}

#[test]
fn matmul_gradients() {
    let mut rng = Streams::new(1).stream("matmul");
    for [m, k] in shapes2() {
        let n = m + 1;
        let a = random(&[m, k], &mut rng, false);
        let b = random(&[k, n], &mut rng, false);
        check("matmul", vec![a, b], &|g, v| g.matmul(v[0], v[1]).unwrap());
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = Streams::new(2).stream("elementwise");
    for s in shapes2() {
        let a = random(&s, &mut rng, true);
        let b = random(&s, &mut rng, true);
        check("tanh", vec![a.clone()], &|g, v| g.tanh(v[0]));
        check("sigmoid", vec![a.clone()], &|g, v| g.sigmoid(v[0]));
        check("leaky_relu", vec![a.clone()], &|g, v| g.leaky_relu(v[0], 0.2));
        check("relu", vec![a.clone()], &|g, v| g.relu(v[0]));
        check("mul", vec![a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1]).unwrap());
        check("sub", vec![a.clone(), b.clone()], &|g, v| g.sub(v[0], v[1]).unwrap());
        let pos = a.map(|x| x.abs() + 0.5);
        check("sqrt", vec![pos.clone()], &|g, v| g.sqrt(v[0]));
        check("recip", vec![pos], &|g, v| g.recip(v[0]));
    }
}

#[test]
fn reduction_gradients() {
    let mut rng = Streams::new(3).stream("reduce");
    for s in shapes2() {
        let a = random(&s, &mut rng, false);
        check("sum", vec![a.clone()], &|g, v| g.sum(v[0]).unwrap());
        check("mean", vec![a.clone()], &|g, v| g.mean(v[0]).unwrap());
        check("sum_rows", vec![a.clone()], &|g, v| g.sum_to(v[0], &[1, s[1]]).unwrap());
        check("l2_norm", vec![a.clone()], &|g, v| g.row_l2_norm(v[0], 0.0).unwrap());
        let b = random(&[s[1]], &mut rng, false);
        check("broadcast", vec![b], &|g, v| g.broadcast_to(v[0], &[s[0], s[1]]).unwrap());
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = Streams::new(4).stream("conv");
    let cases = [
        ([1, 1, 4, 4], [2, 1, 4, 4], ConvGeom { stride: 2, pad: 1 }),
        ([2, 2, 6, 6], [3, 2, 4, 4], ConvGeom { stride: 2, pad: 1 }),
        ([1, 3, 5, 5], [2, 3, 3, 3], ConvGeom { stride: 1, pad: 0 }),
    ];
    for (xs, ws, geom) in cases {
        let x = random(&xs, &mut rng, false);
        let w = random(&ws, &mut rng, false);
        check("conv2d", vec![x, w], &|g, v| g.conv2d(v[0], v[1], geom).unwrap());
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = Streams::new(5).stream("convt");
    let cases = [
        ([1, 2, 2, 2], [2, 1, 4, 4], ConvGeom { stride: 2, pad: 1 }),
        ([2, 3, 3, 3], [3, 2, 4, 4], ConvGeom { stride: 2, pad: 1 }),
        ([1, 1, 4, 4], [1, 2, 3, 3], ConvGeom { stride: 1, pad: 1 }),
    ];
    for (xs, ws, geom) in cases {
        let x = random(&xs, &mut rng, false);
        let w = random(&ws, &mut rng, false);
        check("conv_transpose2d", vec![x, w], &|g, v| g.conv_transpose2d(v[0], v[1], geom).unwrap());
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = Streams::new(6).stream("bn");
    for s in [vec![3, 2], vec![2, 3, 2, 2], vec![4, 1, 3, 1]] {
        let x = random(&s, &mut rng, false);
        let c = s[1];
        let gamma = random(&[c], &mut rng, true);
        let beta = random(&[c], &mut rng, false);
        check("batch_norm", vec![x, gamma, beta], &|g, v| g.batch_norm(v[0], v[1], v[2], 1e-5).unwrap().0);
    }
}

#[test]
fn random_three_layer_mlp() {
    let mut rng = Streams::new(7).stream("mlp");
    for trial in 0..3 {
        let d = [3 + trial, 5, 4, 2];
        let x = random(&[4, d[0]], &mut rng, false);
        let mut inputs = vec![x];
        for l in 0..3 {
            inputs.push(random(&[d[l], d[l + 1]], &mut rng, false));
            inputs.push(random(&[d[l + 1]], &mut rng, false));
        }
        check("mlp", inputs, &|g, v| {
            let mut h = v[0];
            for l in 0..3 {
                h = g.linear(h, v[1 + 2 * l], v[2 + 2 * l]).unwrap();
                if l < 2 {
                    h = g.tanh(h);
                }
            }
            g.mean(h).unwrap()
        });
    }
}

/// Second-order: gradient of `||d sum(tanh(xW)) / dx||^2` with respect to W.
#[test]
fn double_backward_through_input_gradient() {
    let mut rng = Streams::new(8).stream("double");
    let x = random(&[3, 4], &mut rng, false);
    let w = random(&[4, 2], &mut rng, false);
    check("double_backward", vec![x, w], &|g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.tanh(h);
        let s = g.sum(h).unwrap();
        let gx = g.backward(s, &[v[0]], true).unwrap()[0];
        let n = g.row_l2_norm(gx, 0.0).unwrap();
        g.sum(n).unwrap()
    });
}
