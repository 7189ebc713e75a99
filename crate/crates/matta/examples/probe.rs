// probe: full FD gradient of the composite loss vs analytic, per tensor
use matta::diffcore::{Activation, Graph, Rng, Tensor};
use matta::losses::{composite_loss, distill_loss, soft_cross_entropy, LossWeights};
use matta::matlayers::{MatTAModel, ModelDims, Sharing};

/// Composite value with the distillation targets frozen at `p_ta0`: the
/// function whose true derivative the stop-gradient analytic gradient is.
fn composite_value(model: &MatTAModel, x: &Tensor, y: &Tensor, p_ta0: &Tensor, w: &LossWeights) -> f64 {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xt = g.leaf(x);
    let yt = g.leaf(y);
    let pt = g.leaf(p_ta0);
    let (ls, lta) = bound.forward(&mut g, &xt).unwrap();
    let l_s = soft_cross_entropy(&mut g, &ls, &yt).unwrap();
    let l_ta = soft_cross_entropy(&mut g, &lta, &yt).unwrap();
    let l_d = soft_cross_entropy(&mut g, &ls, &pt).unwrap();
    composite_loss(&mut g, w, &l_s, &l_ta, &l_d).unwrap().item().unwrap()
}

fn main() {
    let dims = ModelDims { d_in: 8, d: 8, h_s: 8, h_ta: 16, n_shared: 2, n_extra: 1, c: 2 };
    let model = MatTAModel::new(dims, Sharing::Shared, Activation::GeluTanh, &mut Rng::new(31)).unwrap();
    let mut rng = Rng::new(2024);
    let x = Tensor::randn(4, 8, 1.0, &mut rng);
    let raw = Tensor::randn(4, 2, 1.0, &mut rng).map(f64::exp);
    let mut y = Tensor::zeros(4, 2);
    for r in 0..4 {
        let s: f64 = raw.row(r).iter().sum();
        for c in 0..2 { y.set(r, c, raw.get(r, c) / s); }
    }
    let w = LossWeights { w_s: 1.0, w_ta: 1.0, w_d: 0.7 };
    let p_ta0 = model.forward_values(&x).unwrap().1.softmax_rows().unwrap();

    let analytic: Vec<(String, Tensor)> = {
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let xt = g.leaf(&x);
        let yt = g.leaf(&y);
        let (ls, lta) = bound.forward(&mut g, &xt).unwrap();
        let l_s = soft_cross_entropy(&mut g, &ls, &yt).unwrap();
        let l_ta = soft_cross_entropy(&mut g, &lta, &yt).unwrap();
        let l_d = distill_loss(&mut g, &ls, &lta).unwrap();
        let total = composite_loss(&mut g, &w, &l_s, &l_ta, &l_d).unwrap();
        let grads = g.backward(&total).unwrap();
        bound.named_tensors().into_iter().map(|(n, t)| (n, grads.get_or_zeros(t))).collect()
    };

    let h = 1e-5;
    for (name, a) in &analytic {
        if a.is_empty() { continue; }
        let mut worst = 0.0f64;
        let mut worst_idx = 0;
        let mut nbad = 0;
        for idx in 0..a.len() {
            let mut perturb = |delta: f64| {
                let mut m = model.clone();
                for (n, t) in m.named_tensors_mut() {
                    if n == *name { t.data_mut()[idx] += delta; }
                }
                composite_value(&m, &x, &y, &p_ta0, &w)
            };
            let numeric = (perturb(h) - perturb(-h)) / (2.0 * h);
            let av = a.data()[idx];
            let rel = (av - numeric).abs() / f64::max(1.0, av.abs());
            if rel > 1e-5 { nbad += 1; }
            if rel > worst { worst = rel; worst_idx = idx; }
        }
        println!("{name}: worst rel {worst:.3e} at [{worst_idx}], bad {nbad}/{}", a.len());
    }
}
