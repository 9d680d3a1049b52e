//! End-to-end gradient checks of every learned predictor's training loss.

mod common;

use common::*;
use polarpred::autodiff::Graph;
use polarpred::predictors::{BnMode, DeepLayout, Model, PredictorConfig, Variant};
use polarpred::{Real, Tensor};

/// Frames `[4,1,16,16]` forming triples (0,1,2) and (1,2,3).
fn frames(seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let base = natural_patch(&mut r, 20);
    let plane = |t: usize| Tensor::from_fn(&[16, 16], |i| base.data()[(i / 16 + t) * 20 + i % 16 + t]);
    Tensor::stack(&(0..4).map(plane).collect::<Vec<_>>()).unwrap().reshape(&[4, 1, 16, 16]).unwrap()
}

fn loss<T: Real>(cfg: &PredictorConfig, params: &[Tensor<f64>], x: &Tensor<f64>, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let init = Model::<T>::init(cfg, 0).unwrap();
    let named = init.names().iter().cloned().zip(params.iter().map(|p| p.cast())).collect();
    let model = Model::<T>::from_parts(cfg, named, init.bn_buffers().to_vec()).unwrap();
    let x = x.cast::<T>();
    let targets = Tensor::stack(&[x.index_axis0(2), x.index_axis0(3)]).unwrap();
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let f = model.forward(&mut g, &vars, &x, &[(0, 1), (1, 2)], BnMode::Train).unwrap();
    let l = g.trimmed_mse(f.pred, &targets, f.margin, 1).unwrap();
    let value = g.value(l).item().unwrap().as_f64();
    if !grads {
        return (value, Vec::new());
    }
    let gr = g.backward(l).unwrap();
    let gs = vars.iter().map(|&v| gr.wrt(v).data().iter().map(|a| a.as_f64()).collect()).collect();
    (value, gs)
}

/// Worst relative error over parameter tensors, f32 and f64 analytic
/// gradients against f64 central differences.
fn check(cfg: PredictorConfig, seed: u64) -> (f64, f64) {
    let params: Vec<Tensor<f64>> = Model::<f64>::init(&cfg, seed).unwrap().params().to_vec();
    let x = frames(seed);
    let numeric = numeric_grad(|p| loss::<f64>(&cfg, p, &x, false).0, &params, 1e-6);
    let worst = |a: Vec<Vec<f64>>| a.iter().zip(&numeric).map(|(a, n)| rel_err(a, n)).fold(0.0, f64::max);
    (worst(loss::<f32>(&cfg, &params, &x, true).1), worst(loss::<f64>(&cfg, &params, &x, true).1))
}

fn assert_grads(cfg: PredictorConfig) {
    for seed in 0..2 {
        let (e32, e64) = check(cfg.clone(), seed);
        assert!(e32 < 1e-3 && e64 < 1e-6, "{} seed {seed}: f32 {e32:.2e}, f64 {e64:.2e}", cfg.variant);
    }
}

#[test]
fn pp_gradients() {
    assert_grads(PredictorConfig {
        channels: 4,
        pp_kernel: 5,
        ..PredictorConfig::new(Variant::Pp)
    });
}

#[test]
fn deep_gradients() {
    for variant in [Variant::DeepPp, Variant::DeepL] {
        for centered in [false, true] {
            assert_grads(PredictorConfig {
                channels: 4,
                deep_layout: DeepLayout::Custom { layers: 3, kernel: 3 },
                bn_centered: centered,
                ..PredictorConfig::new(variant)
            });
        }
    }
}

#[test]
fn cnn_gradients() {
    assert_grads(PredictorConfig {
        channels: 4,
        cnn_stages: 4,
        ..PredictorConfig::new(Variant::Cnn)
    });
}
