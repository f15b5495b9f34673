use rand::SeedableRng;

use super::*;
use crate::rng::Rng;
use crate::numerics::gradcheck::{check_inputs, check_inputs_on, check_params};

const SEEDS: u64 = 20;

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// `sum(out ⊙ R)` for a fixed random `R`, so no op's output sum is trivially constant.
fn project(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(Tensor::randn(&shape, 1.0, &mut rng(seed ^ 0xABCD)));
    let prod = tape.mul(out, r).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let a = Tensor::randn(&[3, 4], 1.0, &mut g);
        let b = Tensor::randn(&[4, 2], 1.0, &mut g);
        let err = check_inputs(&[a.clone(), b.clone()], |t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            t.sum(c)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
        let err = check_inputs(&[a, b.transpose().unwrap()], |t, v| {
            let c = t.matmul_nt(v[0], v[1]).unwrap();
            project(t, c, seed)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn elementwise_and_structural_gradients() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let x = Tensor::randn(&[3, 4], 1.0, &mut g);
        let y = Tensor::randn(&[3, 4], 1.0, &mut g);
        let b = Tensor::randn(&[4], 1.0, &mut g);
        let checks: Vec<(&str, f64)> = vec![
            ("gelu", check_inputs(&[x.clone()], |t, v| {
                let o = t.gelu(v[0]);
                project(t, o, seed)
            })),
            ("sigmoid", check_inputs(&[x.clone()], |t, v| {
                let o = t.sigmoid(v[0]);
                project(t, o, seed)
            })),
            ("softmax", check_inputs(&[x.clone()], |t, v| {
                let o = t.softmax(v[0]);
                project(t, o, seed)
            })),
            ("mul", check_inputs(&[x.clone(), y.clone()], |t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                project(t, o, seed)
            })),
            ("add_row", check_inputs(&[x.clone(), b.clone()], |t, v| {
                let o = t.add_row(v[0], v[1]).unwrap();
                project(t, o, seed)
            })),
            ("slice_concat", check_inputs(&[x.clone()], |t, v| {
                let a = t.slice_cols(v[0], 0, 1).unwrap();
                let c = t.slice_cols(v[0], 1, 3).unwrap();
                let o = t.concat_cols(&[c, a, c]).unwrap();
                project(t, o, seed)
            })),
            ("gather", check_inputs(&[x.clone()], |t, v| {
                let o = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
                project(t, o, seed)
            })),
            ("mean_scale", check_inputs(&[x.clone()], |t, v| {
                let o = t.scale(v[0], 3.0);
                let p = t.mul(o, o).unwrap();
                t.mean(p)
            })),
        ];
        for (name, err) in checks {
            assert!(err < 1e-5, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn dropout_gradient_with_a_replayed_mask() {
    let empty = ParamStore::new();
    for seed in 0..SEEDS {
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng(seed));
        let err = check_inputs_on(&[x], || Tape::training(&empty, rng(seed + 100)), |t, v| {
            let o = t.dropout(v[0], 0.3);
            project(t, o, seed)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let x = Tensor::randn(&[3, 5], 1.0, &mut g);
        let gain = Tensor::randn(&[5], 1.0, &mut g);
        let bias = Tensor::randn(&[5], 1.0, &mut g);
        let err = check_inputs(&[x, gain, bias], |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2], 1e-6).unwrap();
            project(t, o, seed)
        });
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(&[1, 4], vec![5.0; 4]).unwrap());
    let g = t.constant(Tensor::ones(&[4]));
    let b = t.constant(Tensor::zeros(&[4]));
    let o = t.layer_norm(x, g, b, 1e-6).unwrap();
    assert_eq!(t.value(o).data(), &[0.0; 4]);

    let x = t.constant(Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap());
    let g = t.constant(Tensor::ones(&[2]));
    let b = t.constant(Tensor::zeros(&[2]));
    let o = t.layer_norm(x, g, b, 1e-12).unwrap();
    for (v, e) in t.value(o).data().iter().zip([1.0, -1.0]) {
        assert!((v - e).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::randn(&[4, 16], 3.0, &mut g));
        let gain = t.constant(Tensor::ones(&[16]));
        let bias = t.constant(Tensor::zeros(&[16]));
        let o = t.layer_norm(x, gain, bias, 1e-12).unwrap();
        let out = t.value(o);
        for r in 0..4 {
            let row = out.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn gelu_examples() {
    assert_eq!(gelu(0.0f64), 0.0);
    assert!((gelu(10.0f64) - 10.0).abs() < 1e-6);
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let logits = Tensor::randn(&[4, 6], 1.0, &mut g);
        let err = check_inputs(&[logits], |t, v| {
            t.smoothed_nll(v[0], &[Some(1), None, Some(5), Some(0)], 0.1).unwrap()
        });
        assert!(err < 1e-5, "nll seed {seed}: {err}");

        let z = Tensor::randn(&[5, 1], 1.0, &mut g);
        let labels = [1.0, 0.0, 0.0, 1.0, 0.0];
        let err = check_inputs(&[z], |t, v| {
            let p = t.sigmoid(v[0]);
            t.bce(p, &labels, 1.5).unwrap()
        });
        assert!(err < 1e-5, "bce seed {seed}: {err}");
    }
}

#[test]
fn smoothed_nll_edge_cases() {
    let mut t = Tape::<f64>::new();
    let uniform = t.constant(Tensor::zeros(&[1, 2]));
    let l = t.smoothed_nll(uniform, &[Some(0)], 0.0).unwrap();
    assert!((t.value(l).item() - 2f64.ln()).abs() < 1e-15);
    let uniform = t.constant(Tensor::zeros(&[3, 7]));
    for eps in [0.0, 0.1, 0.5] {
        let l = t.smoothed_nll(uniform, &[Some(0), Some(3), Some(6)], eps).unwrap();
        assert!((t.value(l).item() - 7f64.ln()).abs() < 1e-12);
    }
    assert!(matches!(t.smoothed_nll(uniform, &[None, None, None], 0.1), Err(crate::Error::Input(_))));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::<f64>::new();
    let mut g = rng(1);
    let p = store.insert("p", Tensor::randn(&[2, 3], 1.0, &mut g)).unwrap();

    let mut t = Tape::with_params(&store);
    let v = t.param(p);
    let l = t.sum(v);
    let grads = t.backward(l).unwrap();
    assert_eq!(grads.param(p).unwrap().data(), &[1.0; 6]);

    let mut t = Tape::with_params(&store);
    let v = t.param(p);
    let sq = t.mul(v, v).unwrap();
    let l = t.sum(sq);
    let grads = t.backward(l).unwrap();
    let expected = store.get(p).scale(2.0);
    assert_eq!(grads.param(p).unwrap(), &expected);

    let err = t.backward(sq).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn backward_visits_in_reverse_order_and_covers_unused_params() {
    let mut store = ParamStore::<f64>::new();
    let a = store.insert("a", Tensor::ones(&[2])).unwrap();
    let b = store.insert("b", Tensor::ones(&[3])).unwrap();
    let mut t = Tape::with_params(&store);
    let va = t.param(a);
    let _vb = t.param(b);
    let s = t.scale(va, 2.0);
    let l = t.sum(s);
    let grads = t.backward(l).unwrap();
    let order = grads.visit_order();
    assert!(order.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(order[0], l.index());
    assert_eq!(grads.param(b).unwrap().shape(), &[3]);
    assert_eq!(grads.param(b).unwrap().data(), &[0.0; 3]);
}

#[test]
fn random_two_layer_composite() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let x = Tensor::randn(&[3, 4], 1.0, &mut g);
        let w1 = Tensor::randn(&[4, 5], 0.5, &mut g);
        let b1 = Tensor::randn(&[5], 0.5, &mut g);
        let w2 = Tensor::randn(&[5, 2], 0.5, &mut g);
        let err = check_inputs(&[x, w1, b1, w2], |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_row(h, v[2]).unwrap();
            let h = t.gelu(h);
            let o = t.matmul(h, v[3]).unwrap();
            let o = t.softmax(o);
            project(t, o, seed)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn identity_attention(store: &mut ParamStore, width: usize) -> AttentionWeights {
    let mut g = rng(0);
    let w = AttentionWeights::init(store, "attn", width, 1, &mut g).unwrap();
    let mut eye = Tensor::zeros(&[width, width]);
    for i in 0..width {
        eye.data_mut()[i * width + i] = 1.0;
    }
    for lin in [w.query, w.key, w.value, w.output] {
        store.replace(lin.weight, eye.clone());
    }
    w
}

#[test]
fn attention_examples() {
    let mut store = ParamStore::<f64>::new();
    let w = identity_attention(&mut store, 2);

    // single position: output is the value vector
    let mut t = Tape::with_params(&store);
    let x = t.constant(Tensor::new(&[1, 2], vec![0.3, -0.7]).unwrap());
    let bias = t.constant(AttentionMask::full(1, 1).to_bias());
    let o = w.forward(&mut t, x, x, bias, Dropout::NONE).unwrap();
    assert_eq!(t.value(o).data(), &[0.3, -0.7]);

    // query orthogonal to both keys: mean of values
    let mut t = Tape::with_params(&store);
    let q = t.constant(Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
    let kv = t.constant(Tensor::new(&[2, 2], vec![2.0, 0.0, -4.0, 0.0]).unwrap());
    let bias = t.constant(AttentionMask::full(1, 2).to_bias());
    let o = w.forward(&mut t, q, kv, bias, Dropout::NONE).unwrap();
    assert!((t.value(o).data()[0] - (-1.0)).abs() < 1e-12);

    // masked to one key
    let mut t = Tape::with_params(&store);
    let kv = t.constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mask = AttentionMask::new(3, 3, [false, true, false].repeat(3)).unwrap();
    let bias = t.constant(mask.to_bias());
    let o = w.forward(&mut t, kv, kv, bias, Dropout::NONE).unwrap();
    for r in 0..3 {
        assert_eq!(t.value(o).row(r), &[3.0, 4.0]);
    }

    // width mismatch
    let mut t = Tape::with_params(&store);
    let bad = t.constant(Tensor::zeros(&[1, 3]));
    let bias = t.constant(AttentionMask::full(1, 1).to_bias());
    assert!(matches!(
        w.forward(&mut t, bad, bad, bias, Dropout::NONE),
        Err(crate::Error::Dimension { .. })
    ));
}

#[test]
fn fully_masked_row_rejected() {
    assert!(AttentionMask::new(2, 2, vec![true, false, false, false]).is_err());
}

#[test]
fn feed_forward_examples() {
    let mut store = ParamStore::<f64>::new();
    let mut g = rng(0);
    let ffn = FeedForward::init(&mut store, "ffn", 3, 4, &mut g);
    for id in [ffn.inner.weight, ffn.inner.bias, ffn.outer.weight] {
        let shape = store.get(id).shape().to_vec();
        store.replace(id, Tensor::zeros(&shape));
    }
    store.replace(ffn.outer.bias, Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let mut t = Tape::with_params(&store);
    let x = t.constant(Tensor::randn(&[2, 3], 1.0, &mut g));
    let o = ffn.forward(&mut t, x, Dropout::NONE).unwrap();
    assert_eq!(t.value(o).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);

    let mut store = ParamStore::<f64>::new();
    let ffn = FeedForward::init(&mut store, "ffn", 1, 1, &mut g);
    store.replace(ffn.inner.weight, Tensor::ones(&[1, 1]));
    store.replace(ffn.outer.weight, Tensor::ones(&[1, 1]));
    let mut t = Tape::with_params(&store);
    let x = t.constant(Tensor::zeros(&[1, 1]));
    let o = ffn.forward(&mut t, x, Dropout::NONE).unwrap();
    assert_eq!(t.value(o).item(), 0.0);
}

#[test]
fn feed_forward_gradient() {
    for seed in 0..SEEDS {
        let mut g = rng(seed);
        let mut store = ParamStore::<f64>::new();
        let ffn = FeedForward::init(&mut store, "ffn", 4, 6, &mut g);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.replace(id, Tensor::randn(&shape, 0.5, &mut g));
        }
        let x = Tensor::randn(&[3, 4], 1.0, &mut g);
        let ids: Vec<_> = store.ids().collect();
        let err = check_params(&store, &ids, |t| {
            let xv = t.constant(x.clone());
            let o = ffn.forward(t, xv, Dropout::NONE).unwrap();
            project(t, o, seed)
        });
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

fn random_layer(seed: u64, width: usize, heads: usize) -> (ParamStore, TransformerLayer) {
    let mut g = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let layer = TransformerLayer::init(&mut store, "layer", width, heads, 2 * width, &mut g).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        let name = store.name(id).to_string();
        let std = if name.ends_with("gain") { 0.2 } else { 0.4 };
        let mut t = Tensor::randn(&shape, std, &mut g);
        if name.ends_with("gain") {
            t = t.map(|v| v + 1.0);
        }
        store.replace(id, t);
    }
    (store, layer)
}

#[test]
fn transformer_layer_gradient_three_tokens_width_eight() {
    for seed in 0..SEEDS {
        let (mut store, layer) = random_layer(seed, 8, 2);
        let x = store.insert("input", Tensor::randn(&[3, 8], 1.0, &mut rng(seed + 100))).unwrap();
        let ids: Vec<_> = store.ids().collect();
        let mask = AttentionMask::keys_valid(3, &[true, true, false]).unwrap();
        let err = check_params(&store, &ids, |t| {
            let xv = t.param(x);
            let bias = t.constant(mask.to_bias());
            let o = layer.forward(t, xv, bias, Dropout::NONE).unwrap();
            project(t, o, seed)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn transformer_layer_shape_and_smoke() {
    let mut g = rng(5);
    let mut store = ParamStore::<f64>::new();
    let layer = TransformerLayer::init(&mut store, "l", 8, 2, 16, &mut g).unwrap();
    let mut t = Tape::with_params(&store);
    let x = t.constant(Tensor::randn(&[1, 8], 1.0, &mut g));
    let bias = t.constant(AttentionMask::full(1, 1).to_bias());
    let o = layer.forward(&mut t, x, bias, Dropout::NONE).unwrap();
    assert_eq!(t.value(o).shape(), &[1, 8]);
    assert!(t.value(o).all_finite());

    // zero attention and FFN weights: output = LN(LN(h))
    let mut zeroed = store.clone();
    for id in zeroed.ids().collect::<Vec<_>>() {
        let name = zeroed.name(id).to_string();
        if name.contains("attn.") || name.contains("ffn.") {
            let shape = zeroed.get(id).shape().to_vec();
            zeroed.replace(id, Tensor::zeros(&shape));
        }
    }
    let h = Tensor::randn(&[4, 8], 1.0, &mut g);
    let mut t = Tape::with_params(&zeroed);
    let x = t.constant(h.clone());
    let bias = t.constant(AttentionMask::full(4, 4).to_bias());
    let o = layer.forward(&mut t, x, bias, Dropout::NONE).unwrap();
    let mut t2 = Tape::<f64>::new();
    let x2 = t2.constant(h);
    let ones = t2.constant(Tensor::ones(&[8]));
    let zeros = t2.constant(Tensor::zeros(&[8]));
    let n1 = t2.layer_norm(x2, ones, zeros, nn::LN_EPS).unwrap();
    let n2 = t2.layer_norm(n1, ones, zeros, nn::LN_EPS).unwrap();
    for (a, b) in t.value(o).data().iter().zip(t2.value(n2).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn forward_backward_bitwise_deterministic() {
    let run = || {
        let (store, layer) = random_layer(9, 8, 2);
        let mut t = Tape::training(&store, Rng::seed_from_u64(4));
        let x = t.constant(Tensor::randn(&[3, 8], 1.0, &mut rng(10)));
        let bias = t.constant(AttentionMask::full(3, 3).to_bias());
        let drop = Dropout {
            p: 0.1,
            placement: DropoutPlacement::Residual,
        };
        let o = layer.forward(&mut t, x, bias, drop).unwrap();
        let l = project(&mut t, o, 1);
        let g = t.backward(l).unwrap();
        let mut flat = vec![t.value(l).item()];
        for (_, gr) in g.params() {
            flat.extend_from_slice(gr.data());
        }
        flat.into_iter().map(f64::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let store = ParamStore::<f64>::new();
    let mut t = Tape::training(&store, Rng::seed_from_u64(0));
    let x = t.constant(Tensor::ones(&[100, 100]));
    let d = t.dropout(x, 0.25);
    let mean = t.value(d).sum() / 10_000.0;
    assert!((mean - 1.0).abs() < 0.03);
    let mut eval = Tape::with_params(&store);
    let x = eval.constant(Tensor::ones(&[2, 2]));
    assert_eq!(eval.dropout(x, 0.5), x);
}

#[test]
fn sinusoid_row_zero_alternates() {
    let pe = sinusoid_table::<f64>(3, 6);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}
