use sanne::encoder::{encode_batch, encode_walk, positional_for, EncoderConfig, ModelParams};
use sanne::graph::FeatureMatrix;
use sanne::numerics::{Tape, Tensor};
use sanne_testkit::graphs::random_features;
use sanne_testkit::reference::reference_encode;

fn small_config() -> EncoderConfig {
    EncoderConfig { dim: 4, layers: 2, heads: 2, ff_hidden: 6, walk_length: 3, ..EncoderConfig::default() }
}

/// Parameters with non-trivial layer-norm gains and biases, so every tensor matters.
fn perturbed_params(config: &EncoderConfig, num_nodes: usize, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f32>::init(config, num_nodes, seed).unwrap().cast::<f64>();
    let names: Vec<String> = p.names().to_vec();
    for (k, name) in names.iter().enumerate() {
        if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with(".b1") || name.ends_with(".b2") {
            let t = p.tensor_mut(name).unwrap();
            for (i, x) in t.as_mut_slice().iter_mut().enumerate() {
                *x += 0.1 * ((k * 7 + i) as f64 * 0.91).sin();
            }
        }
    }
    p
}

fn assert_matches_reference(config: &EncoderConfig, walk: &[usize], tol: f64) {
    let features = random_features(5, config.dim, 3);
    let params = perturbed_params(config, 5, 11);
    let ours = encode_walk(&params, walk, &features).unwrap();
    let reference = reference_encode(&params, walk, &features).output;
    for (i, row) in reference.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            let got = ours.get(i, j);
            assert!((got - r).abs() <= tol * r.abs().max(1.0), "({i},{j}): {got} vs {r}");
        }
    }
}

#[test]
fn two_layer_two_head_matches_reference() {
    assert_matches_reference(&small_config(), &[0, 3, 1], 1e-6);
}

#[test]
fn ablations_and_explicit_scale_match_reference() {
    let base = small_config();
    for config in [
        EncoderConfig { use_ff: false, ..base.clone() },
        EncoderConfig { use_att: false, ..base.clone() },
        EncoderConfig { use_positional: false, ..base.clone() },
        EncoderConfig { attn_scale: Some(1.0), ..base.clone() },
        EncoderConfig { heads: 4, layers: 3, ..base.clone() },
    ] {
        assert_matches_reference(&config, &[2, 2, 4], 1e-6);
    }
}

#[test]
fn batched_walks_do_not_interact() {
    let config = small_config();
    let features = random_features(5, 4, 8);
    let params = perturbed_params(&config, 5, 2);
    let walks: [&[usize]; 3] = [&[0, 1, 2], &[4, 4, 3], &[1, 0, 1]];
    let mut tape = Tape::<f64>::new();
    let vars = params.bind_encoder(&mut tape, false).unwrap();
    let pos = positional_for::<f64>(&config).unwrap();
    let out = encode_batch(&mut tape, &config, &vars, &walks, &features, pos.as_ref()).unwrap();
    let out = tape.value(out.output);
    for (b, w) in walks.iter().enumerate() {
        let single = reference_encode(&params, w, &features).output;
        for (i, row) in single.iter().enumerate() {
            for (j, &r) in row.iter().enumerate() {
                assert!((out.get(b * 3 + i, j) - r).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn without_positions_the_encoder_is_permutation_equivariant() {
    let config = EncoderConfig { use_positional: false, walk_length: 4, ..small_config() };
    let features = random_features(6, 4, 1);
    let params = perturbed_params(&config, 6, 5);
    let walk = [0, 5, 2, 3];
    let perm = [2, 0, 3, 1];
    let permuted: Vec<usize> = perm.iter().map(|&i| walk[i]).collect();
    let a = encode_walk(&params, &walk, &features).unwrap();
    let b = encode_walk(&params, &permuted, &features).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        for j in 0..4 {
            assert!((b.get(dst, j) - a.get(src, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_query_key_gives_uniform_attention() {
    let config = EncoderConfig { walk_length: 5, ..small_config() };
    let features = random_features(6, 4, 4);
    let mut params = perturbed_params(&config, 6, 9);
    for k in 0..config.layers {
        for m in ["w_q", "w_k"] {
            params.tensor_mut(&format!("layer{k}.attn.{m}")).unwrap().as_mut_slice().fill(0.0);
        }
    }
    let walk = [0, 1, 2, 3, 4];
    let mut tape = Tape::<f64>::new();
    let vars = params.bind_encoder(&mut tape, false).unwrap();
    let pos = positional_for::<f64>(&config).unwrap();
    let out = encode_batch(&mut tape, &config, &vars, &[&walk], &features, pos.as_ref()).unwrap();
    for layer in &out.attention {
        for &alpha in layer {
            assert!(tape.value(alpha).as_slice().iter().all(|&a| (a - 0.2).abs() < 1e-15));
        }
    }
}

#[test]
fn zero_sublayers_leave_normalised_residual() {
    // With W_O = 0 and W_2 = b_2 = 0 every sub-layer contributes nothing, so each layer is
    // LN(LN(u)) and the output equals the reference layer norm of the inputs.
    let config = EncoderConfig { layers: 1, ..small_config() };
    let features = random_features(4, 4, 6);
    let mut params = ModelParams::<f32>::init(&config, 4, 3).unwrap().cast::<f64>();
    for name in ["layer0.attn.w_o", "layer0.ff.w2", "layer0.ff.b2"] {
        params.tensor_mut(name).unwrap().as_mut_slice().fill(0.0);
    }
    let walk = [1, 2, 3];
    let out = encode_walk(&params, &walk, &features).unwrap();
    let pos = positional_for::<f64>(&config).unwrap().unwrap();
    for (i, &v) in walk.iter().enumerate() {
        let x: Vec<f64> = features.row(v).iter().zip(pos.row(i)).map(|(&a, &b)| a as f64 + b).collect();
        let normed = layer_norm_twice(&x, config.ln_eps);
        for (j, n) in normed.iter().enumerate() {
            assert!((out.get(i, j) - n).abs() < 1e-12);
        }
    }
}

fn layer_norm_twice(x: &[f64], eps: f64) -> Vec<f64> {
    let ln = |x: &[f64]| -> Vec<f64> {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        x.iter().map(|a| (a - m) / (v + eps).sqrt()).collect()
    };
    ln(&ln(x))
}

#[test]
fn f32_and_f64_agree() {
    let config = EncoderConfig { dim: 8, heads: 4, ff_hidden: 16, walk_length: 4, ..EncoderConfig::default() };
    let features: FeatureMatrix = random_features(10, 8, 2);
    let p32 = ModelParams::<f32>::init(&config, 10, 7).unwrap();
    let p64 = p32.cast::<f64>();
    let walk = [3, 9, 0, 3];
    let a: Tensor<f32> = encode_walk(&p32, &walk, &features).unwrap();
    let b = encode_walk(&p64, &walk, &features).unwrap();
    assert!(a.cast::<f64>().max_abs_diff(&b) < 1e-4);
}
