mod common;

use ca_denoise::graph::Unary;
use ca_denoise::model::{build_forward, BoundParams, ForwardOptions, ModelConfig, ModelParams, Variant};
use ca_denoise::layers::SegmentBatch;
use ca_denoise::Tensor;
use common::{check_gradients, rand_tensor, rng};

const TOL: f64 = 1e-4;

#[test]
fn tanh_gradient_at_point_three() {
    let x = Tensor::vector(vec![0.3]).unwrap();
    let r = check_gradients(&["x"], &[x], 1e-5, |g, v| {
        let t = g.tanh(v[0])?;
        g.sum(t)
    });
    assert!(r.passes(1e-6), "{r:?}");
}

#[test]
fn elementwise_ops() {
    let mut rng = rng(1);
    for op in [Unary::Relu, Unary::Sigmoid, Unary::Tanh, Unary::Square] {
        let x = rand_tensor(&mut rng, &[3, 4], 1.0);
        let wts = rand_tensor(&mut rng, &[3, 4], 1.0);
        let r = check_gradients(&["x", "w"], &[x, wts], 1e-5, |g, v| {
            let y = g.unary(op, v[0])?;
            let z = g.mul(y, v[1])?;
            g.sum(z)
        });
        assert!(r.passes(TOL), "{op:?}: {r:?}");
    }
    let a = rand_tensor(&mut rng, &[2, 3], 1.0);
    let b = rand_tensor(&mut rng, &[2, 3], 1.0);
    let r = check_gradients(&["a", "b"], &[a, b], 1e-5, |g, v| {
        let s = g.sub(v[0], v[1])?;
        let p = g.mul(s, v[0])?;
        let q = g.add(p, v[1])?;
        let q = g.scale(q, 1.7)?;
        let q = g.square(q)?;
        g.sum(q)
    });
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn matmul_linear_concat_softmax() {
    let mut rng = rng(2);
    let a = rand_tensor(&mut rng, &[3, 4], 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], 1.0);
    let w = rand_tensor(&mut rng, &[5, 6], 1.0);
    let bias = rand_tensor(&mut rng, &[5], 1.0);
    let r = check_gradients(&["a", "b", "w", "bias"], &[a, b, w, bias], 1e-5, |g, v| {
        let ab = g.matmul(v[0], v[1])?;
        let cat = g.concat_cols(&[ab, v[0]])?;
        let lin = g.linear(cat, v[2], Some(v[3]))?;
        let sm = g.softmax(lin)?;
        let sq = g.square(sm)?;
        g.sum(sq)
    });
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn lstm_sequence() {
    let mut rng = rng(3);
    let (t, d, h) = (4, 3, 2);
    let inputs = [
        rand_tensor(&mut rng, &[t, d], 1.0),
        rand_tensor(&mut rng, &[4 * h, d], 1.0),
        rand_tensor(&mut rng, &[4 * h, h], 1.0),
        rand_tensor(&mut rng, &[4 * h], 1.0),
        rand_tensor(&mut rng, &[t, h], 1.0),
    ];
    let r = check_gradients(&["x", "w_ih", "w_hh", "bias", "probe"], &inputs, 1e-5, |g, v| {
        let out = g.lstm(v[0], v[1], v[2], v[3])?;
        let p = g.mul(out, v[4])?;
        g.sum(p)
    });
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn attention_with_and_without_prefix() {
    let mut rng = rng(4);
    let t = 5;
    let inputs = [
        rand_tensor(&mut rng, &[t, 3], 1.0),
        rand_tensor(&mut rng, &[t, 2], 1.0),
        rand_tensor(&mut rng, &[t, 4], 1.0),
        rand_tensor(&mut rng, &[3, 2], 1.0),
        rand_tensor(&mut rng, &[t, 4], 1.0),
    ];
    let r = check_gradients(&["keys", "queries", "values", "w", "probe"], &inputs, 1e-5, |g, v| {
        let (ctx, _) = g.causal_attention(v[0], v[1], v[2], v[3], None, 2)?;
        let p = g.mul(ctx, v[4])?;
        g.sum(p)
    });
    assert!(r.passes(TOL), "{r:?}");

    let inputs = [
        rand_tensor(&mut rng, &[t, 2], 1.0),
        rand_tensor(&mut rng, &[t, 3], 1.0),
        rand_tensor(&mut rng, &[t, 2], 1.0),
        rand_tensor(&mut rng, &[t, 3], 1.0),
        rand_tensor(&mut rng, &[5, 2], 1.0),
        rand_tensor(&mut rng, &[t, 3], 1.0),
    ];
    let r = check_gradients(&["prefix", "keys", "queries", "values", "w", "probe"], &inputs, 1e-5, |g, v| {
        let (ctx, _) = g.causal_attention(v[1], v[2], v[3], v[4], Some(v[0]), 3)?;
        let p = g.mul(ctx, v[5])?;
        g.sum(p)
    });
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn overlap_add_and_cross_entropy() {
    let mut rng = rng(5);
    let x = rand_tensor(&mut rng, &[3, 4], 1.0);
    let probe = rand_tensor(&mut rng, &[7], 1.0);
    let r = check_gradients(&["x", "probe"], &[x, probe], 1e-5, |g, v| {
        let y = g.overlap_add(v[0], 2, 7)?;
        let p = g.mul(y, v[1])?;
        g.sum(p)
    });
    assert!(r.passes(TOL), "{r:?}");
    let logits = rand_tensor(&mut rng, &[4, 3], 2.0);
    let r = check_gradients(&["logits"], &[logits], 1e-5, |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]));
    assert!(r.passes(TOL), "{r:?}");
}

/// Every parameter of the tiny network against finite differences.
#[test]
fn full_network_all_variants() {
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            n_filters: 8,
            segment_len: 4,
            hop: 2,
            spec_hidden: 3,
            noise_hidden: 3,
            speech_hidden: 3,
            enhance_dim: 4,
            classes: 2,
            window: 5,
            variant,
        };
        let params = ModelParams::init(&cfg, 21).unwrap();
        let mut r = rng(6);
        let wave = rand_tensor(&mut r, &[8], 0.8).into_data();
        let target = rand_tensor(&mut r, &[8], 0.5);
        let seg = SegmentBatch::from_waveform(&wave, 4, 2).unwrap();
        assert_eq!(seg.frames(), 3);
        let names: Vec<String> = params.tensors.keys().cloned().collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let inputs: Vec<Tensor> = params.tensors.values().cloned().collect();
        let report = check_gradients(&name_refs, &inputs, 1e-4, |g, vars| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            let out = build_forward(g, &cfg, &bound, &seg, ForwardOptions::default())?;
            let t = g.constant(target.clone());
            let diff = g.sub(out.denoised, t)?;
            let sq = g.square(diff)?;
            let mut loss = g.sum(sq)?;
            if let Some(logits) = out.class_logits {
                let ce = g.cross_entropy(logits, &[1, 1, 1])?;
                loss = g.add(loss, ce)?;
            }
            Ok(loss)
        });
        assert!(report.passes(TOL), "{variant}: {report:?}");
    }
}
