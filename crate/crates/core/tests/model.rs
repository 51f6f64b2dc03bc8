mod common;

use ca_denoise::model::{forward, forward_with, ForwardOptions, ModelConfig, ModelParams, Variant};
use ca_denoise::Tensor;
use rand::Rng;

type Mat = Vec<Vec<f64>>;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_filters: 6,
        segment_len: 4,
        hop: 2,
        spec_hidden: 5,
        noise_hidden: 3,
        speech_hidden: 4,
        enhance_dim: 7,
        classes: 3,
        window: 2,
        variant,
    }
}

fn wave(seed: u64, n: usize) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| r.gen_range(-0.8..0.8)).collect()
}

fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vecp(p: &ModelParams, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data().to_vec()
}

fn matp(p: &ModelParams, name: &str) -> Mat {
    mat(p.get(name).unwrap())
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// y_t = W x_t + b
fn affine(x: &Mat, w: &Mat, b: Option<&[f64]>) -> Mat {
    x.iter()
        .map(|row| {
            w.iter()
                .enumerate()
                .map(|(j, wr)| wr.iter().zip(row).map(|(a, c)| a * c).sum::<f64>() + b.map_or(0.0, |b| b[j]))
                .collect()
        })
        .collect()
}

fn lstm(x: &Mat, p: &ModelParams, prefix: &str) -> Mat {
    let w_ih = matp(p, &format!("{prefix}.w_ih"));
    let w_hh = matp(p, &format!("{prefix}.w_hh"));
    let b = vecp(p, &format!("{prefix}.bias"));
    let h = w_hh[0].len();
    let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
    let mut out = Vec::new();
    for xt in x {
        let z: Vec<f64> = (0..4 * h)
            .map(|r| {
                b[r] + w_ih[r].iter().zip(xt).map(|(a, c)| a * c).sum::<f64>()
                    + w_hh[r].iter().zip(&hp).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        for j in 0..h {
            let (i, f, g, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
            cp[j] = f * cp[j] + i * g;
            hp[j] = o * cp[j].tanh();
        }
        out.push(hp.clone());
    }
    out
}

/// Context rows; keys may be query-dependent via `key(t, k)`.
fn attention(key: &dyn Fn(usize, usize) -> Vec<f64>, q: &Mat, v: &Mat, w: &Mat, window: usize) -> Mat {
    (0..q.len())
        .map(|t| {
            let start = t.saturating_sub(window);
            let scores: Vec<f64> = (start..=t)
                .map(|k| {
                    let kk = key(t, k);
                    let mut s = 0.0;
                    for a in 0..kk.len() {
                        for b in 0..q[t].len() {
                            s += kk[a] * w[a][b] * q[t][b];
                        }
                    }
                    s
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut ctx = vec![0.0; v[0].len()];
            for (a, k) in e.iter().zip(start..=t) {
                for j in 0..ctx.len() {
                    ctx[j] += a / z * v[k][j];
                }
            }
            ctx
        })
        .collect()
}

fn cat(parts: &[&Mat]) -> Mat {
    (0..parts[0].len()).map(|t| parts.iter().flat_map(|p| p[t].iter().copied()).collect()).collect()
}

/// Independent composition of layer oracles for every variant.
fn oracle(x: &[f64], p: &ModelParams) -> (Mat, Mat, Vec<f64>, Option<Mat>) {
    let c = &p.config;
    let (l, hop) = (c.segment_len, c.hop);
    let frames = if x.len() <= l { 1 } else { (x.len() - l).div_ceil(hop) + 1 };
    let segs: Mat =
        (0..frames).map(|t| (0..l).map(|j| x.get(t * hop + j).copied().unwrap_or(0.0)).collect()).collect();
    let w: Mat = affine(&segs, &matp(p, "encoder.basis"), None)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let h = lstm(&w, p, "spec_lstm");
    let hs = lstm(&h, p, "speech_lstm");
    let mut logits = None;
    let dn = c.variant.has_classifier().then(|| {
        let hn = lstm(&h, p, "noise_lstm");
        let cn = attention(&|_, k| h[k].clone(), &hn, &h, &matp(p, "noise_attention.weight"), c.window);
        let dn = cat(&[&cn, &hn]);
        logits = Some(affine(&dn, &matp(p, "classifier.weight"), Some(&vecp(p, "classifier.bias"))));
        dn
    });
    let features = match c.variant {
        Variant::PureLstm => hs.clone(),
        Variant::AttLstm => {
            let cs = attention(&|_, k| h[k].clone(), &hs, &h, &matp(p, "speech_attention.weight"), c.window);
            cat(&[&cs, &hs])
        }
        Variant::CaAttLstm1 => {
            let cs = attention(&|_, k| h[k].clone(), &hs, &h, &matp(p, "speech_attention.weight"), c.window);
            cat(&[&cs, &hs, dn.as_ref().unwrap()])
        }
        Variant::CaAttLstm2 => {
            let dn = dn.as_ref().unwrap();
            let key = |t: usize, k: usize| dn[t].iter().chain(&h[k]).copied().collect::<Vec<f64>>();
            let q = cat(&[dn, &hs]);
            let cs = attention(&key, &q, &h, &matp(p, "speech_attention.weight"), c.window);
            cat(&[&cs, &hs, dn])
        }
    };
    let e: Mat = affine(&features, &matp(p, "enhance.weight"), Some(&vecp(p, "enhance.bias")))
        .into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect();
    let mask: Mat = affine(&e, &matp(p, "mask.weight"), Some(&vecp(p, "mask.bias")))
        .into_iter()
        .map(|r| r.into_iter().map(sig).collect())
        .collect();
    let y: Mat = w.iter().zip(&mask).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).collect()).collect();
    let dec = matp(p, "decoder.basis");
    let mut out = vec![0.0; (frames - 1) * hop + l];
    for (t, yt) in y.iter().enumerate() {
        for j in 0..l {
            out[t * hop + j] += (0..yt.len()).map(|n| yt[n] * dec[n][j]).sum::<f64>();
        }
    }
    out.truncate(x.len());
    (w, mask, out, logits)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn forward_matches_composition_of_layer_oracles() {
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        let p = ModelParams::init(&tiny(v), 40 + i as u64).unwrap();
        let x = wave(i as u64, 23);
        let out = forward(&x, &p).unwrap();
        let (w, mask, y, logits) = oracle(&x, &p);
        assert!(close(out.spectrogram.data(), &w.concat(), 1e-12), "{v}: spectrogram");
        assert!(close(out.mask.data(), &mask.concat(), 1e-12), "{v}: mask");
        assert!(close(&out.denoised, &y, 1e-12), "{v}: waveform");
        match (out.class_logits, logits) {
            (Some(a), Some(b)) => assert!(close(a.data(), &b.concat(), 1e-12), "{v}: logits"),
            (None, None) => {}
            _ => panic!("{v}: classifier presence differs"),
        }
    }
}

/// Parameter count from the layer formulas.
fn expected_count(c: &ModelConfig) -> usize {
    let (n, l, h, hn, hs, es, cl) =
        (c.n_filters, c.segment_len, c.spec_hidden, c.noise_hidden, c.speech_hidden, c.enhance_dim, c.classes);
    let lstm = |din: usize, hid: usize| 4 * hid * (din + hid + 1);
    let mut total = 2 * n * l + lstm(n, h) + lstm(h, hs) + n * es + n;
    let enhance_in = match c.variant {
        Variant::PureLstm => hs,
        Variant::AttLstm => h + hs,
        Variant::CaAttLstm1 | Variant::CaAttLstm2 => h + hs + h + hn,
    };
    total += es * enhance_in + es;
    if c.variant.has_classifier() {
        total += lstm(h, hn) + h * hn + cl * (h + hn) + cl;
    }
    total += match c.variant {
        Variant::PureLstm => 0,
        Variant::AttLstm | Variant::CaAttLstm1 => h * hs,
        Variant::CaAttLstm2 => (h + hn + h) * (h + hn + hs),
    };
    total
}

#[test]
fn parameter_counts_match_layer_formulas() {
    for v in Variant::ALL {
        for cfg in [tiny(v), ModelConfig { variant: v, ..ModelConfig::default() }] {
            let p = ModelParams::init(&cfg, 0).unwrap();
            assert_eq!(p.count(), expected_count(&cfg), "{v}");
        }
    }
}

#[test]
fn ca_att_lstm1_without_noise_context_is_att_lstm() {
    let ca = ModelParams::init(&tiny(Variant::CaAttLstm1), 9).unwrap();
    let mut att = ModelParams::init(&tiny(Variant::AttLstm), 1).unwrap();
    let cfg = tiny(Variant::AttLstm);
    let keep = cfg.spec_hidden + cfg.speech_hidden;
    for (name, t) in att.tensors.iter_mut() {
        let src = ca.get(name).unwrap();
        *t = if name == "enhance.weight" {
            let rows: Vec<Vec<f64>> = mat(src).into_iter().map(|r| r[..keep].to_vec()).collect();
            Tensor::from_rows(&rows).unwrap()
        } else {
            src.clone()
        };
    }
    let x = wave(5, 30);
    let a = forward_with(&x, &ca, ForwardOptions { zero_noise_context: true }).unwrap();
    let b = forward(&x, &att).unwrap();
    assert!(close(&a.denoised, &b.denoised, 1e-14));
    assert!(close(a.mask.data(), b.mask.data(), 1e-14));
}

#[test]
fn future_samples_do_not_change_past_outputs() {
    for v in Variant::ALL {
        let p = ModelParams::init(&tiny(v), 3).unwrap();
        let (l, hop) = (p.config.segment_len, p.config.hop);
        let x = wave(7, 41);
        let cut = 21;
        let mut y = x.clone();
        for s in &mut y[cut..] {
            *s += 0.5;
        }
        let (a, b) = (forward(&x, &p).unwrap(), forward(&y, &p).unwrap());
        let n = p.config.n_filters;
        let frames_before = (0..a.frames()).take_while(|t| t * hop + l <= cut).count();
        assert!(frames_before > 0);
        for t in 0..frames_before {
            assert_eq!(a.mask.row(t), b.mask.row(t), "{v}: frame {t}");
            if let (Some(la), Some(lb)) = (&a.class_logits, &b.class_logits) {
                assert_eq!(la.row(t), lb.row(t));
            }
        }
        assert_ne!(a.mask.data()[frames_before * n..], b.mask.data()[frames_before * n..]);
        let safe = (0..x.len()).take_while(|i| (i / hop) * hop + l <= cut).count();
        assert_eq!(a.denoised[..safe], b.denoised[..safe], "{v}");
    }
}

#[test]
fn attention_weights_are_distributions_over_the_window() {
    let mut r = common::rng(77);
    for case in 0..100 {
        let mut cfg = tiny(if case % 2 == 0 { Variant::CaAttLstm2 } else { Variant::AttLstm });
        cfg.window = 1 + case % 4;
        let p = ModelParams::init(&cfg, case as u64).unwrap();
        let len = r.gen_range(4..40);
        let x: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let out = forward(&x, &p).unwrap();
        for w in out.noise_attention.iter().chain(out.speech_attention.iter()) {
            let d = w.to_dense();
            let t_len = out.frames();
            for t in 0..t_len {
                let row = d.row(t);
                assert!(row.iter().all(|&a| a >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                let support = row.iter().filter(|&&a| a > 0.0).count();
                assert!(support <= cfg.window + 1);
                assert!(row[t + 1..].iter().all(|&a| a == 0.0));
            }
        }
    }
}
