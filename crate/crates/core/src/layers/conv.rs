use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};

use super::{SegmentBatch, SegmentMeta};

/// Learned analysis basis `U: [N × L]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dEncoder {
    pub basis: Var,
}

/// Learned synthesis basis `V: [N × L]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dDecoder {
    pub basis: Var,
}

impl Conv1dEncoder {
    /// Nonnegative representation `relu(x_t · Uᵀ)`, one row per segment.
    pub fn encode(&self, g: &mut Graph, segments: &SegmentBatch) -> Result<Var> {
        let (_, l) = g.value(self.basis).dims2()?;
        if segments.meta.segment_len != l {
            return Err(dim_err!("segment length {} but encoder basis length {l}", segments.meta.segment_len));
        }
        let x = g.constant(segments.segments.clone());
        let proj = g.linear(x, self.basis, None)?;
        g.relu(proj)
    }
}

impl Conv1dDecoder {
    /// `y_t · V` per frame followed by overlap-add at the segmentation hop.
    pub fn decode(&self, g: &mut Graph, masked: Var, meta: &SegmentMeta) -> Result<Var> {
        let (n, l) = g.value(self.basis).dims2()?;
        let (t, width) = g.value(masked).dims2()?;
        if width != n || l != meta.segment_len {
            return Err(dim_err!(
                "decoder basis [{n}×{l}] vs masked width {width} and segment length {}",
                meta.segment_len
            ));
        }
        let frames = g.matmul(masked, self.basis)?;
        if (t - 1) * meta.hop + l < meta.original_len {
            return Err(dim_err!("{t} frames at hop {} cannot cover {} samples", meta.hop, meta.original_len));
        }
        g.overlap_add(frames, meta.hop, meta.original_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let u = g.constant(super::super::glorot_uniform(&mut rng, 6, 4, 4, 6));
        let seg = SegmentBatch::from_waveform(&[0.0; 12], 4, 2).unwrap();
        let w = Conv1dEncoder { basis: u }.encode(&mut g, &seg).unwrap();
        assert!(g.value(w).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_basis_is_relu() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::identity(3));
        let seg = SegmentBatch::from_waveform(&[1., -2., 3., -4., 5., -6.], 3, 3).unwrap();
        let w = Conv1dEncoder { basis: u }.encode(&mut g, &seg).unwrap();
        assert_eq!(g.value(w).data(), &[1., 0., 3., 0., 5., 0.]);
    }

    #[test]
    fn encoder_matches_per_filter_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, l) = (5, 4);
        let basis: Vec<f64> = (0..n * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..14).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seg = SegmentBatch::from_waveform(&x, l, 2).unwrap();
        let mut g = Graph::new();
        let u = g.constant(Tensor::matrix(n, l, basis.clone()).unwrap());
        let w = Conv1dEncoder { basis: u }.encode(&mut g, &seg).unwrap();
        for t in 0..seg.frames() {
            for f in 0..n {
                let mut acc = 0.0;
                for j in 0..l {
                    let idx = t * 2 + j;
                    acc += x.get(idx).copied().unwrap_or(0.0) * basis[f * l + j];
                }
                let expected = acc.max(0.0);
                assert!((g.value(w).get2(t, f) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_segment_length() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::identity(3));
        let seg = SegmentBatch::from_waveform(&[0.0; 8], 4, 2).unwrap();
        assert!(Conv1dEncoder { basis: u }.encode(&mut g, &seg).is_err());
    }

    #[test]
    fn one_hot_selects_basis_row() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(&[vec![1., 2., 3., 4.], vec![5., 6., 7., 8.]]).unwrap());
        let y = g.constant(Tensor::from_rows(&[vec![0., 1.], vec![0., 1.]]).unwrap());
        let meta = SegmentMeta { segment_len: 4, hop: 2, original_len: 6 };
        let out = Conv1dDecoder { basis: v }.decode(&mut g, y, &meta).unwrap();
        assert_eq!(g.value(out).data(), &[5., 6., 12., 14., 7., 8.]);
    }

    #[test]
    fn decoder_matches_sample_indexed_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, l, hop, t) = (3, 4, 2, 4);
        let vb: Vec<f64> = (0..n * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yb: Vec<f64> = (0..t * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let len = (t - 1) * hop + l;
        let mut expected = vec![0.0; len];
        for s in 0..len {
            for f in 0..t {
                if s >= f * hop && s < f * hop + l {
                    for k in 0..n {
                        expected[s] += yb[f * n + k] * vb[k * l + (s - f * hop)];
                    }
                }
            }
        }
        let mut g = Graph::new();
        let v = g.constant(Tensor::matrix(n, l, vb).unwrap());
        let y = g.constant(Tensor::matrix(t, n, yb).unwrap());
        let meta = SegmentMeta { segment_len: l, hop, original_len: len };
        let out = Conv1dDecoder { basis: v }.decode(&mut g, y, &meta).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mask_gives_silence() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::full(&[2, 4], 0.7));
        let y = g.constant(Tensor::zeros(&[3, 2]));
        let meta = SegmentMeta { segment_len: 4, hop: 2, original_len: 7 };
        let out = Conv1dDecoder { basis: v }.decode(&mut g, y, &meta).unwrap();
        assert_eq!(g.value(out).len(), 7);
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_round_trip() {
        let x = [0.1, 0.5, 0.0, 0.9, 0.3, 0.25, 0.75, 0.6];
        let seg = SegmentBatch::from_waveform(&x, 4, 4).unwrap();
        let mut g = Graph::new();
        let u = g.constant(Tensor::identity(4));
        let v = g.constant(Tensor::identity(4));
        let w = Conv1dEncoder { basis: u }.encode(&mut g, &seg).unwrap();
        let out = Conv1dDecoder { basis: v }.decode(&mut g, w, &seg.meta).unwrap();
        assert_eq!(g.value(out).data(), &x);
    }
}
