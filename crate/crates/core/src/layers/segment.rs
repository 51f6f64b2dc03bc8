use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentMeta {
    pub segment_len: usize,
    pub hop: usize,
    /// Length of the waveform before end padding.
    pub original_len: usize,
}

/// Overlapping frames of a waveform, `[T × L]`, zero-padded at the end so
/// that the last frame reaches past the final sample.
#[derive(Clone, Debug)]
pub struct SegmentBatch {
    pub segments: Tensor,
    pub meta: SegmentMeta,
}

impl SegmentBatch {
    pub fn from_waveform(samples: &[f64], segment_len: usize, hop: usize) -> Result<Self> {
        if segment_len == 0 || hop == 0 || hop > segment_len {
            return Err(Error::Config(format!("invalid framing L={segment_len} hop={hop}")));
        }
        if samples.len() < segment_len {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than one segment ({segment_len})",
                samples.len()
            )));
        }
        let frames = (samples.len() - segment_len).div_ceil(hop) + 1;
        let mut data = vec![0.0; frames * segment_len];
        for (t, row) in data.chunks_mut(segment_len).enumerate() {
            let start = t * hop;
            let end = (start + segment_len).min(samples.len());
            row[..end - start].copy_from_slice(&samples[start..end]);
        }
        Ok(SegmentBatch {
            segments: Tensor::matrix(frames, segment_len, data)?,
            meta: SegmentMeta { segment_len, hop, original_len: samples.len() },
        })
    }

    pub fn frames(&self) -> usize {
        self.segments.shape()[0]
    }

    /// The first `frames` segments, as if the waveform had been cut there.
    pub fn prefix(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames() {
            return Err(Error::Contract(format!("prefix of {frames} frames out of {}", self.frames())));
        }
        let l = self.meta.segment_len;
        let segments = Tensor::matrix(frames, l, self.segments.data()[..frames * l].to_vec())?;
        let covered = (frames - 1) * self.meta.hop + l;
        Ok(SegmentBatch {
            segments,
            meta: SegmentMeta { original_len: covered.min(self.meta.original_len), ..self.meta },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_and_padding() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let b = SegmentBatch::from_waveform(&x, 4, 2).unwrap();
        // starts 0,2,4,6 cover up to 10
        assert_eq!(b.frames(), 4);
        assert_eq!(b.segments.row(3), &[6., 7., 8., 9.]);
        let b = SegmentBatch::from_waveform(&x[..9], 4, 2).unwrap();
        assert_eq!(b.frames(), 4);
        assert_eq!(b.segments.row(3), &[6., 7., 8., 0.]);
    }

    #[test]
    fn short_waveform_is_rejected() {
        assert!(matches!(SegmentBatch::from_waveform(&[0.0; 3], 4, 2), Err(Error::Input(_))));
    }
}
