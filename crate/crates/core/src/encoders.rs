//! Proprioceptive history bookkeeping and the three-stage history encoder:
//! MLP encoder (175→128→64), latent encoder (64→32→16) and the Barlow
//! projector (16→16→64).
//!
//! Both twin views go through the same parameters.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, ParamSet, Tape, Var};

pub const PROPRIO_DIM: usize = 35;
pub const HISTORY_LEN: usize = 10;
pub const WINDOW: usize = 5;
pub const SLICE_DIM: usize = PROPRIO_DIM * WINDOW;
pub const MLP_ENC_DIM: usize = 64;
pub const LATENT_DIM: usize = 16;
pub const PROJECTION_DIM: usize = 64;

/// Ring buffer of the last [`HISTORY_LEN`] proprioceptive frames. Starts
/// zero-filled, so the first windows of an episode are zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    frame_dim: usize,
    capacity: usize,
    data: Vec<f64>,
    /// Slot holding the oldest frame; the next push overwrites it.
    head: usize,
}

impl HistoryBuffer {
    pub fn new() -> Self {
        Self::with_dims(HISTORY_LEN, PROPRIO_DIM)
    }

    pub fn with_dims(capacity: usize, frame_dim: usize) -> Self {
        HistoryBuffer {
            frame_dim,
            capacity,
            data: vec![0.0; capacity * frame_dim],
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
        self.head = 0;
    }

    /// Frame `i`, counted from the oldest (0) to the newest (`capacity - 1`).
    pub fn frame(&self, i: usize) -> &[f64] {
        let slot = (self.head + i) % self.capacity;
        &self.data[slot * self.frame_dim..(slot + 1) * self.frame_dim]
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_dim {
            return Err(Error::dim("history frame", self.frame_dim, frame.len()));
        }
        let slot = self.head;
        self.data[slot * self.frame_dim..(slot + 1) * self.frame_dim].copy_from_slice(frame);
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// The `n` newest frames concatenated oldest first.
    pub fn newest(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.frame_dim);
        for i in self.capacity - n..self.capacity {
            out.extend_from_slice(self.frame(i));
        }
        out
    }

    /// `(old, new)` windows: the newest [`WINDOW`] frames before and after
    /// appending `latest`. Does not modify the buffer.
    pub fn twin_views(&self, latest: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if latest.len() != self.frame_dim {
            return Err(Error::dim("history frame", self.frame_dim, latest.len()));
        }
        let old = self.newest(WINDOW);
        let mut new = Vec::with_capacity(old.len());
        new.extend_from_slice(&old[self.frame_dim..]);
        new.extend_from_slice(latest);
        Ok((old, new))
    }
}

impl Default for HistoryBuffer {
    fn default() -> Self {
        Self::new()
    }
}

/// Free-function form of [`HistoryBuffer::twin_views`].
pub fn twin_views(buffer_before_update: &HistoryBuffer, latest_obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    buffer_before_update.twin_views(latest_obs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub z_old: Vec<f64>,
    pub z_new: Vec<f64>,
    pub u_old: Vec<f64>,
    pub u_new: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub slice: usize,
    pub mlp_hidden: usize,
    pub mlp_out: usize,
    pub latent_hidden: usize,
    pub latent: usize,
    pub barlow_hidden: usize,
    pub projection: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            slice: SLICE_DIM,
            mlp_hidden: 128,
            mlp_out: MLP_ENC_DIM,
            latent_hidden: 32,
            latent: LATENT_DIM,
            barlow_hidden: 16,
            projection: PROJECTION_DIM,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoders {
    pub mlp_enc: Mlp,
    pub latent_enc: Mlp,
    pub barlow_enc: Mlp,
}

impl Encoders {
    pub fn new(dims: EncoderDims) -> Result<Self> {
        Ok(Encoders {
            mlp_enc: Mlp::new(
                MlpSpec::elu_hidden(&[dims.slice, dims.mlp_hidden, dims.mlp_out]),
                "mlp_enc.",
            )?,
            latent_enc: Mlp::new(
                MlpSpec::elu_hidden(&[dims.mlp_out, dims.latent_hidden, dims.latent]),
                "latent_enc.",
            )?,
            barlow_enc: Mlp::new(
                MlpSpec::elu_hidden(&[dims.latent, dims.barlow_hidden, dims.projection]),
                "barlow_enc.",
            )?,
        })
    }

    pub fn encode_latent(&self, params: &ParamSet, slice: &[f64]) -> Result<Vec<f64>> {
        encode_latent(&self.mlp_enc, &self.latent_enc, params, slice)
    }

    pub fn project_barlow(&self, params: &ParamSet, z: &[f64]) -> Result<Vec<f64>> {
        project_barlow(&self.barlow_enc, params, z)
    }

    pub fn encode_latent_batch(&self, params: &ParamSet, slices: ArrayView2<f64>) -> Result<Array2<f64>> {
        let l = self.mlp_enc.forward_batch(params, slices)?;
        self.latent_enc.forward_batch(params, l.view())
    }

    /// Full twin pass for one transition.
    pub fn latent_pair(&self, params: &ParamSet, old: &[f64], new: &[f64]) -> Result<LatentPair> {
        let z_old = self.encode_latent(params, old)?;
        let z_new = self.encode_latent(params, new)?;
        Ok(LatentPair {
            u_old: self.project_barlow(params, &z_old)?,
            u_new: self.project_barlow(params, &z_new)?,
            z_old,
            z_new,
        })
    }

    /// Taped latent encoding of a batch of slices.
    pub fn encode_latent_tape(&self, tape: &mut Tape, params: &ParamSet, slices: Var) -> Result<Var> {
        let l = self.mlp_enc.forward_tape(tape, params, slices)?;
        self.latent_enc.forward_tape(tape, params, l)
    }

    pub fn project_barlow_tape(&self, tape: &mut Tape, params: &ParamSet, z: Var) -> Result<Var> {
        self.barlow_enc.forward_tape(tape, params, z)
    }
}

pub fn encode_latent(mlp_enc: &Mlp, latent_enc: &Mlp, params: &ParamSet, history_slice: &[f64]) -> Result<Vec<f64>> {
    let l = mlp_enc.forward(params, history_slice)?;
    latent_enc.forward(params, &l)
}

pub fn project_barlow(barlow_enc: &Mlp, params: &ParamSet, z: &[f64]) -> Result<Vec<f64>> {
    barlow_enc.forward(params, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(v: f64) -> Vec<f64> {
        (0..PROPRIO_DIM).map(|i| v + i as f64 * 1e-3).collect()
    }

    fn filled(start: usize) -> HistoryBuffer {
        let mut b = HistoryBuffer::new();
        for k in 0..HISTORY_LEN {
            b.push(&frame((start + k) as f64)).unwrap();
        }
        b
    }

    #[test]
    fn twin_views_shift_by_one_frame() {
        let b = filled(0);
        let f10 = frame(10.0);
        let (old, new) = b.twin_views(&f10).unwrap();
        assert_eq!(old.len(), SLICE_DIM);
        assert_eq!(new.len(), SLICE_DIM);
        let expect_old: Vec<f64> = (5..10).flat_map(|k| frame(k as f64)).collect();
        let expect_new: Vec<f64> = (6..11).flat_map(|k| frame(k as f64)).collect();
        assert_eq!(old, expect_old);
        assert_eq!(new, expect_new);
    }

    #[test]
    fn constant_buffer_gives_equal_views() {
        let mut b = HistoryBuffer::new();
        let c = frame(0.7);
        for _ in 0..HISTORY_LEN {
            b.push(&c).unwrap();
        }
        let (old, new) = b.twin_views(&c).unwrap();
        assert_eq!(old, new);
    }

    #[test]
    fn fresh_buffer_is_zero_padded() {
        let b = HistoryBuffer::new();
        let o = frame(2.0);
        let (old, new) = b.twin_views(&o).unwrap();
        assert!(old.iter().all(|&x| x == 0.0));
        assert!(new[..4 * PROPRIO_DIM].iter().all(|&x| x == 0.0));
        assert_eq!(&new[4 * PROPRIO_DIM..], &o[..]);
    }

    #[test]
    fn push_then_newest_matches_new_view() {
        let mut b = filled(3);
        let f = frame(42.0);
        let (_, new) = b.twin_views(&f).unwrap();
        b.push(&f).unwrap();
        assert_eq!(b.newest(WINDOW), new);
        assert_eq!(b.frame(HISTORY_LEN - 1), &f[..]);
    }

    #[test]
    fn views_differ_in_each_frame_position_for_distinct_frames() {
        // Non-degenerate push: every position shifts, so old and new differ
        // position-by-position, and only one frame is not shared.
        let b = filled(0);
        let (old, new) = b.twin_views(&frame(10.0)).unwrap();
        let shared = &old[PROPRIO_DIM..];
        assert_eq!(shared, &new[..4 * PROPRIO_DIM]);
        assert_ne!(&old[..PROPRIO_DIM], &new[4 * PROPRIO_DIM..]);
    }

    #[test]
    fn wrong_frame_length_rejected() {
        let mut b = HistoryBuffer::new();
        assert!(b.push(&[0.0; 34]).is_err());
    }

    fn init_encoders(seed: u64) -> (Encoders, ParamSet) {
        let enc = Encoders::new(EncoderDims::default()).unwrap();
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in [&enc.mlp_enc, &enc.latent_enc, &enc.barlow_enc] {
            m.init(&mut p, 2f64.sqrt(), 1.0, &mut rng).unwrap();
        }
        (enc, p)
    }

    #[test]
    fn latent_and_projection_dims() {
        let (enc, p) = init_encoders(1);
        let z = enc.encode_latent(&p, &vec![0.3; SLICE_DIM]).unwrap();
        assert_eq!(z.len(), LATENT_DIM);
        let u = enc.project_barlow(&p, &z).unwrap();
        assert_eq!(u.len(), PROJECTION_DIM);
        assert_eq!(PROPRIO_DIM + z.len(), 51);
    }

    #[test]
    fn zero_parameters_give_zero_latent_and_projection() {
        let enc = Encoders::new(EncoderDims::default()).unwrap();
        let mut p = ParamSet::new();
        for m in [&enc.mlp_enc, &enc.latent_enc, &enc.barlow_enc] {
            m.init_zeros(&mut p).unwrap();
        }
        let z = enc.encode_latent(&p, &vec![1.5; SLICE_DIM]).unwrap();
        assert_eq!(z, vec![0.0; LATENT_DIM]);
        assert_eq!(enc.project_barlow(&p, &z).unwrap(), vec![0.0; PROJECTION_DIM]);
    }

    #[test]
    fn encoding_is_pure() {
        let (enc, p) = init_encoders(5);
        let s: Vec<f64> = (0..SLICE_DIM).map(|i| (i as f64).sin()).collect();
        assert_eq!(enc.encode_latent(&p, &s).unwrap(), enc.encode_latent(&p, &s).unwrap());
    }

    #[test]
    fn slice_length_checked() {
        let (enc, p) = init_encoders(5);
        assert!(matches!(
            enc.encode_latent(&p, &[0.0; 174]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn projection_loss_reaches_mlp_encoder_gradients() {
        let dims = EncoderDims {
            slice: 6,
            mlp_hidden: 5,
            mlp_out: 4,
            latent_hidden: 4,
            latent: 3,
            barlow_hidden: 3,
            projection: 4,
        };
        let enc = Encoders::new(dims).unwrap();
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in [&enc.mlp_enc, &enc.latent_enc, &enc.barlow_enc] {
            m.init(&mut p, 1.0, 1.0, &mut rng).unwrap();
        }
        let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j) as f64 * 0.3).sin());
        let build = |t: &mut Tape, p: &ParamSet| {
            let xv = t.constant(x.clone());
            let z = enc.encode_latent_tape(t, p, xv)?;
            let u = enc.project_barlow_tape(t, p, z)?;
            let sq = t.square(u);
            Ok(t.sum_all(sq))
        };
        let report = fd_check(build, &p, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");

        let mut t = Tape::new();
        let loss = build(&mut t, &p).unwrap();
        t.backward(loss, &mut p).unwrap();
        let g = &p.get("mlp_enc.l0.weight").unwrap().grad;
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
