//! Two-layer perceptron encoder trained with the Barlow Twins objective by
//! plain fixed-step gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::augment::{apply_distortions, DistortionSpec};
use super::loss::{bt_loss_gradient, BtLossConfig};
use crate::error::{PrlError, Result};
use crate::tile::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

struct Forward {
    hidden: DMatrix<f64>,
    out: DMatrix<f64>,
}

struct Grads {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl Mlp {
    /// Glorot-scaled Gaussian initialization.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut gauss = |r: usize, c: usize, fan: usize| {
            let s = (2.0 / (fan + c) as f64).sqrt();
            DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        };
        Mlp {
            w1: gauss(input, hidden, input),
            b1: DVector::zeros(hidden),
            w2: gauss(hidden, output, hidden),
            b2: DVector::zeros(output),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn forward(&self, x: &DMatrix<f64>) -> Forward {
        let mut hidden = x * &self.w1;
        for mut row in hidden.row_iter_mut() {
            row += self.b1.transpose();
        }
        hidden.apply(|v| *v = v.tanh());
        let mut out = &hidden * &self.w2;
        for mut row in out.row_iter_mut() {
            row += self.b2.transpose();
        }
        Forward { hidden, out }
    }

    /// Projects rows of `x` into the representation space.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).out
    }

    fn backward(&self, x: &DMatrix<f64>, fwd: &Forward, d_out: &DMatrix<f64>) -> Grads {
        let w2 = fwd.hidden.transpose() * d_out;
        let b2 = d_out.row_sum().transpose();
        let mut d_pre = d_out * self.w2.transpose();
        d_pre.zip_apply(&fwd.hidden, |g, h| *g *= 1.0 - h * h);
        let w1 = x.transpose() * &d_pre;
        let b1 = d_pre.row_sum().transpose();
        Grads { w1, b1, w2, b2 }
    }
}

/// A dataset able to produce two augmented views of any sample.
pub trait ViewSource {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Undistorted input features of sample `idx`.
    fn clean(&self, idx: usize) -> Vec<f64>;
    fn views(&self, idx: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>);
}

/// Raw vectors with additive Gaussian jitter as the augmentation.
#[derive(Debug, Clone)]
pub struct VectorViews {
    pub data: DMatrix<f64>,
    pub noise_std: f64,
}

impl ViewSource for VectorViews {
    fn len(&self) -> usize {
        self.data.nrows()
    }
    fn input_dim(&self) -> usize {
        self.data.ncols()
    }
    fn clean(&self, idx: usize) -> Vec<f64> {
        self.data.row(idx).iter().copied().collect()
    }
    fn views(&self, idx: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let base = self.clean(idx);
        let mut jitter = || -> Vec<f64> {
            base.iter()
                .map(|v| v + self.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let a = jitter();
        let b = jitter();
        (a, b)
    }
}

/// Tiles distorted with [`apply_distortions`], average-pooled to a
/// `pool`×`pool` grid and flattened to `3*pool*pool` features in [0,1].
#[derive(Debug, Clone)]
pub struct TileViews {
    pub tiles: Vec<RasterImage>,
    pub spec: DistortionSpec,
    pub pool: u32,
}

pub fn flatten_tile(tile: &RasterImage, pool: u32) -> Vec<f64> {
    let small = crate::tile::resize_area(tile, pool, pool, tile.mpp());
    small.raw().iter().map(|v| *v as f64 / 255.0).collect()
}

impl ViewSource for TileViews {
    fn len(&self) -> usize {
        self.tiles.len()
    }
    fn input_dim(&self) -> usize {
        (3 * self.pool * self.pool) as usize
    }
    fn clean(&self, idx: usize) -> Vec<f64> {
        flatten_tile(&self.tiles[idx], self.pool)
    }
    fn views(&self, idx: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = apply_distortions(&self.tiles[idx], &self.spec, rng);
        (flatten_tile(&a, self.pool), flatten_tile(&b, self.pool))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub output: usize,
    pub learning_rate: f64,
    pub loss: BtLossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            hidden: 32,
            output: 8,
            learning_rate: 0.1,
            loss: BtLossConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEncoder {
    pub encoder: Mlp,
    /// Mean loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl crate::ingest::Artifact for TrainedEncoder {
    const KIND: &'static str = "toy_encoder";
}

impl TrainedEncoder {
    pub fn project_source(&self, src: &dyn ViewSource) -> DMatrix<f64> {
        let n = src.len();
        let x = DMatrix::from_fn(n, src.input_dim(), |_, _| 0.0);
        let mut x = x;
        for i in 0..n {
            for (j, v) in src.clean(i).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        self.encoder.project(&x)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Trains a fresh encoder on `src`. Batches that do not fill `batch_size` are
/// dropped; the trace holds the mean batch loss of each epoch.
pub fn train_toy_encoder(src: &dyn ViewSource, cfg: &TrainConfig) -> Result<TrainedEncoder> {
    cfg.loss.validate()?;
    if cfg.batch_size < 2 {
        return Err(PrlError::Precondition(format!("batch size {} < 2", cfg.batch_size)));
    }
    if src.len() < 2 * cfg.batch_size {
        return Err(PrlError::Precondition(format!(
            "{} samples is fewer than two batches of {}",
            src.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = Mlp::init(src.input_dim(), cfg.hidden, cfg.output, &mut rng);
    let mut order: Vec<usize> = (0..src.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks_exact(cfg.batch_size) {
            let (va, vb): (Vec<_>, Vec<_>) = batch.iter().map(|&i| src.views(i, &mut rng)).unzip();
            let xa = rows_to_matrix(&va);
            let xb = rows_to_matrix(&vb);
            let fa = encoder.forward(&xa);
            let fb = encoder.forward(&xb);
            let (loss, da, db) = bt_loss_gradient(&fa.out, &fb.out, &cfg.loss)?;
            if !loss.loss.is_finite() {
                return Err(PrlError::Divergence { step, value: loss.loss });
            }
            let ga = encoder.backward(&xa, &fa, &da);
            let gb = encoder.backward(&xb, &fb, &db);
            let lr = cfg.learning_rate;
            encoder.w1 -= (ga.w1 + gb.w1) * lr;
            encoder.b1 -= (ga.b1 + gb.b1) * lr;
            encoder.w2 -= (ga.w2 + gb.w2) * lr;
            encoder.b2 -= (ga.b2 + gb.b2) * lr;
            if encoder.w1.iter().chain(encoder.w2.iter()).any(|v| !v.is_finite()) {
                return Err(PrlError::Divergence { step, value: f64::NAN });
            }
            sum += loss.loss;
            batches += 1;
            step += 1;
        }
        trace.push(sum / batches as f64);
    }
    Ok(TrainedEncoder {
        encoder,
        loss_trace: trace,
    })
}

/// `n` samples of dimension `input` generated as a random linear mix of
/// `factors` standard-normal latent factors plus small isotropic noise.
pub fn planted_factor_data(n: usize, input: usize, factors: usize, noise: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixing = DMatrix::from_fn(factors, input, |_, _| rng.sample::<f64, _>(StandardNormal));
    let latent = DMatrix::from_fn(n, factors, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x: DMatrix<f64> = latent * mixing;
    x.apply(|v| *v += noise * rng.sample::<f64, _>(StandardNormal));
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::loss::cross_correlation;

    fn toy() -> VectorViews {
        VectorViews {
            data: planted_factor_data(768, 16, 4, 0.1, 5).rows(0, 512).into_owned(),
            noise_std: 0.2,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let t = train_toy_encoder(&toy(), &cfg).unwrap();
        let init = Mlp::init(16, cfg.hidden, cfg.output, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        assert_eq!(t.encoder, init);
        assert!(t.loss_trace.is_empty());
    }

    #[test]
    fn batch_of_one_rejected() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train_toy_encoder(&toy(), &cfg), Err(PrlError::Precondition(_))));
    }

    #[test]
    fn huge_step_reports_divergence() {
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: f64::MAX,
            ..TrainConfig::default()
        };
        assert!(matches!(train_toy_encoder(&toy(), &cfg), Err(PrlError::Divergence { .. })));
    }

    #[test]
    fn training_decorrelates_held_out_batch() {
        let cfg = TrainConfig::default();
        let trained = train_toy_encoder(&toy(), &cfg).unwrap();
        let trace = &trained.loss_trace;
        let head: f64 = trace[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = trace[trace.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");

        let held = VectorViews {
            data: planted_factor_data(768, 16, 4, 0.1, 5).rows(512, 256).into_owned(),
            noise_std: 0.2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (va, vb): (Vec<_>, Vec<_>) = (0..held.len()).map(|i| held.views(i, &mut rng)).unzip();
        let za = trained.encoder.project(&rows_to_matrix(&va));
        let zb = trained.encoder.project(&rows_to_matrix(&vb));
        let c = cross_correlation(&za, &zb, cfg.loss.eps).unwrap();
        let d = c.nrows();
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| c[(i, j)].abs())
            .sum::<f64>()
            / (d * (d - 1)) as f64;
        assert!(off < 0.2, "mean off-diagonal |C| = {off}");
    }
}
