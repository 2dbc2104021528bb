//! Training loop: seeded per-epoch shuffle, drop-last batching, combined
//! loss, poly-decayed Adam, periodic checkpoints.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::{cfa_perms, Checkpoint, NamedTensor, Progress, RngState, TrainOptions};
use super::schedule::poly_lr;
use crate::data::{stack_batch, SegmentationSample};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::nn::{Module, PRNet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f32,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} epoch={} lr={:e} loss={:e}",
            self.iter, self.epoch, self.lr, self.loss
        )
    }
}

pub struct Trainer {
    pub model: PRNet<f32>,
    pub adam: AdamState<f32>,
    pub options: TrainOptions,
    pub progress: Progress,
    rng: ChaCha8Rng,
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn rng_restore(s: &RngState) -> Result<ChaCha8Rng> {
    let bad = || Error::Checkpoint("malformed RNG state".into());
    if s.seed.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(s.stream);
    rng.set_word_pos(s.word_pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

impl Trainer {
    pub fn new(model: PRNet<f32>, options: TrainOptions) -> Result<Self> {
        if options.epochs == 0 || options.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if options.lr0.is_nan() || options.lr0 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                options.lr0
            )));
        }
        let adam = AdamState::new(
            &model,
            AdamConfig {
                lr0: options.lr0,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            model,
            adam,
            options,
            progress: Progress { epoch: 0, iteration: 0 },
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.build_model()?;
        let fresh = AdamState::new(&model, ck.adam.config);
        if fresh.names != ck.adam.names {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        Ok(Self {
            model,
            adam: ck.adam.clone(),
            options: ck.options.clone(),
            progress: ck.progress.clone(),
            rng: rng_restore(&ck.rng)?,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            options: self.options.clone(),
            progress: self.progress.clone(),
            rng: rng_state(&self.rng),
            adam: self.adam.clone(),
            cfa_permutations: cfa_perms(&self.model),
            params: self
                .model
                .named_parameters()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    /// Poly horizon: `epochs · ⌊n / batch⌋`.
    pub fn max_iter(&self, n: usize) -> usize {
        self.options.epochs * (n / self.options.batch_size)
    }

    fn check_data(&self, data: &[SegmentationSample]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if self.options.batch_size > data.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the {} training samples",
                self.options.batch_size,
                data.len()
            )));
        }
        let cfg = self.model.config();
        for s in data {
            s.check_classes(cfg.num_classes)?;
            if (s.height, s.width) != (cfg.input_height, cfg.input_width) {
                return Err(Error::Dataset(format!(
                    "sample {} is {}x{}, model expects {}x{}",
                    s.id, s.height, s.width, cfg.input_height, cfg.input_width
                )));
            }
        }
        Ok(())
    }

    /// One optimizer step on a batch; returns the loss before the update.
    pub fn step(&mut self, batch: &[&SegmentationSample], lr: f64) -> Result<f32> {
        let (x, target) = stack_batch(batch)?;
        self.model.zero_grad();
        let loss = combined_loss(&self.model.forward(&x)?, &target)?;
        loss.backward()?;
        self.adam.step(&self.model, lr)?;
        Ok(loss.item())
    }

    /// Trains until `options.epochs` are complete, resuming from the current
    /// progress. `on_log` sees every record; checkpoints go to `out` when given.
    pub fn run(
        &mut self,
        data: &[SegmentationSample],
        out: Option<&Path>,
        on_log: &mut dyn FnMut(&LogRecord) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        self.check_data(data)?;
        let per_epoch = data.len() / self.options.batch_size;
        let max_iter = self.max_iter(data.len());
        if self.progress.iteration != self.progress.epoch * per_epoch {
            return Err(Error::Checkpoint(format!(
                "progress {} iterations after {} epochs does not fit {per_epoch} steps per epoch",
                self.progress.iteration, self.progress.epoch
            )));
        }
        let mut log = Vec::new();
        let mut order: Vec<usize> = (0..data.len()).collect();
        while self.progress.epoch < self.options.epochs {
            order.sort_unstable();
            order.shuffle(&mut self.rng);
            for b in 0..per_epoch {
                let batch: Vec<&SegmentationSample> = order[b * self.options.batch_size..][..self.options.batch_size]
                    .iter()
                    .map(|&i| &data[i])
                    .collect();
                let iter = self.progress.iteration;
                let lr = poly_lr(iter, max_iter, self.options.lr0, self.options.poly_power)?;
                let loss = self.step(&batch, lr)?;
                let rec = LogRecord {
                    iter,
                    epoch: self.progress.epoch,
                    lr,
                    loss,
                };
                on_log(&rec)?;
                log.push(rec);
                self.progress.iteration += 1;
            }
            self.progress.epoch += 1;
            if let Some(dir) = out {
                let every = self.options.checkpoint_every;
                if every > 0 && self.progress.epoch.is_multiple_of(every) {
                    self.checkpoint()
                        .save(&epoch_checkpoint_path(dir, self.progress.epoch))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(log)
    }
}

pub const FINAL_CHECKPOINT: &str = "final.prnc";

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.prnc"))
}
