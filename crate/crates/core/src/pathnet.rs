//! Map-conditioned trajectory forecaster.
//!
//! An occupancy window around the subject and the recent hip track go
//! through a small convolutional encoder-decoder that emits one heatmap
//! per future step; a soft-argmax layer turns each heatmap into ground
//! coordinates, so position error trains end to end alongside the
//! heatmap and obstacle-avoidance terms.

use crate::encode::HeatmapStack;
use crate::geo::{MapGeo, Vec2};
use crate::grid::OccupancyGrid;
use crate::nn::{
    epoch_rng, read_weights, write_weights, Adam, Gradients, NnError, ParamStore, Tape, Tensor,
    TensorId,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Clamp bound keeping the heatmap cross-entropy finite.
pub const MAP_LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub traj: f64,
    pub final_step: f64,
    pub map: f64,
    pub collision: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { traj: 1.0, final_step: 1.0, map: 2.0, collision: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub traj: f64,
    pub final_step: f64,
    pub map: f64,
    pub collision: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.traj * self.traj
            + w.final_step * self.final_step
            + w.map * self.map
            + w.collision * self.collision
    }
}

// --- value-level losses ----------------------------------------------------

/// Mean Euclidean position error over the horizon.
pub fn traj_loss(gt: &[Vec2], pred: &[Vec2]) -> f64 {
    assert_eq!(gt.len(), pred.len());
    assert!(!gt.is_empty());
    let mut acc = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        acc += p.sub(*g).norm();
    }
    acc / gt.len() as f64
}

/// Euclidean error of the last forecast step only.
pub fn final_loss(gt: &[Vec2], pred: &[Vec2]) -> f64 {
    assert_eq!(gt.len(), pred.len());
    assert!(!gt.is_empty());
    pred[pred.len() - 1].sub(gt[gt.len() - 1]).norm()
}

/// Pixel-weighted binary cross entropy between ground-truth and predicted
/// heatmaps, averaged over all pixels of all steps. Positive (occupied)
/// pixels are up-weighted by `pos_weight`; predictions are clamped to
/// `[eps, 1-eps]` before the logs.
pub fn map_loss(gt: &HeatmapStack, pred: &HeatmapStack, pos_weight: f64) -> f64 {
    assert_eq!(gt.geo(), pred.geo());
    assert_eq!(gt.horizon(), pred.horizon());
    let mut acc = 0.0;
    for (&m, &p) in gt.values().iter().zip(pred.values()) {
        let p = p.clamp(MAP_LOSS_EPS, 1.0 - MAP_LOSS_EPS);
        acc += -(pos_weight * m * p.ln() + (1.0 - m) * (1.0 - p).ln());
    }
    acc / gt.values().len() as f64
}

/// Obstacle-overlap penalty: the predicted probability mass sitting on
/// occupied cells, summed over pixels and averaged over steps.
pub fn collision_loss(pred: &HeatmapStack, obstacles: &OccupancyGrid) -> f64 {
    assert_eq!(pred.geo(), obstacles.geo());
    let mut acc = 0.0;
    for t in 0..pred.horizon() {
        for (&p, &s) in pred.slice(t).iter().zip(obstacles.cells()) {
            acc += p * s.abs();
        }
    }
    acc / pred.horizon() as f64
}

// --- model -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PathNetConfig {
    /// Observed history length N (frames).
    pub history_len: usize,
    /// Forecast horizon T (frames).
    pub horizon: usize,
    pub map_height: usize,
    pub map_width: usize,
    /// Encoder channel widths; the decoder mirrors them.
    pub channels: [usize; 3],
    pub bottleneck: usize,
    /// Soft-argmax inverse temperature for decoding positions.
    pub beta: f64,
    pub weights: LossWeights,
    pub map_pos_weight: f64,
}

impl Default for PathNetConfig {
    fn default() -> Self {
        // One second of history, three seconds of forecast at 15 Hz, over
        // a 5 m x 5 m window at 0.125 m resolution.
        PathNetConfig {
            history_len: 15,
            horizon: 45,
            map_height: 40,
            map_width: 40,
            channels: [8, 16, 32],
            bottleneck: 64,
            beta: 10.0,
            weights: LossWeights::default(),
            map_pos_weight: 40.0,
        }
    }
}

impl PathNetConfig {
    fn validate(&self) -> Result<(), NnError> {
        if self.history_len == 0 || self.horizon == 0 {
            return Err(NnError::InvalidArgument("history and horizon must be positive".into()));
        }
        if self.map_height % 8 != 0 || self.map_width % 8 != 0 {
            return Err(NnError::InvalidArgument(format!(
                "map {}x{} not divisible by 8 (three stride-2 stages)",
                self.map_width, self.map_height
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.bottleneck == 0 {
            return Err(NnError::InvalidArgument("zero-width layer".into()));
        }
        Ok(())
    }

    fn latent_len(&self) -> usize {
        self.channels[2] * (self.map_height / 8) * (self.map_width / 8)
    }

    /// `(name, shape, fan_in)` for every tensor, in checkpoint order.
    /// Biases use their layer's fan-in so no unit starts exactly on the
    /// relu kink.
    fn param_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let [c1, c2, c3] = self.channels;
        let b = self.bottleneck;
        let latent = self.latent_len();
        let n2 = 2 * self.history_len;
        vec![
            ("enc1.w".into(), vec![c1, 1, 3, 3], 9),
            ("enc1.b".into(), vec![c1], 9),
            ("enc2.w".into(), vec![c2, c1, 3, 3], 9 * c1),
            ("enc2.b".into(), vec![c2], 9 * c1),
            ("enc3.w".into(), vec![c3, c2, 3, 3], 9 * c2),
            ("enc3.b".into(), vec![c3], 9 * c2),
            ("map_fc.w".into(), vec![b, latent], latent),
            ("map_fc.b".into(), vec![b], latent),
            ("hist_fc.w".into(), vec![b, n2], n2),
            ("hist_fc.b".into(), vec![b], n2),
            ("fuse.w".into(), vec![b, 2 * b], 2 * b),
            ("fuse.b".into(), vec![b], 2 * b),
            ("dec_fc.w".into(), vec![latent, b], b),
            ("dec_fc.b".into(), vec![latent], b),
            ("dec1.w".into(), vec![c2, c3, 3, 3], 9 * c3),
            ("dec1.b".into(), vec![c2], 9 * c3),
            ("dec2.w".into(), vec![c1, c2, 3, 3], 9 * c2),
            ("dec2.b".into(), vec![c1], 9 * c2),
            ("dec3.w".into(), vec![self.horizon, c1, 3, 3], 9 * c1),
            ("dec3.b".into(), vec![self.horizon], 9 * c1),
        ]
    }
}

const META_NAME: &str = "meta.arch";

fn meta_tensor(cfg: &PathNetConfig) -> Tensor {
    let v = vec![
        cfg.history_len as f64,
        cfg.horizon as f64,
        cfg.map_height as f64,
        cfg.map_width as f64,
        cfg.channels[0] as f64,
        cfg.channels[1] as f64,
        cfg.channels[2] as f64,
        cfg.bottleneck as f64,
    ];
    Tensor::new(vec![8], v).unwrap()
}

fn config_from_meta(data: &[f64]) -> Result<PathNetConfig, NnError> {
    if data.len() != 8 || data.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return Err(NnError::Format("bad architecture metadata".into()));
    }
    Ok(PathNetConfig {
        history_len: data[0] as usize,
        horizon: data[1] as usize,
        map_height: data[2] as usize,
        map_width: data[3] as usize,
        channels: [data[4] as usize, data[5] as usize, data[6] as usize],
        bottleneck: data[7] as usize,
        ..PathNetConfig::default()
    })
}

pub struct PathNet {
    pub config: PathNetConfig,
    pub store: ParamStore,
}

/// Node handles of one forward pass.
pub struct PathForward {
    /// Per-step occupancy-probability maps, `[T, H, W]`, in `(0, 1)`.
    pub heatmaps: TensorId,
    /// Decoded per-step positions in the map's frame, each `[2]`.
    pub positions: Vec<TensorId>,
}

/// Node handles of the loss graph.
pub struct PathLoss {
    pub total: TensorId,
    pub traj: TensorId,
    pub final_step: TensorId,
    pub map: TensorId,
    pub collision: TensorId,
}

/// One training example, everything already expressed in the frame of the
/// last observed position (the map window is centered there too).
#[derive(Debug, Clone)]
pub struct PathSample {
    /// What the network sees (possibly visibility-masked or blanked).
    pub input_map: OccupancyGrid,
    /// Ground-truth obstacles for the collision penalty.
    pub obstacle_map: OccupancyGrid,
    /// N observed positions, oldest first; the last one is the origin.
    pub history: Vec<Vec2>,
    /// T future positions, soonest first.
    pub future: Vec<Vec2>,
    /// Per-step ground-truth occupancy of the future positions.
    pub future_maps: HeatmapStack,
}

impl PathNet {
    pub fn new(config: PathNetConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut store = ParamStore::new();
        store.add(META_NAME, meta_tensor(&config))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, fan_in) in config.param_specs() {
            store.add_uniform(&name, shape, fan_in, &mut rng)?;
        }
        Ok(PathNet { config, store })
    }

    pub fn from_store(store: ParamStore) -> Result<Self, NnError> {
        let meta = store
            .id(META_NAME)
            .ok_or_else(|| NnError::Format("missing architecture metadata".into()))?;
        let config = config_from_meta(store.tensor(meta).data())?;
        config.validate()?;
        for (name, shape, _) in config.param_specs() {
            let id = store
                .id(&name)
                .ok_or_else(|| NnError::Format(format!("missing parameter {name}")))?;
            if store.tensor(id).shape() != shape.as_slice() {
                return Err(NnError::Format(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.tensor(id).shape()
                )));
            }
        }
        Ok(PathNet { config, store })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = std::fs::File::create(path)?;
        write_weights(&self.store, std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let file = std::fs::File::open(path)?;
        Self::from_store(read_weights(std::io::BufReader::new(file))?)
    }

    fn param(&self, tape: &mut Tape, name: &str) -> Result<TensorId, NnError> {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from validated store"));
        tape.param(&self.store, id)
    }

    /// Record the forward pass for one sample on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input_map: &OccupancyGrid,
        history: &[Vec2],
    ) -> Result<PathForward, NnError> {
        let cfg = &self.config;
        let geo = *input_map.geo();
        if geo.height != cfg.map_height || geo.width != cfg.map_width {
            return Err(NnError::ShapeMismatch {
                op: "pathnet_forward",
                detail: format!(
                    "map {}x{}, model expects {}x{}",
                    geo.width, geo.height, cfg.map_width, cfg.map_height
                ),
            });
        }
        if history.len() != cfg.history_len {
            return Err(NnError::ShapeMismatch {
                op: "pathnet_forward",
                detail: format!("history {} != {}", history.len(), cfg.history_len),
            });
        }

        let x = tape.input(Tensor::new(
            vec![1, cfg.map_height, cfg.map_width],
            input_map.cells().to_vec(),
        )?)?;
        let (w1, b1) = (self.param(tape, "enc1.w")?, self.param(tape, "enc1.b")?);
        let h1 = tape.conv2d(x, w1, b1, 2, 1)?;
        let h1 = tape.relu(h1)?;
        let (w2, b2) = (self.param(tape, "enc2.w")?, self.param(tape, "enc2.b")?);
        let h2 = tape.conv2d(h1, w2, b2, 2, 1)?;
        let h2 = tape.relu(h2)?;
        let (w3, b3) = (self.param(tape, "enc3.w")?, self.param(tape, "enc3.b")?);
        let h3 = tape.conv2d(h2, w3, b3, 2, 1)?;
        let h3 = tape.relu(h3)?;

        let latent = cfg.latent_len();
        let flat = tape.reshape(h3, vec![latent])?;
        let (wm, bm) = (self.param(tape, "map_fc.w")?, self.param(tape, "map_fc.b")?);
        let zm = tape.linear(wm, flat, bm)?;
        let zm = tape.relu(zm)?;

        let mut hist_flat = Vec::with_capacity(2 * cfg.history_len);
        for p in history {
            hist_flat.push(p.x);
            hist_flat.push(p.y);
        }
        let hist_in = tape.input(Tensor::new(vec![2 * cfg.history_len], hist_flat)?)?;
        let (wh, bh) = (self.param(tape, "hist_fc.w")?, self.param(tape, "hist_fc.b")?);
        let zh = tape.linear(wh, hist_in, bh)?;
        let zh = tape.relu(zh)?;

        let zcat = tape.concat(&[zm, zh], 0)?;
        let (wf, bf) = (self.param(tape, "fuse.w")?, self.param(tape, "fuse.b")?);
        let z = tape.linear(wf, zcat, bf)?;
        let z = tape.relu(z)?;

        let (wd, bd) = (self.param(tape, "dec_fc.w")?, self.param(tape, "dec_fc.b")?);
        let d0 = tape.linear(wd, z, bd)?;
        let d0 = tape.relu(d0)?;
        let d0 = tape.reshape(d0, vec![cfg.channels[2], cfg.map_height / 8, cfg.map_width / 8])?;

        let u1 = tape.upsample2x(d0)?;
        let (dw1, db1) = (self.param(tape, "dec1.w")?, self.param(tape, "dec1.b")?);
        let d1 = tape.conv2d(u1, dw1, db1, 1, 1)?;
        let d1 = tape.relu(d1)?;
        let u2 = tape.upsample2x(d1)?;
        let (dw2, db2) = (self.param(tape, "dec2.w")?, self.param(tape, "dec2.b")?);
        let d2 = tape.conv2d(u2, dw2, db2, 1, 1)?;
        let d2 = tape.relu(d2)?;
        let u3 = tape.upsample2x(d2)?;
        let (dw3, db3) = (self.param(tape, "dec3.w")?, self.param(tape, "dec3.b")?);
        let logits = tape.conv2d(u3, dw3, db3, 1, 1)?;
        let heatmaps = tape.sigmoid(logits)?;

        let positions = self.decode_positions(tape, heatmaps, geo)?;
        Ok(PathForward { heatmaps, positions })
    }

    /// Differentiable soft-argmax of every step's heatmap, mapped to the
    /// raster's frame.
    fn decode_positions(
        &self,
        tape: &mut Tape,
        heatmaps: TensorId,
        geo: MapGeo,
    ) -> Result<Vec<TensorId>, NnError> {
        let cfg = &self.config;
        let n = geo.len();
        let mut us = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for v in 0..geo.height {
            for u in 0..geo.width {
                us.push(u as f64);
                vs.push(v as f64);
            }
        }
        let u_coords = tape.input(Tensor::new(vec![n], us)?)?;
        let v_coords = tape.input(Tensor::new(vec![n], vs)?)?;

        let mut positions = Vec::with_capacity(cfg.horizon);
        for t in 0..cfg.horizon {
            let slice = tape.slice(heatmaps, 0, t, 1)?;
            let flat = tape.reshape(slice, vec![n])?;
            let scaled = tape.scale(flat, cfg.beta)?;
            let w = tape.softmax(scaled)?;
            let wu = tape.mul(w, u_coords)?;
            let wv = tape.mul(w, v_coords)?;
            let eu = tape.sum(wu)?;
            let ev = tape.sum(wv)?;
            let x = tape.scale(eu, geo.resolution)?;
            let x = tape.add_scalar(x, geo.origin.x)?;
            let y = tape.scale(ev, geo.resolution)?;
            let y = tape.add_scalar(y, geo.origin.y)?;
            positions.push(tape.concat(&[x, y], 0)?);
        }
        Ok(positions)
    }

    /// Attach the four loss terms and their weighted total.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        out: &PathForward,
        sample: &PathSample,
    ) -> Result<PathLoss, NnError> {
        let cfg = &self.config;
        if sample.future.len() != cfg.horizon
            || sample.future_maps.horizon() != cfg.horizon
            || sample.future_maps.geo() != sample.input_map.geo()
            || sample.obstacle_map.geo() != sample.input_map.geo()
        {
            return Err(NnError::ShapeMismatch {
                op: "pathnet_loss",
                detail: "sample horizon or rasters inconsistent with model".into(),
            });
        }

        // Position terms.
        let mut step_errs = Vec::with_capacity(cfg.horizon);
        for (t, p) in out.positions.iter().enumerate() {
            let gt = tape.input(Tensor::new(
                vec![2],
                vec![sample.future[t].x, sample.future[t].y],
            )?)?;
            let d = tape.sub(*p, gt)?;
            step_errs.push(tape.l2norm(d)?);
        }
        let errs = tape.concat(&step_errs, 0)?;
        let traj = tape.mean(errs)?;
        let final_step = step_errs[cfg.horizon - 1];

        // Heatmap cross entropy, positive pixels up-weighted.
        let gt_maps = tape.input(Tensor::new(
            vec![cfg.horizon, cfg.map_height, cfg.map_width],
            sample.future_maps.values().to_vec(),
        )?)?;
        let p = tape.clamp(out.heatmaps, MAP_LOSS_EPS, 1.0 - MAP_LOSS_EPS)?;
        let logp = tape.log(p)?;
        let pos = tape.mul(gt_maps, logp)?;
        let pos = tape.scale(pos, self.config.map_pos_weight)?;
        let one_minus_m = tape.one_minus(gt_maps)?;
        let one_minus_p = tape.one_minus(p)?;
        let lognp = tape.log(one_minus_p)?;
        let neg = tape.mul(one_minus_m, lognp)?;
        let bce = tape.add(pos, neg)?;
        let bce = tape.scale(bce, -1.0)?;
        let map = tape.mean(bce)?;

        // Obstacle overlap, summed per step, averaged over steps.
        let mut tiled = Vec::with_capacity(cfg.horizon * sample.obstacle_map.cells().len());
        for _ in 0..cfg.horizon {
            tiled.extend(sample.obstacle_map.cells().iter().map(|s| s.abs()));
        }
        let s = tape.input(Tensor::new(
            vec![cfg.horizon, cfg.map_height, cfg.map_width],
            tiled,
        )?)?;
        let overlap = tape.mul(out.heatmaps, s)?;
        let col_sum = tape.sum(overlap)?;
        let collision = tape.scale(col_sum, 1.0 / cfg.horizon as f64)?;

        let w = &cfg.weights;
        let wt = tape.scale(traj, w.traj)?;
        let wf = tape.scale(final_step, w.final_step)?;
        let wm = tape.scale(map, w.map)?;
        let wc = tape.scale(collision, w.collision)?;
        let s1 = tape.add(wt, wf)?;
        let s2 = tape.add(s1, wm)?;
        let total = tape.add(s2, wc)?;
        Ok(PathLoss { total, traj, final_step, map, collision })
    }

    /// Read decoded positions out of a forward pass.
    pub fn positions_of(&self, tape: &Tape, out: &PathForward) -> Vec<Vec2> {
        out.positions
            .iter()
            .map(|&id| {
                let d = tape.data(id);
                Vec2::new(d[0], d[1])
            })
            .collect()
    }

    /// Read predicted heatmaps out of a forward pass.
    pub fn heatmaps_of(&self, tape: &Tape, out: &PathForward, geo: MapGeo) -> HeatmapStack {
        HeatmapStack::from_values(geo, self.config.horizon, tape.data(out.heatmaps).to_vec())
            .expect("forward output matches raster")
    }

    /// Forward one sample without recording losses; returns positions and
    /// heatmaps.
    pub fn predict(
        &self,
        input_map: &OccupancyGrid,
        history: &[Vec2],
    ) -> Result<(Vec<Vec2>, HeatmapStack), NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input_map, history)?;
        let positions = self.positions_of(&tape, &out);
        let maps = self.heatmaps_of(&tape, &out, *input_map.geo());
        Ok((positions, maps))
    }

    /// Value-level loss parts for a prediction (no tape required).
    pub fn eval_losses(&self, sample: &PathSample) -> Result<LossParts, NnError> {
        let (positions, maps) = self.predict(&sample.input_map, &sample.history)?;
        Ok(LossParts {
            traj: traj_loss(&sample.future, &positions),
            final_step: final_loss(&sample.future, &positions),
            map: map_loss(&sample.future_maps, &maps, self.config.map_pos_weight),
            collision: collision_loss(&maps, &sample.obstacle_map),
        })
    }
}

// --- training ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_gamma: f64,
    pub lr_step_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1200,
            batch_size: 16,
            lr0: 1e-3,
            lr_gamma: 0.1,
            lr_step_epochs: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean weighted total loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl PathNet {
    /// Minimize the weighted total loss with Adam and a step-decayed
    /// learning rate. Deterministic for a fixed seed and sample order.
    pub fn train(
        &mut self,
        samples: &[PathSample],
        cfg: &TrainConfig,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<TrainReport, NnError> {
        let mut opt = Adam::new(cfg.lr0, &self.store);
        self.train_from(samples, cfg, 0, &mut opt, on_epoch)
    }

    /// Run epochs `start_epoch..cfg.epochs` with a caller-owned optimizer.
    /// Batch order depends only on `(cfg.seed, epoch)`, so restoring the
    /// weights and optimizer state from epoch k and calling this with
    /// `start_epoch = k` replays the exact remainder of an uninterrupted
    /// run.
    pub fn train_from(
        &mut self,
        samples: &[PathSample],
        cfg: &TrainConfig,
        start_epoch: usize,
        opt: &mut Adam,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<TrainReport, NnError> {
        if samples.is_empty() {
            return Err(NnError::InvalidArgument("no training samples".into()));
        }
        if cfg.batch_size == 0 {
            return Err(NnError::InvalidArgument("batch size must be positive".into()));
        }
        if start_epoch > cfg.epochs {
            return Err(NnError::InvalidArgument(format!(
                "start epoch {start_epoch} is past the last epoch {}",
                cfg.epochs
            )));
        }
        let mut grads = Gradients::zeros(&self.store);
        let mut epoch_loss = Vec::with_capacity(cfg.epochs - start_epoch);

        for epoch in start_epoch..cfg.epochs {
            opt.lr = crate::nn::step_decay_lr(cfg.lr0, cfg.lr_gamma, cfg.lr_step_epochs, epoch);
            // Shuffle the identity order, not last epoch's: the batch
            // schedule must be a function of (seed, epoch) alone.
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = epoch_rng(cfg.seed, epoch);
            order.shuffle(&mut rng);
            let mut epoch_total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grads.clear();
                let mut batch_total = 0.0;
                for &i in batch {
                    let sample = &samples[i];
                    let mut tape = Tape::new();
                    let out = self.forward(&mut tape, &sample.input_map, &sample.history)?;
                    let loss = self.loss_graph(&mut tape, &out, sample)?;
                    tape.backward(loss.total)?;
                    tape.accumulate_param_grads(&mut grads);
                    batch_total += tape.value(loss.total).item();
                }
                grads.scale(1.0 / batch.len() as f64);
                opt.step(&mut self.store, &grads);
                epoch_total += batch_total;
            }
            let mean = epoch_total / samples.len() as f64;
            epoch_loss.push(mean);
            on_epoch(epoch, mean);
        }
        Ok(TrainReport { epoch_loss })
    }
}

/// Whole-model gradient check on a tiny instance: analytic parameter
/// gradients against central differences of the total loss.
pub fn model_gradcheck(seed: u64) -> Result<crate::nn::GradCheck, NnError> {
    use crate::nn::{numeric_gradient, GradCheck};

    let cfg = PathNetConfig {
        history_len: 2,
        horizon: 2,
        map_height: 16,
        map_width: 16,
        channels: [2, 3, 4],
        bottleneck: 6,
        beta: 10.0,
        ..PathNetConfig::default()
    };
    let model = PathNet::new(cfg, seed)?;
    let sample = synthetic_sample(&model.config, seed);

    // Flatten all trainable parameters (skip metadata).
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id) != META_NAME).collect();
    let mut flat = Vec::new();
    for &id in &ids {
        flat.extend_from_slice(model.store.tensor(id).data());
    }

    let eval = |x: &[f64], want_grad: bool| -> Result<(f64, Option<Vec<f64>>), NnError> {
        let mut m = PathNet::new(model.config.clone(), seed)?;
        let mut off = 0;
        for &id in &ids {
            let t = m.store.tensor_mut(id);
            let n = t.len();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        }
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &sample.input_map, &sample.history)?;
        let loss = m.loss_graph(&mut tape, &out, &sample)?;
        let value = tape.value(loss.total).item();
        if !want_grad {
            return Ok((value, None));
        }
        tape.backward(loss.total)?;
        let mut grads = Gradients::zeros(&m.store);
        tape.accumulate_param_grads(&mut grads);
        let mut g = Vec::with_capacity(x.len());
        for &id in &ids {
            g.extend_from_slice(grads.get(id));
        }
        Ok((value, Some(g)))
    };

    let (_, analytic) = eval(&flat, true)?;
    let numeric = numeric_gradient(|x| eval(x, false).map(|(v, _)| v), &flat, 1e-5)?;
    Ok(GradCheck::compare(&analytic.unwrap(), &numeric))
}

/// Deterministic synthetic sample matching a config; used by gradient
/// checks and smoke tests.
pub fn synthetic_sample(cfg: &PathNetConfig, seed: u64) -> PathSample {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let half_w = cfg.map_width as f64 * 0.125 / 2.0;
    let half_h = cfg.map_height as f64 * 0.125 / 2.0;
    let geo = MapGeo::local(half_w, half_h, 0.125);
    let mut input = OccupancyGrid::new_free(geo);
    for _ in 0..cfg.map_width {
        let u = rng.random_range(0..geo.width);
        let v = rng.random_range(0..geo.height);
        input.set(u, v, 1.0);
    }
    let obstacle = input.clone();

    // A gentle forward walk through the window.
    let step = half_w / (cfg.history_len + cfg.horizon) as f64;
    let mut history = Vec::new();
    for i in 0..cfg.history_len {
        let k = i as f64 - (cfg.history_len - 1) as f64;
        history.push(Vec2::new(k * step, 0.02 * k));
    }
    let mut future = Vec::new();
    for i in 1..=cfg.horizon {
        let k = i as f64;
        future.push(Vec2::new(k * step, 0.02 * k));
    }
    let future_maps = crate::encode::encode_trajectory_binary(&future, geo);
    PathSample { input_map: input, obstacle_map: obstacle, history, future, future_maps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> PathNetConfig {
        PathNetConfig {
            history_len: 3,
            horizon: 2,
            map_height: 8,
            map_width: 8,
            channels: [2, 3, 4],
            bottleneck: 8,
            beta: 10.0,
            ..PathNetConfig::default()
        }
    }

    #[test]
    fn value_losses_match_hand_examples() {
        // Straight-line oracle: prediction offset by a constant 0.3 m in y
        // from a straight ground-truth track.
        let gt: Vec<Vec2> = (1..=4).map(|i| Vec2::new(i as f64 * 0.5, 0.0)).collect();
        let pred: Vec<Vec2> = gt.iter().map(|p| Vec2::new(p.x, 0.3)).collect();
        assert_abs_diff_eq!(traj_loss(&gt, &pred), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(final_loss(&gt, &pred), 0.3, epsilon = 1e-15);
        assert_eq!(traj_loss(&gt, &gt), 0.0);

        // Two-pixel map: gt hot pixel predicted at 0.9, background at 0.2.
        let geo = MapGeo::new(2, 1, 1.0, Vec2::ZERO);
        let gt_maps = HeatmapStack::from_values(geo, 1, vec![1.0, 0.0]).unwrap();
        let pred_maps = HeatmapStack::from_values(geo, 1, vec![0.9, 0.2]).unwrap();
        // Hot pixel contributes -40 ln 0.9, background pixel -ln 0.8.
        let want = (-40.0 * 0.9f64.ln() - 0.8f64.ln()) / 2.0;
        assert_abs_diff_eq!(map_loss(&gt_maps, &pred_maps, 40.0), want, epsilon = 1e-15);

        // Collision: mass 0.9 + 0.2 over an all-occupied two-cell map.
        let obstacles =
            OccupancyGrid::from_cells(geo, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            collision_loss(&pred_maps, &obstacles),
            1.1,
            epsilon = 1e-15
        );

        let parts = LossParts { traj: 1.0, final_step: 1.0, map: 1.0, collision: 1.0 };
        assert_eq!(parts.total(&LossWeights::default()), 5.0);
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let model = PathNet::new(tiny_config(), 1).unwrap();
        let sample = synthetic_sample(&model.config, 1);
        let (positions, maps) = model.predict(&sample.input_map, &sample.history).unwrap();
        assert_eq!(positions.len(), 2);
        assert_eq!(maps.horizon(), 2);
        assert!(maps.values().iter().all(|&p| p > 0.0 && p < 1.0));
        // Soft-argmax output must land inside the raster window.
        let geo = sample.input_map.geo();
        for p in &positions {
            let px = geo.world_to_pixel(*p);
            assert!(px.x >= 0.0 && px.x <= (geo.width - 1) as f64);
            assert!(px.y >= 0.0 && px.y <= (geo.height - 1) as f64);
        }
    }

    #[test]
    fn graph_losses_equal_value_losses() {
        let model = PathNet::new(tiny_config(), 2).unwrap();
        let sample = synthetic_sample(&model.config, 2);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &sample.input_map, &sample.history).unwrap();
        let loss = model.loss_graph(&mut tape, &out, &sample).unwrap();

        let parts = model.eval_losses(&sample).unwrap();
        assert_abs_diff_eq!(tape.value(loss.traj).item(), parts.traj, epsilon = 1e-12);
        assert_abs_diff_eq!(
            tape.value(loss.final_step).item(),
            parts.final_step,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(tape.value(loss.map).item(), parts.map, epsilon = 1e-12);
        assert_abs_diff_eq!(
            tape.value(loss.collision).item(),
            parts.collision,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            tape.value(loss.total).item(),
            parts.total(&model.config.weights),
            epsilon = 1e-12
        );
    }

    #[test]
    fn model_gradients_match_numeric() {
        let check = model_gradcheck(5).unwrap();
        assert!(check.max_rel_err <= 1e-4, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn overfits_a_single_sample() {
        // Needs a 2x2 spatial latent so the decoder can place probability
        // mass precisely; an 8x8 map collapses to 1x1 and plateaus.
        let config = PathNetConfig {
            history_len: 3,
            horizon: 2,
            map_height: 16,
            map_width: 16,
            channels: [4, 8, 16],
            bottleneck: 32,
            beta: 10.0,
            ..PathNetConfig::default()
        };
        let mut model = PathNet::new(config, 3).unwrap();
        let sample = synthetic_sample(&model.config, 3);
        let before = {
            let parts = model.eval_losses(&sample).unwrap();
            parts.total(&model.config.weights)
        };
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 1,
            lr0: 1e-2,
            lr_gamma: 0.1,
            lr_step_epochs: 300,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = model.train(std::slice::from_ref(&sample), &cfg, |_, _| {}).unwrap();
        let after = {
            let parts = model.eval_losses(&sample).unwrap();
            parts.total(&model.config.weights)
        };
        assert!(
            after < 0.5 * before,
            "training did not reduce loss: {before} -> {after}"
        );
        assert!(report.epoch_loss.last().unwrap() < report.epoch_loss.first().unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut model = PathNet::new(tiny_config(), 4).unwrap();
            let samples = vec![
                synthetic_sample(&model.config, 4),
                synthetic_sample(&model.config, 5),
            ];
            let cfg = TrainConfig {
                epochs: 5,
                batch_size: 2,
                lr0: 1e-3,
                seed: 9,
                ..TrainConfig::default()
            };
            let report = model.train(&samples, &cfg, |_, _| {}).unwrap();
            (report.epoch_loss, model)
        };
        let (l1, m1) = run();
        let (l2, m2) = run();
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for id in m1.store.ids() {
            let other = m2.store.id(m1.store.name(id)).unwrap();
            for (a, b) in m1.store.tensor(id).data().iter().zip(m2.store.tensor(other).data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let model = PathNet::new(tiny_config(), 6).unwrap();
        let sample = synthetic_sample(&model.config, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("path.fawt");
        model.save(&path).unwrap();
        let back = PathNet::load(&path).unwrap();
        assert_eq!(back.config.history_len, model.config.history_len);
        assert_eq!(back.config.channels, model.config.channels);
        let (p1, m1) = model.predict(&sample.input_map, &sample.history).unwrap();
        let (p2, m2) = back.predict(&sample.input_map, &sample.history).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
        for (a, b) in m1.values().iter().zip(m2.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_misshapen_inputs() {
        let model = PathNet::new(tiny_config(), 7).unwrap();
        let sample = synthetic_sample(&model.config, 7);
        let mut tape = Tape::new();
        // Wrong history length.
        assert!(model
            .forward(&mut tape, &sample.input_map, &sample.history[..2])
            .is_err());
        // Wrong raster size.
        let wrong = OccupancyGrid::new_free(MapGeo::local(1.0, 1.0, 0.125));
        assert!(model.forward(&mut tape, &wrong, &sample.history).is_err());
        // Map size not divisible by 8.
        let bad = PathNetConfig { map_height: 10, ..tiny_config() };
        assert!(PathNet::new(bad, 0).is_err());
    }
}
