//! Recurrent pose completion on top of a forecast ground track.
//!
//! Two small MLPs summarize the observed hip-relative poses and the
//! conditioning trajectory into an initial GRU state; the cell then rolls
//! forward once per future step and a linear head emits a full skeleton.
//! The head's output is re-anchored by subtracting its own hip joint, so
//! the hip of every emitted frame lands exactly on the conditioning
//! trajectory and the network only ever learns body shape around it.
//!
//! The trajectory is fed to the network as per-step displacements (the
//! first one zero), never as absolute positions. Translating the
//! conditioning track therefore translates every output joint rigidly.

use crate::encode::lift_pose;
use crate::geo::Vec2;
use crate::nn::{
    read_weights, write_weights, Adam, Gradients, NnError, ParamStore, Tape, Tensor, TensorId,
};
use crate::pathnet::TrainReport;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseNetConfig {
    /// Observed history length N (frames).
    pub history_len: usize,
    /// Forecast horizon T (frames).
    pub horizon: usize,
    /// Joints per skeleton frame; joint 0 is the hip anchor.
    pub joints: usize,
    /// GRU state width.
    pub hidden: usize,
    /// Encoder MLP width.
    pub enc_width: usize,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        PoseNetConfig {
            history_len: 15,
            horizon: 45,
            joints: crate::encode::JOINT_COUNT,
            hidden: 64,
            enc_width: 64,
        }
    }
}

impl PoseNetConfig {
    fn validate(&self) -> Result<(), NnError> {
        if self.history_len == 0 || self.horizon == 0 {
            return Err(NnError::InvalidArgument("history and horizon must be positive".into()));
        }
        if self.joints == 0 || self.hidden == 0 || self.enc_width == 0 {
            return Err(NnError::InvalidArgument("zero-width layer".into()));
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` for every tensor, in checkpoint order.
    fn param_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let e = self.enc_width;
        let h = self.hidden;
        let j3 = self.joints * 3;
        let hist_in = self.history_len * j3;
        let traj_in = self.horizon * 2;
        let mut specs = vec![
            ("hist_fc1.w".into(), vec![e, hist_in], hist_in),
            ("hist_fc1.b".into(), vec![e], hist_in),
            ("hist_fc2.w".into(), vec![e, e], e),
            ("hist_fc2.b".into(), vec![e], e),
            ("traj_fc1.w".into(), vec![e, traj_in], traj_in),
            ("traj_fc1.b".into(), vec![e], traj_in),
            ("traj_fc2.w".into(), vec![e, e], e),
            ("traj_fc2.b".into(), vec![e], e),
            ("init_fc.w".into(), vec![h, 2 * e], 2 * e),
            ("init_fc.b".into(), vec![h], 2 * e),
        ];
        for gate in ["r", "u", "n"] {
            specs.push((format!("gru.w{gate}"), vec![h, 2], h));
            specs.push((format!("gru.u{gate}"), vec![h, h], h));
            specs.push((format!("gru.b{gate}"), vec![h], h));
        }
        specs.push(("head.w".into(), vec![j3, h], h));
        specs.push(("head.b".into(), vec![j3], h));
        specs
    }
}

const META_NAME: &str = "meta.arch";

fn meta_tensor(cfg: &PoseNetConfig) -> Tensor {
    let v = vec![
        cfg.history_len as f64,
        cfg.horizon as f64,
        cfg.joints as f64,
        cfg.hidden as f64,
        cfg.enc_width as f64,
    ];
    Tensor::new(vec![5], v).unwrap()
}

fn config_from_meta(data: &[f64]) -> Result<PoseNetConfig, NnError> {
    if data.len() != 5 || data.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return Err(NnError::Format("bad architecture metadata".into()));
    }
    Ok(PoseNetConfig {
        history_len: data[0] as usize,
        horizon: data[1] as usize,
        joints: data[2] as usize,
        hidden: data[3] as usize,
        enc_width: data[4] as usize,
    })
}

/// Mean per-joint Euclidean error between two pose sequences, `(T, J, 3)`.
pub fn pose_loss(gt: &[Vec<[f64; 3]>], pred: &[Vec<[f64; 3]>]) -> Result<f64, NnError> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(NnError::InvalidArgument(format!(
            "pose sequences of {} vs {} frames",
            gt.len(),
            pred.len()
        )));
    }
    let joints = gt[0].len();
    let mut total = 0.0;
    for (a, b) in gt.iter().zip(pred) {
        if a.len() != joints || b.len() != joints || joints == 0 {
            return Err(NnError::InvalidArgument("ragged pose sequence".into()));
        }
        for (ja, jb) in a.iter().zip(b) {
            let d = [ja[0] - jb[0], ja[1] - jb[1], ja[2] - jb[2]];
            total += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        }
    }
    Ok(total / (gt.len() * joints) as f64)
}

pub struct PoseNet {
    pub config: PoseNetConfig,
    pub store: ParamStore,
}

/// Node handles of one forward pass.
pub struct PoseForward {
    /// Per-step world-frame skeletons, each `[J*3]` (x, y, z per joint).
    pub poses: Vec<TensorId>,
    /// Per-step hip-relative skeletons, each `[J*3]`; joint 0 is zero.
    pub locals: Vec<TensorId>,
}

/// One training example, in the same ground frame as the trajectory
/// forecaster: poses hip-relative, trajectory relative to the last
/// observed position.
#[derive(Debug, Clone)]
pub struct PoseSample {
    /// N observed hip-relative poses, oldest first.
    pub history: Vec<Vec<[f64; 3]>>,
    /// T future ground positions (teacher signal and lift anchor).
    pub future_traj: Vec<Vec2>,
    /// T future hip-relative poses.
    pub future_local: Vec<Vec<[f64; 3]>>,
    /// Hip height carried from the last observed frame.
    pub hip_z: f64,
}

impl PoseSample {
    /// Ground-truth world poses implied by the trajectory, local poses and
    /// carried hip height.
    pub fn global_future(&self) -> Vec<Vec<[f64; 3]>> {
        self.future_local
            .iter()
            .zip(&self.future_traj)
            .map(|(local, &p)| lift_pose(local, p, self.hip_z))
            .collect()
    }
}

struct GateParams {
    w: TensorId,
    u: TensorId,
    b: TensorId,
}

impl PoseNet {
    pub fn new(config: PoseNetConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut store = ParamStore::new();
        store.add(META_NAME, meta_tensor(&config))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, fan_in) in config.param_specs() {
            store.add_uniform(&name, shape, fan_in, &mut rng)?;
        }
        Ok(PoseNet { config, store })
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
        Ok(PoseNet { config, store })
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

    fn gate(&self, tape: &mut Tape, name: &str) -> Result<GateParams, NnError> {
        Ok(GateParams {
            w: self.param(tape, &format!("gru.w{name}"))?,
            u: self.param(tape, &format!("gru.u{name}"))?,
            b: self.param(tape, &format!("gru.b{name}"))?,
        })
    }

    /// `w x + u v + b` — one pre-activation of a gated cell.
    fn gate_pre(
        &self,
        tape: &mut Tape,
        g: &GateParams,
        x: TensorId,
        v: TensorId,
    ) -> Result<TensorId, NnError> {
        let wx = tape.linear(g.w, x, g.b)?;
        let h = tape.value(v).len();
        let vc = tape.reshape(v, vec![h, 1])?;
        let uv = tape.matmul(g.u, vc)?;
        let uv = tape.reshape(uv, vec![h])?;
        tape.add(wx, uv)
    }

    /// Two-layer relu MLP.
    fn encode(&self, tape: &mut Tape, prefix: &str, x: TensorId) -> Result<TensorId, NnError> {
        let w1 = self.param(tape, &format!("{prefix}_fc1.w"))?;
        let b1 = self.param(tape, &format!("{prefix}_fc1.b"))?;
        let w2 = self.param(tape, &format!("{prefix}_fc2.w"))?;
        let b2 = self.param(tape, &format!("{prefix}_fc2.b"))?;
        let h1 = tape.linear(w1, x, b1)?;
        let h1 = tape.relu(h1)?;
        let h2 = tape.linear(w2, h1, b2)?;
        tape.relu(h2)
    }

    /// Record the forward pass for one conditioning trajectory on `tape`.
    ///
    /// `history` holds N hip-relative frames of J joints; `traj` holds the
    /// T future ground positions; `hip_z` is the height the hip is carried
    /// at. Joint 0 of every output frame equals the trajectory point
    /// exactly.
    pub fn forward(
        &self,
        tape: &mut Tape,
        history: &[Vec<[f64; 3]>],
        traj: &[Vec2],
        hip_z: f64,
    ) -> Result<PoseForward, NnError> {
        let cfg = &self.config;
        if history.len() != cfg.history_len {
            return Err(NnError::InvalidArgument(format!(
                "expected {} history frames, got {}",
                cfg.history_len,
                history.len()
            )));
        }
        if history.iter().any(|f| f.len() != cfg.joints) {
            return Err(NnError::InvalidArgument(format!(
                "history frames must have {} joints",
                cfg.joints
            )));
        }
        if traj.len() != cfg.horizon {
            return Err(NnError::InvalidArgument(format!(
                "expected {} trajectory points, got {}",
                cfg.horizon,
                traj.len()
            )));
        }

        // Conditioning sees relative motion only; absolute position enters
        // solely through the additive lift below.
        let mut deltas = vec![Vec2::ZERO; traj.len()];
        for t in 1..traj.len() {
            deltas[t] = traj[t].sub(traj[t - 1]);
        }

        let hist_flat: Vec<f64> =
            history.iter().flatten().flat_map(|j| j.iter().copied()).collect();
        let hist_in = tape.input(Tensor::new(vec![hist_flat.len()], hist_flat)?)?;
        let delta_flat: Vec<f64> = deltas.iter().flat_map(|d| [d.x, d.y]).collect();
        let delta_in = tape.input(Tensor::new(vec![delta_flat.len()], delta_flat)?)?;

        let hist_feat = self.encode(tape, "hist", hist_in)?;
        let traj_feat = self.encode(tape, "traj", delta_in)?;
        let cat = tape.concat(&[hist_feat, traj_feat], 0)?;
        let init_w = self.param(tape, "init_fc.w")?;
        let init_b = self.param(tape, "init_fc.b")?;
        let z0 = tape.linear(init_w, cat, init_b)?;
        let mut z = tape.tanh(z0)?;

        let r = self.gate(tape, "r")?;
        let u = self.gate(tape, "u")?;
        let n = self.gate(tape, "n")?;
        let head_w = self.param(tape, "head.w")?;
        let head_b = self.param(tape, "head.b")?;

        let mut poses = Vec::with_capacity(traj.len());
        let mut locals = Vec::with_capacity(traj.len());
        for (t, d) in deltas.iter().enumerate() {
            let x = tape.input(Tensor::new(vec![2], vec![d.x, d.y])?)?;
            let reset = self.gate_pre(tape, &r, x, z)?;
            let reset = tape.sigmoid(reset)?;
            let update = self.gate_pre(tape, &u, x, z)?;
            let update = tape.sigmoid(update)?;
            let gated = tape.mul(reset, z)?;
            let cand = self.gate_pre(tape, &n, x, gated)?;
            let cand = tape.tanh(cand)?;
            let keep = tape.mul(update, z)?;
            let fresh = tape.one_minus(update)?;
            let fresh = tape.mul(fresh, cand)?;
            z = tape.add(keep, fresh)?;

            // Re-anchor on the head's own hip so joint 0 is exactly zero.
            let raw = tape.linear(head_w, z, head_b)?;
            let hip = tape.slice(raw, 0, 0, 3)?;
            let tiled = tape.concat(&vec![hip; cfg.joints], 0)?;
            let local = tape.sub(raw, tiled)?;
            locals.push(local);

            let anchor: Vec<f64> =
                std::iter::repeat([traj[t].x, traj[t].y, hip_z]).take(cfg.joints).flatten().collect();
            let anchor = tape.input(Tensor::new(vec![cfg.joints * 3], anchor)?)?;
            poses.push(tape.add(local, anchor)?);
        }
        Ok(PoseForward { poses, locals })
    }

    /// Mean per-joint Euclidean error of a forward pass against
    /// ground-truth world poses, as a loss node.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        out: &PoseForward,
        target: &[Vec<[f64; 3]>],
    ) -> Result<TensorId, NnError> {
        let cfg = &self.config;
        if target.len() != out.poses.len() || target.iter().any(|f| f.len() != cfg.joints) {
            return Err(NnError::InvalidArgument(format!(
                "target must be {} frames of {} joints",
                out.poses.len(),
                cfg.joints
            )));
        }
        let mut norms = Vec::with_capacity(out.poses.len() * cfg.joints);
        for (pose, gt) in out.poses.iter().zip(target) {
            let flat: Vec<f64> = gt.iter().flat_map(|j| j.iter().copied()).collect();
            let gt_in = tape.input(Tensor::new(vec![cfg.joints * 3], flat)?)?;
            let diff = tape.sub(*pose, gt_in)?;
            for j in 0..cfg.joints {
                let jd = tape.slice(diff, 0, j * 3, 3)?;
                norms.push(tape.l2norm(jd)?);
            }
        }
        let all = tape.concat(&norms, 0)?;
        tape.mean(all)
    }

    fn frames_of(&self, tape: &Tape, ids: &[TensorId]) -> Vec<Vec<[f64; 3]>> {
        ids.iter()
            .map(|&id| {
                tape.data(id).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
            })
            .collect()
    }

    /// Forward without recording a loss; returns world-frame skeletons.
    pub fn predict(
        &self,
        history: &[Vec<[f64; 3]>],
        traj: &[Vec2],
        hip_z: f64,
    ) -> Result<Vec<Vec<[f64; 3]>>, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, history, traj, hip_z)?;
        Ok(self.frames_of(&tape, &out.poses))
    }

    /// Like [`predict`](Self::predict) but returning hip-relative frames.
    pub fn predict_local(
        &self,
        history: &[Vec<[f64; 3]>],
        traj: &[Vec2],
        hip_z: f64,
    ) -> Result<Vec<Vec<[f64; 3]>>, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, history, traj, hip_z)?;
        Ok(self.frames_of(&tape, &out.locals))
    }

    /// Value-level training loss for one sample (teacher-forced).
    pub fn eval_loss(&self, sample: &PoseSample) -> Result<f64, NnError> {
        let pred = self.predict(&sample.history, &sample.future_traj, sample.hip_z)?;
        pose_loss(&sample.global_future(), &pred)
    }
}

// --- training ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PoseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_gamma: f64,
    pub lr_step_epochs: usize,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        PoseTrainConfig {
            epochs: 1200,
            batch_size: 16,
            lr0: 1e-5,
            lr_gamma: 0.1,
            lr_step_epochs: 600,
            seed: 0,
        }
    }
}

impl PoseNet {
    /// Minimize the pose loss with Adam and a step-decayed learning rate,
    /// conditioning on the ground-truth trajectories. Deterministic for a
    /// fixed seed and sample order.
    pub fn train(
        &mut self,
        samples: &[PoseSample],
        cfg: &PoseTrainConfig,
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
        samples: &[PoseSample],
        cfg: &PoseTrainConfig,
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
            let mut rng = crate::nn::epoch_rng(cfg.seed, epoch);
            order.shuffle(&mut rng);
            let mut epoch_total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grads.clear();
                let mut batch_total = 0.0;
                for &i in batch {
                    let sample = &samples[i];
                    let mut tape = Tape::new();
                    let out = self.forward(
                        &mut tape,
                        &sample.history,
                        &sample.future_traj,
                        sample.hip_z,
                    )?;
                    let loss = self.loss_graph(&mut tape, &out, &sample.global_future())?;
                    tape.backward(loss)?;
                    tape.accumulate_param_grads(&mut grads);
                    batch_total += tape.value(loss).item();
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
/// gradients against central differences of the pose loss.
pub fn model_gradcheck(seed: u64) -> Result<crate::nn::GradCheck, NnError> {
    use crate::nn::{numeric_gradient, GradCheck};

    let cfg = PoseNetConfig { history_len: 2, horizon: 2, joints: 4, hidden: 16, enc_width: 16 };
    let model = PoseNet::new(cfg, seed)?;
    let sample = synthetic_pose_sample(&model.config, seed);

    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id) != META_NAME).collect();
    let mut flat = Vec::new();
    for &id in &ids {
        flat.extend_from_slice(model.store.tensor(id).data());
    }

    let eval = |x: &[f64], want_grad: bool| -> Result<(f64, Option<Vec<f64>>), NnError> {
        let mut m = PoseNet::new(model.config.clone(), seed)?;
        let mut off = 0;
        for &id in &ids {
            let t = m.store.tensor_mut(id);
            let n = t.len();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        }
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &sample.history, &sample.future_traj, sample.hip_z)?;
        let loss = m.loss_graph(&mut tape, &out, &sample.global_future())?;
        let value = tape.value(loss).item();
        if !want_grad {
            return Ok((value, None));
        }
        tape.backward(loss)?;
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

/// Deterministic synthetic walking sample matching a config; limbs swing
/// sinusoidally around fixed offsets while the hip advances.
pub fn synthetic_pose_sample(cfg: &PoseNetConfig, seed: u64) -> PoseSample {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x90e5);
    let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let speed: f64 = rng.random_range(0.4..0.7);
    let rate = 15.0;
    let swing = 2.0; // gait phase advance per frame at this rate, radians/s

    let local_at = |k: i64| -> Vec<[f64; 3]> {
        let phase = phase0 + swing * k as f64 / rate;
        (0..cfg.joints)
            .map(|j| {
                if j == 0 {
                    return [0.0, 0.0, 0.0];
                }
                let a = j as f64;
                [
                    0.12 * (phase + a).sin(),
                    0.07 * (phase * 0.5 + 2.0 * a).cos(),
                    0.05 * a + 0.04 * (phase + 0.7 * a).sin(),
                ]
            })
            .collect()
    };
    let pos_at = |k: i64| -> Vec2 {
        let t = k as f64 / rate;
        Vec2::new(speed * t, 0.08 * (0.9 * t).sin())
    };

    let history: Vec<_> =
        (1 - cfg.history_len as i64..=0).map(local_at).collect();
    let future_local: Vec<_> = (1..=cfg.horizon as i64).map(local_at).collect();
    let future_traj: Vec<_> = (1..=cfg.horizon as i64).map(pos_at).collect();
    PoseSample { history, future_traj, future_local, hip_z: 0.9 }
}
