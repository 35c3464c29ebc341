//! Gap learning (the hybrid twin) and the autoregressive increment baseline.
//!
//! The hybrid twin maps a linear FEM frame to the per-node gap
//! `T_GT - T_FEM` and adds it back; every frame is corrected independently.
//! The baseline learns `(T(t + dt) - T(t)) / dt` from ground-truth frames and
//! is rolled out by feeding each prediction back as the next input.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::split_frames;
use crate::error::{Error, Result};
use crate::fem::{SimulationSeries, AMBIENT_TEMPERATURE};
use crate::gnn::{
    build_edge_features, build_node_features, init_model, EdgeIndex, GnnModel, GraphBatch,
    GraphSample, DEFAULT_HIDDEN_DIM, DEFAULT_MESSAGE_PASSING_STEPS, EDGE_FEATURES, NODE_FEATURES,
};
use crate::mesh::{mesh_to_edges, Mesh, NodeGroup};
use crate::nncore::{clip_gradients, AdamState, Checkpoint, MinMaxScaler, Tape, Tensor2D};

/// Frames per forward pass during inference.
const INFERENCE_BATCH: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gap learner on linear FEM frames.
    Hybrid,
    /// Increment learner on ground-truth frames.
    Mgn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Mgn => "mgn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub hidden_dim: usize,
    pub message_passing_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last step by exponential decay; `None`
    /// keeps the rate constant.
    pub final_learning_rate: Option<f64>,
    pub clip_norm: f64,
    /// Seeds initialization, sample order and noise.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_dim: DEFAULT_HIDDEN_DIM,
            message_passing_steps: DEFAULT_MESSAGE_PASSING_STEPS,
            epochs: 200,
            batch_size: 13,
            learning_rate: 1e-3,
            final_learning_rate: None,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Desk-scale settings: a narrow network, single-frame batches and an
    /// exponentially decaying rate, sized for one CPU core.
    pub fn desk() -> Self {
        Hyperparams {
            hidden_dim: 16,
            epochs: 300,
            batch_size: 1,
            learning_rate: 3e-3,
            final_learning_rate: Some(1e-5),
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.message_passing_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "hidden_dim, message_passing_steps and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0)
            || !(self.clip_norm > 0.0)
            || self.final_learning_rate.is_some_and(|r| !(r > 0.0))
        {
            return Err(Error::Config(
                "learning rates and clip_norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training-frame selection; design `d` uses seed `seed + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSplit {
    pub fraction: f64,
    pub seed: u64,
}

/// Linear and ground-truth series of one design on its mesh.
#[derive(Debug, Clone, Copy)]
pub struct PairedDesign<'a> {
    pub mesh: &'a Mesh,
    pub linear: &'a SimulationSeries,
    pub nonlinear: &'a SimulationSeries,
}

/// Input temperatures, edge geometry and targets share one scaler each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub temperature: MinMaxScaler,
    pub edge: MinMaxScaler,
    pub target: MinMaxScaler,
}

impl Scalers {
    pub fn to_map(&self) -> BTreeMap<String, MinMaxScaler> {
        BTreeMap::from([
            ("temperature".to_string(), self.temperature.clone()),
            ("edge".to_string(), self.edge.clone()),
            ("target".to_string(), self.target.clone()),
        ])
    }

    pub fn from_map(map: &BTreeMap<String, MinMaxScaler>) -> Result<Self> {
        let get = |name: &str, channels: usize| {
            let s = map
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks the {name} scaler")))?;
            if s.channels() != channels || s.max.len() != channels {
                return Err(Error::Format(format!(
                    "{name} scaler has {} channels, expected {channels}",
                    s.channels()
                )));
            }
            Ok(s.clone())
        };
        Ok(Scalers {
            temperature: get("temperature", 1)?,
            edge: get("edge", EDGE_FEATURES)?,
            target: get("target", 1)?,
        })
    }
}

/// A trained network together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub model: GnnModel,
    pub scalers: Scalers,
}

impl TrainedModel {
    pub fn to_checkpoint(&self, mut metadata: BTreeMap<String, String>) -> Checkpoint {
        metadata.insert("kind".into(), self.kind.as_str().into());
        self.model.to_checkpoint(self.scalers.to_map(), metadata)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let kind = match c.metadata.get("kind").map(String::as_str) {
            Some("hybrid") => ModelKind::Hybrid,
            Some("mgn") => ModelKind::Mgn,
            other => {
                return Err(Error::Format(format!(
                    "checkpoint model kind {other:?} is not hybrid or mgn"
                )))
            }
        };
        Ok(TrainedModel {
            kind,
            model: GnnModel::from_checkpoint(c)?,
            scalers: Scalers::from_map(&c.scalers)?,
        })
    }

    pub fn save(&self, path: &Path, metadata: BTreeMap<String, String>) -> Result<()> {
        self.to_checkpoint(metadata).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Usage(format!(
                "operation needs a {} model, got {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// Denormalized network outputs for each frame on `mesh`.
    pub fn infer(&self, mesh: &Mesh, frames: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let graph = MeshGraph::new(mesh, &self.scalers.edge);
        let chunks: Vec<Vec<Vec<f64>>> = frames
            .par_chunks(INFERENCE_BATCH)
            .map(|chunk| {
                let samples = chunk
                    .iter()
                    .map(|f| graph.sample(f, &self.scalers.temperature, None))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&GraphSample> = samples.iter().collect();
                let batch = GraphBatch::from_samples(&refs)?;
                let y = self.model.forward(&batch)?;
                Ok((0..batch.n_graphs())
                    .map(|g| {
                        batch
                            .split(&y, g)
                            .iter()
                            .map(|&v| self.scalers.target.invert_value(0, v))
                            .collect()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean normalized-space MSE over the epoch's training samples.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    pub split: FrameSplit,
    pub noise_std: f64,
    pub n_designs: usize,
    pub n_train_samples: usize,
    pub n_parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_seconds: f64,
    /// Filled in by evaluation.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &TrainReport) -> bool {
        TrainReport {
            wall_clock_seconds: 0.0,
            ..self.clone()
        } == TrainReport {
            wall_clock_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Mesh connectivity with normalized edge features, reused for every frame.
struct MeshGraph {
    groups: Vec<NodeGroup>,
    edges: EdgeIndex,
    edge_features: Tensor2D,
}

impl MeshGraph {
    fn new(mesh: &Mesh, edge_scaler: &MinMaxScaler) -> Self {
        let list = mesh_to_edges(mesh);
        let mut edge_features = build_edge_features(mesh, &list);
        edge_features.data = edge_scaler.apply(&edge_features.data);
        MeshGraph {
            groups: mesh.groups.clone(),
            edges: EdgeIndex::from_edge_list(&list),
            edge_features,
        }
    }

    fn sample(
        &self,
        temperatures: &[f64],
        scaler: &MinMaxScaler,
        targets: Option<Vec<f64>>,
    ) -> Result<GraphSample> {
        GraphSample::new(
            build_node_features(temperatures, &self.groups, scaler)?,
            self.edge_features.clone(),
            self.edges.clone(),
            targets,
        )
    }
}

fn check_pair(linear: &SimulationSeries, nonlinear: &SimulationSeries) -> Result<()> {
    if linear.mesh_id != nonlinear.mesh_id
        || linear.n_frames() != nonlinear.n_frames()
        || linear.n_nodes() != nonlinear.n_nodes()
        || linear.dt != nonlinear.dt
    {
        return Err(Error::Data(format!(
            "series do not pair: mesh {:?}/{:?}, {}/{} frames, {}/{} nodes, dt {}/{}",
            linear.mesh_id,
            nonlinear.mesh_id,
            linear.n_frames(),
            nonlinear.n_frames(),
            linear.n_nodes(),
            nonlinear.n_nodes(),
            linear.dt,
            nonlinear.dt
        )));
    }
    if linear
        .frames
        .iter()
        .chain(&nonlinear.frames)
        .any(|f| f.len() != linear.n_nodes())
    {
        return Err(Error::Data("ragged frames".into()));
    }
    Ok(())
}

/// Per-frame `T_GT - T_FEM`.
pub fn make_gap_targets(
    linear: &SimulationSeries,
    nonlinear: &SimulationSeries,
) -> Result<Vec<Vec<f64>>> {
    check_pair(linear, nonlinear)?;
    let gaps: Vec<Vec<f64>> = linear
        .frames
        .iter()
        .zip(&nonlinear.frames)
        .map(|(l, n)| n.iter().zip(l).map(|(a, b)| a - b).collect())
        .collect();
    if gaps.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite gap".into()));
    }
    Ok(gaps)
}

/// Per-frame `(T(t + dt) - T(t)) / dt` for frames `0..n - 1`.
pub fn make_increment_targets(series: &SimulationSeries) -> Result<Vec<Vec<f64>>> {
    if series.n_frames() < 2 {
        return Err(Error::Data(format!(
            "{} frame(s); increments need at least 2",
            series.n_frames()
        )));
    }
    if !(series.dt > 0.0) {
        return Err(Error::Data(format!(
            "time step {} is not positive",
            series.dt
        )));
    }
    series
        .frames
        .windows(2)
        .map(|w| {
            if w[0].len() != w[1].len() {
                return Err(Error::Data("ragged frames".into()));
            }
            let inc: Vec<f64> = w[1]
                .iter()
                .zip(&w[0])
                .map(|(b, a)| (b - a) / series.dt)
                .collect();
            if inc.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite increment".into()));
            }
            Ok(inc)
        })
        .collect()
}

struct RawSample<'a> {
    design: usize,
    inputs: &'a [f64],
    targets: Vec<f64>,
}

/// Training frame indices of design `design` among `n_candidates` frames.
/// Each design draws with seed `split.seed + design`.
pub fn training_frames(
    n_candidates: usize,
    split: &FrameSplit,
    design: usize,
) -> Result<Vec<usize>> {
    Ok(split_frames(
        n_candidates,
        split.fraction,
        split.seed.wrapping_add(design as u64),
    )?
    .0)
}

/// Trains the gap learner on linear frames with `T_GT - T_FEM` targets.
pub fn train_hybrid(
    designs: &[PairedDesign],
    split: &FrameSplit,
    hp: &Hyperparams,
    noise_std: f64,
) -> Result<(TrainedModel, TrainReport)> {
    let mut raw = Vec::new();
    let mut meshes = Vec::new();
    for (d, design) in designs.iter().enumerate() {
        check_mesh(design.mesh, design.linear)?;
        let mut gaps = make_gap_targets(design.linear, design.nonlinear)?;
        for f in training_frames(design.linear.n_frames(), split, d)? {
            raw.push(RawSample {
                design: d,
                inputs: &design.linear.frames[f],
                targets: std::mem::take(&mut gaps[f]),
            });
        }
        meshes.push(design.mesh);
    }
    train(ModelKind::Hybrid, &meshes, raw, split, hp, noise_std)
}

/// Trains the increment baseline on ground-truth frames.
pub fn train_mgn(
    designs: &[(&Mesh, &SimulationSeries)],
    split: &FrameSplit,
    hp: &Hyperparams,
    noise_std: f64,
) -> Result<(TrainedModel, TrainReport)> {
    let mut raw = Vec::new();
    let mut meshes = Vec::new();
    for (d, &(mesh, series)) in designs.iter().enumerate() {
        check_mesh(mesh, series)?;
        let mut inc = make_increment_targets(series)?;
        for f in training_frames(inc.len(), split, d)? {
            raw.push(RawSample {
                design: d,
                inputs: &series.frames[f],
                targets: std::mem::take(&mut inc[f]),
            });
        }
        meshes.push(mesh);
    }
    train(ModelKind::Mgn, &meshes, raw, split, hp, noise_std)
}

fn check_mesh(mesh: &Mesh, series: &SimulationSeries) -> Result<()> {
    if series.n_nodes() != mesh.n_nodes() || mesh.groups.len() != mesh.n_nodes() {
        return Err(Error::Data(format!(
            "series has {} nodes, mesh has {} nodes and {} labels",
            series.n_nodes(),
            mesh.n_nodes(),
            mesh.groups.len()
        )));
    }
    Ok(())
}

fn train(
    kind: ModelKind,
    meshes: &[&Mesh],
    raw: Vec<RawSample>,
    split: &FrameSplit,
    hp: &Hyperparams,
    noise_std: f64,
) -> Result<(TrainedModel, TrainReport)> {
    let start = Instant::now();
    hp.validate()?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!(
            "noise_std must be finite and non-negative, got {noise_std}"
        )));
    }
    if raw.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }

    // scalers see training frames only
    let mut used = vec![false; meshes.len()];
    raw.iter().for_each(|s| used[s.design] = true);
    let edge_data: Vec<f64> = meshes
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .flat_map(|(m, _)| build_edge_features(m, &mesh_to_edges(m)).data)
        .collect();
    let inputs: Vec<f64> = raw.iter().flat_map(|s| s.inputs.iter().copied()).collect();
    let targets: Vec<f64> = raw.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let scalers = Scalers {
        temperature: MinMaxScaler::fit(&inputs, 1)?,
        edge: MinMaxScaler::fit(&edge_data, EDGE_FEATURES)?,
        target: MinMaxScaler::fit(&targets, 1)?,
    };
    drop((inputs, targets, edge_data));

    let graphs: Vec<MeshGraph> = meshes
        .iter()
        .map(|m| MeshGraph::new(m, &scalers.edge))
        .collect();
    let samples: Vec<RawSample> = raw
        .into_iter()
        .map(|s| RawSample {
            targets: scalers.target.apply(&s.targets),
            ..s
        })
        .collect();

    let mut model = init_model(
        hp.seed,
        hp.hidden_dim,
        hp.message_passing_steps,
        NODE_FEATURES,
        EDGE_FEATURES,
        1,
    )?;
    let mut adam = AdamState::new(&model.params(), hp.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(hp.seed);
    order_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(hp.seed);
    noise_rng.set_stream(2);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(hp.epochs);
    let total_steps = hp.epochs * samples.len().div_ceil(hp.batch_size);
    let decay = match hp.final_learning_rate {
        Some(last) if total_steps > 1 => {
            (last / hp.learning_rate).powf(1.0 / (total_steps - 1) as f64)
        }
        _ => 1.0,
    };
    for epoch in 0..hp.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let built = chunk
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    let g = &graphs[s.design];
                    if noise_std > 0.0 {
                        let noisy: Vec<f64> = s
                            .inputs
                            .iter()
                            .map(|t| t + noise.sample(&mut noise_rng))
                            .collect();
                        g.sample(&noisy, &scalers.temperature, Some(s.targets.clone()))
                    } else {
                        g.sample(s.inputs, &scalers.temperature, Some(s.targets.clone()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GraphSample> = built.iter().collect();
            let batch = GraphBatch::from_samples(&refs)?;
            adam.lr = hp.learning_rate * decay.powi(adam.step as i32);
            let loss = step(&mut model, &mut adam, &batch, hp.clip_norm)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}"
                )));
            }
            total += loss * chunk.len() as f64;
        }
        epochs.push(EpochRecord {
            epoch,
            loss: total / samples.len() as f64,
        });
    }

    let report = TrainReport {
        kind,
        hyperparams: hp.clone(),
        split: *split,
        noise_std,
        n_designs: meshes.len(),
        n_train_samples: samples.len(),
        n_parameters: model.n_parameters(),
        epochs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        metrics: BTreeMap::new(),
    };
    Ok((
        TrainedModel {
            kind,
            model,
            scalers,
        },
        report,
    ))
}

/// One clipped Adam update on the batch MSE; returns the loss before the
/// update.
fn step(
    model: &mut GnnModel,
    adam: &mut AdamState,
    batch: &GraphBatch,
    clip_norm: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let y = bound.forward(&mut tape, batch)?;
    let target = batch
        .targets
        .clone()
        .ok_or_else(|| Error::Usage("training batch without targets".into()))?;
    let target = tape.constant(target);
    let loss = tape.mse(y, target)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data[0];
    let mut params = model.params_mut();
    for (p, v) in params.iter_mut().zip(bound.vars()) {
        p.grad = tape.grad(v).map(<[f64]>::to_vec);
    }
    clip_gradients(&mut params, clip_norm)?;
    adam.step(&mut params)?;
    params.iter_mut().for_each(|p| p.grad = None);
    Ok(value)
}

fn check_frame(mesh: &Mesh, frame: &[f64]) -> Result<()> {
    if frame.len() != mesh.n_nodes() {
        return Err(Error::Data(format!(
            "frame has {} values for {} nodes",
            frame.len(),
            mesh.n_nodes()
        )));
    }
    Ok(())
}

/// `T_FEM + gap` for one linear frame.
pub fn predict_corrected(
    trained: &TrainedModel,
    mesh: &Mesh,
    linear_frame: &[f64],
) -> Result<Vec<f64>> {
    Ok(predict_corrected_frames(trained, mesh, &[linear_frame])?.remove(0))
}

/// Corrects each frame independently; frames are batched for speed only.
pub fn predict_corrected_frames(
    trained: &TrainedModel,
    mesh: &Mesh,
    frames: &[&[f64]],
) -> Result<Vec<Vec<f64>>> {
    trained.expect_kind(ModelKind::Hybrid)?;
    for f in frames {
        check_frame(mesh, f)?;
    }
    let gaps = trained.infer(mesh, frames)?;
    Ok(frames
        .iter()
        .zip(gaps)
        .map(|(f, g)| f.iter().zip(g).map(|(t, d)| t + d).collect())
        .collect())
}

/// Corrected copy of a whole linear series.
pub fn correct_series(
    trained: &TrainedModel,
    mesh: &Mesh,
    linear: &SimulationSeries,
) -> Result<SimulationSeries> {
    let frames: Vec<&[f64]> = linear.frames.iter().map(Vec::as_slice).collect();
    Ok(SimulationSeries {
        frames: predict_corrected_frames(trained, mesh, &frames)?,
        ..linear.clone()
    })
}

/// Autoregressive rollout `T <- T + dt * increment`, re-pinning Dirichlet
/// nodes after every step. Returns `n_steps + 1` frames.
pub fn rollout_mgn(
    trained: &TrainedModel,
    mesh: &Mesh,
    initial: &[f64],
    n_steps: usize,
    dt: f64,
) -> Result<SimulationSeries> {
    trained.expect_kind(ModelKind::Mgn)?;
    check_frame(mesh, initial)?;
    if n_steps == 0 {
        return Err(Error::Parameter("rollout needs at least one step".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let pinned = mesh.nodes_in_group(NodeGroup::DirichletBC);
    let mut frames = Vec::with_capacity(n_steps + 1);
    frames.push(initial.to_vec());
    for step in 1..=n_steps {
        let current = frames.last().unwrap();
        let inc = trained.infer(mesh, &[current.as_slice()])?.remove(0);
        let mut next: Vec<f64> = current.iter().zip(&inc).map(|(t, y)| t + dt * y).collect();
        for &i in &pinned {
            next[i] = AMBIENT_TEMPERATURE;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Rollout { step });
        }
        frames.push(next);
    }
    Ok(SimulationSeries {
        mesh_id: "rollout".into(),
        frames,
        dt,
        t_init: initial.first().copied().unwrap_or(AMBIENT_TEMPERATURE),
        t_dirichlet: AMBIENT_TEMPERATURE,
        material: Default::default(),
    })
}

#[cfg(test)]
mod tests;
