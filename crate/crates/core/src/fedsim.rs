//! In-process federated training: local mini-batch SGD per client, FedAvg
//! per round, test accuracy every round and the rounds-to-threshold effort.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::FedPath;
use crate::dataset::{ClientPartition, ImageDataset};
use crate::error::{Error, Result};
use crate::kernels::{gemm_row_major, Operand};
use crate::rng;

/// A model trainable by the simulator, viewed as one flat parameter vector.
///
/// Inputs are row-major batches of `n_inputs` values in `[0, 1]`.
pub trait Classifier: Clone + Send + Sync {
    fn n_inputs(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Class probabilities, `batch x n_classes`, row-major.
    fn predict_proba(&self, inputs: &[f64], batch: usize) -> Vec<f64>;
    /// Mean cross-entropy over the batch; the gradient overwrites `grad`.
    fn loss_and_grad(&self, inputs: &[f64], labels: &[u32], grad: &mut [f64]) -> f64;
}

/// `n_in -> hidden (ReLU) -> n_out (softmax)`.
///
/// Parameter layout: `W1` (hidden x n_in), `b1`, `W2` (n_out x hidden), `b2`,
/// matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowClassifier {
    n_in: usize,
    hidden: usize,
    n_out: usize,
    params: Vec<f64>,
}

pub fn shallow_param_count(n_in: usize, hidden: usize, n_out: usize) -> usize {
    n_in * hidden + hidden + hidden * n_out + n_out
}

/// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
pub fn init_model(n_in: usize, hidden: usize, n_out: usize, seed: u64) -> Result<ShallowClassifier> {
    if n_in == 0 || hidden == 0 || n_out == 0 {
        return Err(Error::invalid("model dimensions must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let mut params = Vec::with_capacity(shallow_param_count(n_in, hidden, n_out));
    let a = 1.0 / (n_in as f64).sqrt();
    params.extend((0..n_in * hidden).map(|_| rng.random_range(-a..a)));
    params.extend(std::iter::repeat_n(0.0, hidden));
    let a = 1.0 / (hidden as f64).sqrt();
    params.extend((0..hidden * n_out).map(|_| rng.random_range(-a..a)));
    params.extend(std::iter::repeat_n(0.0, n_out));
    Ok(ShallowClassifier {
        n_in,
        hidden,
        n_out,
        params,
    })
}

impl ShallowClassifier {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.n_in * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.n_out;
        [w1, b1, w2, b2]
    }

    /// Hidden pre-activations and output logits for a batch.
    fn forward(&self, inputs: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let [w1, b1, w2, b2] = self.offsets();
        let p = &self.params;
        let (h, c) = (self.hidden, self.n_out);
        let mut pre = Vec::with_capacity(batch * h);
        for _ in 0..batch {
            pre.extend_from_slice(&p[b1..b1 + h]);
        }
        gemm_row_major(
            &mut pre,
            Operand::row_major(inputs, batch, self.n_in),
            Operand::row_major(&p[w1..b1], h, self.n_in).t(),
            1.0,
        );
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = Vec::with_capacity(batch * c);
        for _ in 0..batch {
            logits.extend_from_slice(&p[b2..b2 + c]);
        }
        gemm_row_major(
            &mut logits,
            Operand::row_major(&act, batch, h),
            Operand::row_major(&p[w2..b2], c, h).t(),
            1.0,
        );
        (pre, logits)
    }
}

fn softmax_rows(z: &mut [f64], cols: usize) {
    for row in z.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

impl Classifier for ShallowClassifier {
    fn n_inputs(&self) -> usize {
        self.n_in
    }

    fn n_classes(&self) -> usize {
        self.n_out
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict_proba(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        let (_, mut probs) = self.forward(inputs, batch);
        softmax_rows(&mut probs, self.n_out);
        probs
    }

    fn loss_and_grad(&self, inputs: &[f64], labels: &[u32], grad: &mut [f64]) -> f64 {
        let batch = labels.len();
        let (h, c) = (self.hidden, self.n_out);
        let [_, b1, w2, b2] = self.offsets();
        let (pre, mut dz) = self.forward(inputs, batch);
        softmax_rows(&mut dz, c);
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        for (row, &y) in dz.chunks_exact_mut(c).zip(labels) {
            loss -= row[y as usize].max(f64::MIN_POSITIVE).ln();
            row[y as usize] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();

        let (g_w1, rest) = grad.split_at_mut(b1);
        let (g_b1, rest) = rest.split_at_mut(w2 - b1);
        let (g_w2, g_b2) = rest.split_at_mut(b2 - w2);
        // dW2 = dZ^T A, db2 = column sums of dZ
        gemm_row_major(
            g_w2,
            Operand::row_major(&dz, batch, c).t(),
            Operand::row_major(&act, batch, h),
            0.0,
        );
        g_b2.fill(0.0);
        for row in dz.chunks_exact(c) {
            g_b2.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        // dH = dZ W2, masked by the ReLU
        let mut dh = vec![0.0; batch * h];
        gemm_row_major(
            &mut dh,
            Operand::row_major(&dz, batch, c),
            Operand::row_major(&self.params[w2..b2], c, h),
            0.0,
        );
        dh.iter_mut().zip(&pre).for_each(|(d, &p)| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        gemm_row_major(
            g_w1,
            Operand::row_major(&dh, batch, h).t(),
            Operand::row_major(inputs, batch, self.n_in),
            0.0,
        );
        g_b1.fill(0.0);
        for row in dh.chunks_exact(h) {
            g_b1.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        loss * scale
    }
}

/// What one "local iteration" means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalUnit {
    /// One pass over the client's data.
    Epoch,
    /// One mini-batch step.
    Step,
}

impl FromStr for LocalUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(Self::Epoch),
            "step" => Ok(Self::Step),
            _ => Err(Error::invalid(format!("local unit must be `epoch` or `step`, got `{s}`"))),
        }
    }
}

impl fmt::Display for LocalUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Epoch => "epoch",
            Self::Step => "step",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_iterations: usize,
    pub local_unit: LocalUnit,
    pub rounds: usize,
    pub threshold: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            local_iterations: 1,
            local_unit: LocalUnit::Epoch,
            rounds: 100,
            threshold: 0.60,
            seed: 0,
            hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.local_iterations == 0 || self.rounds == 0 || self.hidden == 0 {
            return Err(Error::invalid(
                "batch_size, local_iterations, rounds and hidden must be positive",
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Rows `order` of `ds`, scaled to `[0, 1]`.
fn pack_inputs(ds: &ImageDataset, order: &[usize], out: &mut Vec<f64>, labels: &mut Vec<u32>) {
    out.clear();
    labels.clear();
    for &i in order {
        out.extend(ds.image(i).iter().map(|&p| p as f64 / 255.0));
        labels.push(ds.labels()[i]);
    }
}

fn sgd_step<M: Classifier>(model: &mut M, inputs: &[f64], labels: &[u32], lr: f64, grad: &mut [f64]) {
    model.loss_and_grad(inputs, labels, grad);
    for (p, g) in model.params_mut().iter_mut().zip(grad.iter()) {
        *p -= lr * *g;
    }
}

fn shuffle_stream(seed: u64, round: usize, client: usize) -> rng::DetRng {
    rng::derived(seed, &[round as u64, client as u64])
}

fn check_shapes<M: Classifier>(model: &M, ds: &ImageDataset) -> Result<()> {
    if model.n_inputs() != ds.n_features() || model.n_classes() < ds.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} inputs / {} classes, data has {} features / {} classes",
            model.n_inputs(),
            model.n_classes(),
            ds.n_features(),
            ds.n_classes()
        )));
    }
    Ok(())
}

/// Local SGD for one client in one round; returns the new parameters.
///
/// The shuffle is seeded by `(config.seed, round, client)`.
pub fn local_train<M: Classifier>(
    model: &M,
    ds: &ImageDataset,
    config: &TrainConfig,
    round: usize,
    client: usize,
) -> Result<Vec<f64>> {
    check_shapes(model, ds)?;
    let mut local = model.clone();
    let mut rng = shuffle_stream(config.seed, round, client);
    let n = ds.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; model.params().len()];
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    match config.local_unit {
        LocalUnit::Epoch => {
            for _ in 0..config.local_iterations {
                order.shuffle(&mut rng);
                for batch in order.chunks(config.batch_size) {
                    pack_inputs(ds, batch, &mut inputs, &mut labels);
                    sgd_step(&mut local, &inputs, &labels, config.learning_rate, &mut grad);
                }
            }
        }
        LocalUnit::Step => {
            let mut cursor = n;
            for _ in 0..config.local_iterations {
                if cursor >= n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let end = (cursor + config.batch_size).min(n);
                pack_inputs(ds, &order[cursor..end], &mut inputs, &mut labels);
                sgd_step(&mut local, &inputs, &labels, config.learning_rate, &mut grad);
                cursor = end;
            }
        }
    }
    Ok(local.params().to_vec())
}

/// Sample-count weighted mean of parameter vectors, accumulated in list order
/// as `p_0 + sum_k w_k (p_k - p_0)`.
pub fn fedavg_aggregate<P: AsRef<[f64]>>(param_sets: &[P], counts: &[usize]) -> Result<Vec<f64>> {
    if param_sets.is_empty() || param_sets.len() != counts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter sets but {} sample counts",
            param_sets.len(),
            counts.len()
        )));
    }
    let len = param_sets[0].as_ref().len();
    if param_sets.iter().any(|p| p.as_ref().len() != len) {
        return Err(Error::DimensionMismatch("parameter vectors differ in length".into()));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("sample counts must be positive"));
    }
    let total: usize = counts.iter().sum();
    let anchor = param_sets[0].as_ref();
    let mut out = anchor.to_vec();
    for (p, &n) in param_sets.iter().zip(counts).skip(1) {
        let w = n as f64 / total as f64;
        for ((o, &v), &a) in out.iter_mut().zip(p.as_ref()).zip(anchor) {
            *o += w * (v - a);
        }
    }
    Ok(out)
}

const EVAL_BATCH: usize = 1024;

/// Fraction of correct argmax predictions; ties go to the lowest class.
pub fn evaluate<M: Classifier>(model: &M, test: &ImageDataset) -> Result<f64> {
    check_shapes(model, test)?;
    let order: Vec<usize> = (0..test.n_samples()).collect();
    let c = model.n_classes();
    let correct: usize = order
        .par_chunks(EVAL_BATCH)
        .map(|batch| {
            let (mut inputs, mut labels) = (Vec::new(), Vec::new());
            pack_inputs(test, batch, &mut inputs, &mut labels);
            let probs = model.predict_proba(&inputs, batch.len());
            probs
                .chunks_exact(c)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y as usize)
                .count()
        })
        .sum();
    Ok(correct as f64 / test.n_samples() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-round accuracy log and its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRunResult {
    /// Test accuracy after round `r + 1`.
    pub accuracies: Vec<f64>,
    pub max_accuracy: f64,
    pub avg_accuracy: f64,
    /// First 1-based round reaching the threshold.
    pub effort: Option<usize>,
    pub config: TrainConfig,
}

impl FedRunResult {
    pub fn from_log(accuracies: Vec<f64>, config: TrainConfig) -> Self {
        let max_accuracy = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let effort = accuracies.iter().position(|&a| a >= config.threshold).map(|r| r + 1);
        Self {
            accuracies,
            max_accuracy,
            avg_accuracy,
            effort,
            config,
        }
    }

    /// `round,accuracy` with 1-based rounds.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,accuracy\n");
        for (r, a) in self.accuracies.iter().enumerate() {
            s.push_str(&format!("{},{}\n", r + 1, a));
        }
        s
    }

    /// Summary without the per-round log.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "max_accuracy": self.max_accuracy,
            "avg_accuracy": self.avg_accuracy,
            "effort": self.effort,
            "rounds": self.accuracies.len(),
            "config": self.config,
        })
    }
}

/// Run `config.rounds` rounds; round `r` trains the clients of `path.round(r)`.
pub fn run_federation(
    partition: &ClientPartition,
    path: &FedPath,
    test: &ImageDataset,
    config: &TrainConfig,
) -> Result<FedRunResult> {
    let first = partition
        .clients
        .first()
        .ok_or_else(|| Error::invalid("partition has no clients"))?;
    let model = init_model(first.n_features(), config.hidden, first.n_classes().max(test.n_classes()), config.seed)?;
    run_federation_with(model, &partition.clients, path, test, config)
}

/// [`run_federation`] with a caller-supplied initial model.
pub fn run_federation_with<M: Classifier>(
    init: M,
    clients: &[ImageDataset],
    path: &FedPath,
    test: &ImageDataset,
    config: &TrainConfig,
) -> Result<FedRunResult> {
    config.validate()?;
    if path.max_client() >= clients.len() {
        return Err(Error::invalid(format!(
            "path uses client {} but the partition has {} clients",
            path.max_client(),
            clients.len()
        )));
    }
    let mut global = init;
    let mut log = Vec::with_capacity(config.rounds);
    for r in 0..config.rounds {
        let members = path.round(r);
        if members.is_empty() {
            return Err(Error::invalid(format!("round {r} has no participants")));
        }
        let updates = members
            .par_iter()
            .map(|&c| local_train(&global, &clients[c], config, r, c))
            .collect::<Result<Vec<_>>>()?;
        let counts: Vec<usize> = members.iter().map(|&c| clients[c].n_samples()).collect();
        let params = fedavg_aggregate(&updates, &counts)?;
        global.params_mut().copy_from_slice(&params);
        log.push(evaluate(&global, test)?);
    }
    Ok(FedRunResult::from_log(log, config.clone()))
}

/// Plain SGD on one dataset with the same per-round shuffles as client 0 of
/// a federation; the reference for the single-client equivalence check.
pub fn train_centralized<M: Classifier>(
    init: M,
    train: &ImageDataset,
    test: &ImageDataset,
    config: &TrainConfig,
) -> Result<FedRunResult> {
    config.validate()?;
    check_shapes(&init, train)?;
    if config.local_unit != LocalUnit::Epoch {
        return Err(Error::invalid("centralized reference trains whole epochs"));
    }
    let mut model = init;
    let mut grad = vec![0.0; model.params().len()];
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    let mut log = Vec::with_capacity(config.rounds);
    for r in 0..config.rounds {
        let mut rng = shuffle_stream(config.seed, r, 0);
        let mut order: Vec<usize> = (0..train.n_samples()).collect();
        for _ in 0..config.local_iterations {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                pack_inputs(train, batch, &mut inputs, &mut labels);
                sgd_step(&mut model, &inputs, &labels, config.learning_rate, &mut grad);
            }
        }
        log.push(evaluate(&model, test)?);
    }
    Ok(FedRunResult::from_log(log, config.clone()))
}
