//! Per-fold training, confusion matrices and cross-validation reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::VehicleClass;
use crate::dataset::{balanced_batches, derive_seed, stratified_fold_split, Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::network::{batch_gradients, build_network, Mode, Network, Preset, Sgd, TrainConfig};
use crate::spectrogram::{compute_mean_tensor, export_pgm, mean_normalize, RdTensor};

const N: usize = VehicleClass::COUNT;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: VehicleClass, predicted: VehicleClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    /// Fraction of correct predictions; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            log::warn!("accuracy of an empty confusion matrix reported as 0");
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let sum: u64 = counts.iter().sum();
            if sum > 0 {
                for (r, &c) in row.iter_mut().zip(counts) {
                    *r = c as f64 / sum as f64;
                }
            }
        }
        out
    }

    /// Recall of one class, `None` if it never occurs.
    pub fn class_accuracy(&self, class: VehicleClass) -> Option<f64> {
        let row = &self.counts[class.index()];
        let sum: u64 = row.iter().sum();
        (sum > 0).then(|| row[class.index()] as f64 / sum as f64)
    }
}

pub fn confusion_matrix(predicted: &[VehicleClass], truth: &[VehicleClass]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        m.record(t, p);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

/// Epoch (1-based) with the highest validation accuracy; the earliest wins ties.
pub fn best_epoch(val_accuracies: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &acc) in val_accuracies.iter().enumerate() {
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i + 1, acc));
        }
    }
    best.map(|(e, _)| e)
}

/// Batches of one training epoch for a fold.
pub fn fold_batches(
    fold: &FoldSplit,
    labels: &BTreeMap<usize, VehicleClass>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<[usize; N]>> {
    let seed = derive_seed(derive_seed(cfg.seed, fold.fold_index as u64), epoch as u64);
    balanced_batches(&fold.train_by_class(labels), seed)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    /// Snapshot with the best validation accuracy.
    pub net: Network<f32>,
    /// Mean tensor of the fold's training set.
    pub mean: RdTensor,
    pub history: Vec<EpochRecord>,
    /// Epoch of the snapshot, `None` if no training happened.
    pub best_epoch: Option<usize>,
}

fn labels_of(samples: &[RdTensor]) -> Result<BTreeMap<usize, VehicleClass>> {
    samples
        .iter()
        .enumerate()
        .map(|(id, t)| {
            t.label
                .map(|c| (id, c))
                .ok_or_else(|| Error::Domain(format!("sample {id} has no label")))
        })
        .collect()
}

fn normalized(samples: &[RdTensor], ids: &[usize], mean: &RdTensor) -> Result<BTreeMap<usize, RdTensor>> {
    ids.par_iter()
        .map(|&id| {
            let t = samples.get(id).ok_or_else(|| Error::Domain(format!("no sample {id}")))?;
            Ok((id, mean_normalize(t, mean)?))
        })
        .collect()
}

/// Predictions of `net` over the given normalized tensors.
pub fn evaluate<'a, I>(net: &Network<f32>, tensors: I) -> Result<ConfusionMatrix>
where
    I: IntoIterator<Item = &'a RdTensor>,
{
    let tensors: Vec<&RdTensor> = tensors.into_iter().collect();
    let preds: Vec<(VehicleClass, VehicleClass)> = tensors
        .par_iter()
        .map(|t| {
            let truth = t.label.ok_or_else(|| Error::Domain("unlabelled tensor".into()))?;
            Ok((truth, net.predict(t)?.0))
        })
        .collect::<Result<_>>()?;
    let mut m = ConfusionMatrix::default();
    for (truth, pred) in preds {
        m.record(truth, pred);
    }
    Ok(m)
}

/// Trains one fold and keeps the snapshot with the best validation accuracy.
///
/// `samples` is indexed by sample id and every tensor must carry its label.
/// The mean tensor comes from the fold's training ids only.
pub fn train_fold(
    fold: &FoldSplit,
    samples: &[RdTensor],
    preset: Preset,
    net_seed: u64,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    let shape = samples.first().ok_or(Error::Empty("samples"))?.shape();
    let net = build_network(preset, shape, N, net_seed)?;
    train_fold_from(fold, samples, net, net_seed, cfg)
}

/// [`train_fold`] starting from given parameters, e.g. imported weights.
/// `step_seed` drives the dropout masks.
pub fn train_fold_from(
    fold: &FoldSplit,
    samples: &[RdTensor],
    mut net: Network<f32>,
    step_seed: u64,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let labels = labels_of(samples)?;
    let mean = compute_mean_tensor(fold.train.iter().map(|&id| &samples[id]))?;
    let train = normalized(samples, &fold.train, &mean)?;
    let val = normalized(samples, &fold.val, &mean)?;

    net.set_dropout_rate(cfg.dropout_rate)?;
    let mut sgd = Sgd::new(&net, cfg.clone())?;
    let mut best: Option<(f64, Network<f32>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_ep = None;

    for epoch in 1..=cfg.epochs {
        let batches = fold_batches(fold, &labels, cfg, epoch)?;
        let mut loss_sum = 0.0;
        for (b, ids) in batches.iter().enumerate() {
            let batch: Vec<(&RdTensor, usize)> = ids.iter().map(|id| (&train[id], labels[id].index())).collect();
            let batch_seed = derive_seed(derive_seed(step_seed, epoch as u64), b as u64);
            let context = |e: Error| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} in fold {} epoch {epoch} batch {b}", fold.fold_index))
                }
                other => other,
            };
            let (loss, grads) = batch_gradients(&net, &batch, Mode::Train, batch_seed).map_err(context)?;
            sgd.step(&mut net, &grads).map_err(context)?;
            loss_sum += loss;
        }
        let mean_loss = if batches.is_empty() { 0.0 } else { loss_sum / batches.len() as f64 };
        let val_accuracy = if val.is_empty() { 0.0 } else { evaluate(&net, val.values())?.accuracy() };
        log::info!(
            "fold {} epoch {epoch}: loss {mean_loss:.4}, validation accuracy {val_accuracy:.4}",
            fold.fold_index
        );
        history.push(EpochRecord {
            epoch,
            mean_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, net.clone()));
            best_ep = Some(epoch);
        }
    }
    Ok(FoldOutcome {
        net: best.map_or(net, |(_, n)| n),
        mean,
        history,
        best_epoch: best_ep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub preset: Preset,
    pub train: TrainConfig,
    /// Seed of the fold draw.
    pub split_seed: u64,
    /// Seed of the network initialization; fold `i` uses `derive_seed(net_seed, i)`.
    pub net_seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            train_per_class: 40,
            val_per_class: 10,
            preset: Preset::Mini,
            train: TrainConfig::default(),
            split_seed: 0,
            net_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: Option<usize>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochRecord>,
}

/// Cross-validation report; serialized as JSON by [`CvReport::to_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub options: CvOptions,
    pub classes: Vec<VehicleClass>,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    /// Mean over folds of the row-normalized confusion matrices.
    pub mean_confusion: [[f64; N]; N],
    /// Row of class G in `mean_confusion`.
    pub class_g_row: [f64; N],
}

impl CvReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Averaged confusion matrix as a grey-scale image, one pixel per cell,
    /// true classes top to bottom.
    pub fn confusion_pgm(&self) -> Vec<u8> {
        // export_pgm draws row 0 at the bottom, so feed rows reversed.
        let values: Vec<f64> = self.mean_confusion.iter().rev().flatten().copied().collect();
        export_pgm(&values, N, N, false)
    }
}

/// Runs `k` independent fold draws; folds train in parallel and are
/// aggregated in fold order.
pub fn cross_validate(samples: &[RdTensor], opts: &CvOptions) -> Result<CvReport> {
    let labels: Vec<(usize, VehicleClass)> = labels_of(samples)?.into_iter().collect();
    let splits = stratified_fold_split(
        &labels,
        opts.folds,
        opts.train_per_class,
        opts.val_per_class,
        opts.split_seed,
    )?;
    let folds: Vec<FoldReport> = splits
        .par_iter()
        .map(|fold| {
            let seed = derive_seed(opts.net_seed, fold.fold_index as u64);
            let outcome = train_fold(fold, samples, opts.preset, seed, &opts.train)?;
            let test = normalized(samples, &fold.test, &outcome.mean)?;
            let confusion = evaluate(&outcome.net, test.values())?;
            assert_eq!(confusion.total() as usize, fold.test.len());
            Ok(FoldReport {
                fold: fold.fold_index,
                best_epoch: outcome.best_epoch,
                accuracy: confusion.accuracy(),
                confusion,
                history: outcome.history,
            })
        })
        .collect::<Result<_>>()?;
    if folds.is_empty() {
        return Err(Error::Empty("folds"));
    }
    let k = folds.len() as f64;
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / k;
    let mut mean_confusion = [[0.0; N]; N];
    for f in &folds {
        for (acc, row) in mean_confusion.iter_mut().zip(f.confusion.row_normalized()) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v / k;
            }
        }
    }
    Ok(CvReport {
        options: opts.clone(),
        classes: VehicleClass::ALL.to_vec(),
        folds,
        mean_accuracy,
        class_g_row: mean_confusion[VehicleClass::G.index()],
        mean_confusion,
    })
}

/// Loads every tensor of a dataset and cross-validates it.
pub fn cross_validate_dataset(ds: &Dataset, opts: &CvOptions) -> Result<CvReport> {
    cross_validate(&ds.load_all()?, opts)
}
