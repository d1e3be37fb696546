use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::save_checkpoint;
use super::config::{sub_seed, RunConfig};
use super::data::{load_dataset, prepare, Dataset, Prepared};
use super::eqgap::model_label;
use super::eval::accuracy;
use super::ReportHeader;
use crate::autodiff::Adam;
use crate::error::HarnessError;
use crate::layers::{Mode, Model, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Percent, measured in evaluation mode after the epoch.
    pub train_accuracy: f64,
    /// Largest gradient norm seen in the epoch, before clipping.
    pub max_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub model: String,
    pub classes: usize,
    pub parameters: usize,
    pub initial_train_accuracy: f64,
    pub final_train_accuracy: f64,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<String>,
}

pub struct TrainedModel {
    pub model: Model,
    pub store: ParamStore,
    pub dataset: Dataset,
    pub report: TrainReport,
}

pub(crate) fn prepare_all(cfg: &RunConfig, samples: &[super::data::Sample]) -> Result<Vec<(Prepared, Vec<usize>)>, HarnessError> {
    samples
        .iter()
        .map(|s| Ok((prepare(s.mesh.clone(), cfg.model.features, &cfg.model.reltan)?, s.labels.targets())))
        .collect()
}

pub(crate) fn check_classes(cfg: &RunConfig, ds: &Dataset) -> Result<(), HarnessError> {
    if cfg.model.targets != ds.classes {
        return Err(HarnessError::Config(format!(
            "model.targets = {} but the dataset has {} classes",
            cfg.model.targets, ds.classes
        )));
    }
    Ok(())
}

fn train_accuracy(model: &Model, store: &ParamStore, set: &[(Prepared, Vec<usize>)]) -> Result<f64, HarnessError> {
    let (mut hit, mut total) = (0, 0);
    for (p, t) in set {
        let l = model.predict(store, &p.graph, &p.features)?;
        let (h, n) = accuracy(&l, t);
        hit += h;
        total += n;
    }
    Ok(100.0 * hit as f64 / total.max(1) as f64)
}

/// Adam on the NLL with gradients averaged over batches of meshes, meshes
/// shuffled every epoch.
pub fn train_model(cfg: &RunConfig) -> Result<TrainedModel, HarnessError> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.data, cfg.model.task, cfg.seed)?;
    if dataset.train.is_empty() {
        return Err(HarnessError::Dataset("training set is empty".into()));
    }
    check_classes(cfg, &dataset)?;
    let set = prepare_all(cfg, &dataset.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init", 0));
    let (model, mut store) = Model::new(&cfg.model, &mut rng)?;
    let mut adam = Adam::new(store.len(), cfg.train.learning_rate);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "shuffle", 0));
    let initial = train_accuracy(&model, &store, &set)?;
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut max_norm: f64 = 0.0;
        let batch = cfg.train.batch_size.unwrap_or(set.len()).min(set.len());
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut grad = vec![0.0; store.len()];
            for (k, &i) in chunk.iter().enumerate() {
                let (p, t) = &set[i];
                let mode = Mode::Train {
                    seed: sub_seed(cfg.seed, "dropout", (epoch * set.len() + b * batch + k) as u64),
                };
                let (loss, g) = model.loss_and_gradient(&store, &p.graph, &p.features, t, mode)?;
                if !loss.is_finite() || g.iter().any(|g| !g.is_finite()) {
                    return Err(HarnessError::Diverged { epoch, loss });
                }
                total += loss;
                let w = 1.0 / chunk.len() as f64;
                grad.iter_mut().zip(&g).for_each(|(a, g)| *a += w * g);
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            max_norm = max_norm.max(norm);
            if let Some(c) = cfg.train.clip_norm {
                if norm > c {
                    grad.iter_mut().for_each(|g| *g *= c / norm);
                }
            }
            adam.step(store.data_mut(), &grad);
        }
        let acc = train_accuracy(&model, &store, &set)?;
        let mean_loss = total / set.len() as f64;
        log::info!("epoch {epoch}: loss {mean_loss:.4} train accuracy {acc:.2}% max gradient norm {max_norm:.3e}");
        epochs.push(EpochLog {
            epoch,
            mean_loss,
            train_accuracy: acc,
            max_gradient_norm: max_norm,
        });
    }
    let final_train_accuracy = epochs.last().map_or(initial, |e| e.train_accuracy);
    let report = TrainReport {
        header: ReportHeader::new("train", cfg),
        model: model_label(cfg),
        classes: dataset.classes,
        parameters: store.len(),
        initial_train_accuracy: initial,
        final_train_accuracy,
        epochs,
        checkpoint: None,
    };
    Ok(TrainedModel {
        model,
        store,
        dataset,
        report,
    })
}

/// Trains and writes the checkpoint named in the config, if any.
pub fn train(cfg: &RunConfig) -> Result<TrainedModel, HarnessError> {
    let mut t = train_model(cfg)?;
    if let Some(path) = &cfg.train.checkpoint {
        save_checkpoint(path, &cfg.model, &t.store, cfg.seed)?;
        t.report.checkpoint = Some(path.display().to_string());
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvKind;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.model.conv = ConvKind::Gem;
        c.model.hidden_type = "2x(rho0+rho1)".parse().unwrap();
        c.model.exit_type = "4xrho0".parse().unwrap();
        c.model.residual_blocks = 1;
        c.model.dense_width = 16;
        c.data.subdivisions = 0;
        c.data.train_meshes = 2;
        c.model.targets = 12;
        c.train.epochs = 3;
        c
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut c = tiny();
        c.train.learning_rate = 0.0;
        let t = train_model(&c).unwrap();
        for e in &t.report.epochs {
            assert_eq!(e.train_accuracy, t.report.initial_train_accuracy);
        }
    }

    #[test]
    fn loss_goes_down() {
        let mut c = tiny();
        c.train.epochs = 30;
        let t = train_model(&c).unwrap();
        let e = &t.report.epochs;
        assert!(e.last().unwrap().mean_loss < e[0].mean_loss);
    }

    #[test]
    fn class_count_must_match() {
        let mut c = tiny();
        c.model.targets = 13;
        assert!(matches!(train_model(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = tiny();
        c.train.learning_rate = 1e200;
        c.train.epochs = 5;
        match train_model(&c) {
            Err(HarnessError::Diverged { epoch, .. }) => assert!(epoch < 5),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }
}
