use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::load_checkpoint;
use super::config::{sub_seed, RunConfig};
use super::data::{load_dataset, Dataset};
use super::eqgap::{model_label, pulled_back_logits, Family};
use super::train::{check_classes, prepare_all};
use super::ReportHeader;
use crate::autodiff::Tensor;
use crate::error::HarnessError;
use crate::layers::{Model, ParamStore};
use crate::transforms::random_transform_suite;

/// Accuracies in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub model: String,
    pub test_meshes: usize,
    pub train: f64,
    pub test: f64,
    pub gauge: f64,
    pub rot_tr_scale: f64,
    pub perm: f64,
    pub rotation: f64,
    pub translation: f64,
    pub scale: f64,
}

/// (correct, total) with the argmax of each row; ties go to the lower index.
pub fn accuracy(logits: &Tensor<f64>, targets: &[usize]) -> (usize, usize) {
    assert_eq!(logits.rows, targets.len(), "one target per row");
    let hits = targets
        .iter()
        .enumerate()
        .filter(|&(r, &t)| {
            let row = logits.row(r);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == t
        })
        .count();
    (hits, targets.len())
}

fn pct((h, n): (usize, usize)) -> f64 {
    100.0 * h as f64 / n.max(1) as f64
}

pub fn evaluate_model(cfg: &RunConfig, model: &Model, store: &ParamStore, dataset: &Dataset) -> Result<EvalReport, HarnessError> {
    if dataset.test.is_empty() {
        return Err(HarnessError::Dataset("test set is empty".into()));
    }
    let train = prepare_all(cfg, &dataset.train)?;
    let test = prepare_all(cfg, &dataset.test)?;
    let mut train_acc = (0, 0);
    for (p, t) in &train {
        let (h, n) = accuracy(&model.predict(store, &p.graph, &p.features)?, t);
        train_acc = (train_acc.0 + h, train_acc.1 + n);
    }
    let mut plain = (0, 0);
    let mut fam = [(0usize, 0usize); 6];
    for (i, (p, t)) in test.iter().enumerate() {
        let (h, n) = accuracy(&model.predict(store, &p.graph, &p.features)?, t);
        plain = (plain.0 + h, plain.1 + n);
        for k in 0..cfg.eval.samples {
            let idx = (i * cfg.eval.samples + k) as u64;
            let suite = random_transform_suite(p.mesh.vertex_count(), &cfg.transforms, sub_seed(cfg.seed, "eval-suite", idx));
            for (j, f) in Family::ALL.into_iter().enumerate() {
                let l = pulled_back_logits(cfg, model, store, p, &suite, f)?;
                let (h, n) = accuracy(&l, t);
                fam[j] = (fam[j].0 + h, fam[j].1 + n);
            }
        }
    }
    let at = |f: Family| pct(fam[Family::ALL.iter().position(|&g| g == f).unwrap()]);
    Ok(EvalReport {
        header: ReportHeader::new("eval", cfg),
        model: model_label(cfg),
        test_meshes: test.len(),
        train: pct(train_acc),
        test: pct(plain),
        gauge: at(Family::Gauge),
        rot_tr_scale: at(Family::RotTrScale),
        perm: at(Family::Perm),
        rotation: at(Family::Rotation),
        translation: at(Family::Translation),
        scale: at(Family::Scale),
    })
}

/// Rebuilds the configured model, loads the checkpoint into it and
/// evaluates on the configured dataset.
pub fn evaluate_checkpoint(cfg: &RunConfig, path: &std::path::Path) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let ck = load_checkpoint(path)?;
    let (model, mut store) = Model::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.restore(&cfg.model, &mut store)?;
    let dataset = load_dataset(&cfg.data, cfg.model.task, cfg.seed)?;
    check_classes(cfg, &dataset)?;
    evaluate_model(cfg, &model, &store, &dataset)
}
