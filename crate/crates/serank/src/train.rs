//! Adagrad training loop with validation-driven model selection and
//! deterministic seeding. Identical seed and config reproduce the training
//! log bit for bit.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{batch_iter, cap_documents, Dataset};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossSpec};
use crate::metrics::evaluate;
use crate::model::{Mode, ScoringModel};
use crate::rng::derive_seed_indexed;
use std::borrow::Cow;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// When nonzero, train whole epochs instead of counting steps and return
    /// the last checkpoint rather than the best validation one.
    pub max_epochs: usize,
    /// Cap on documents per query at training time; evaluation never caps.
    pub doc_cap: usize,
    /// Validate every this many steps (0 disables periodic evaluation).
    pub eval_every: usize,
    pub seed: u64,
    pub adagrad_init_acc: f64,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    pub loss: LossSpec,
    /// NDCG@k used for model selection.
    pub select_metric_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 128,
            max_steps: 30_000,
            max_epochs: 0,
            doc_cap: 200,
            eval_every: 500,
            seed: 0,
            adagrad_init_acc: 0.1,
            clip_norm: 0.0,
            loss: LossSpec::default(),
            select_metric_k: 5,
        }
    }
}

/// Per-parameter squared-gradient accumulators, aligned with the model's
/// parameter order. Accumulators never decrease.
#[derive(Debug, Clone)]
pub struct AdagradState {
    pub acc: Vec<Vec<f64>>,
}

impl AdagradState {
    pub fn new(model: &ScoringModel, init_acc: f64) -> Self {
        AdagradState {
            acc: model
                .params()
                .iter()
                .map(|p| vec![init_acc; p.tensor.numel()])
                .collect(),
        }
    }
}

/// acc += g^2; param -= lr * g / sqrt(acc). No extra epsilon: with a zero
/// gradient the parameter and accumulator are left untouched, so a zero
/// initial accumulator never divides by zero.
pub fn adagrad_step(param: &mut Tensor, grad: &[f64], acc: &mut [f64], lr: f64) -> Result<()> {
    if grad.len() != param.numel() || acc.len() != param.numel() {
        return Err(Error::DimensionMismatch {
            op: "adagrad_step",
            lhs: param.shape().to_vec(),
            rhs: vec![grad.len(), acc.len()],
        });
    }
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad).zip(acc) {
        if g != 0.0 {
            *a += g * g;
            *p -= lr * g / a.sqrt();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
    pub valid_ndcg: Option<f64>,
}

pub struct TrainOutcome {
    /// Best validation checkpoint (step mode) or the final model (epoch mode
    /// or when evaluation never ran).
    pub best: ScoringModel,
    pub final_model: ScoringModel,
    pub log: Vec<TrainLogEntry>,
    pub best_step: usize,
    pub best_metric: Option<f64>,
    /// Queries skipped by the loss (no positive gain) over the whole run.
    pub skipped_queries: usize,
}

/// `step<TAB>loss` rows, with a third `valid_ndcg` column on eval steps.
pub fn write_log_tsv(log: &[TrainLogEntry], mut w: impl Write) -> std::io::Result<()> {
    for e in log {
        match e.valid_ndcg {
            Some(m) => writeln!(w, "{}\t{}\t{}", e.step, e.loss, m)?,
            None => writeln!(w, "{}\t{}", e.step, e.loss)?,
        }
    }
    Ok(())
}

pub fn train(
    mut model: ScoringModel,
    train_ds: &Dataset,
    valid_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_ds.feature_count != model.spec.input_width
        || valid_ds.feature_count != model.spec.input_width
    {
        return Err(Error::DimensionMismatch {
            op: "train",
            lhs: vec![model.spec.input_width],
            rhs: vec![train_ds.feature_count, valid_ds.feature_count],
        });
    }
    let epoch_mode = cfg.max_epochs > 0;
    let mut state = AdagradState::new(&model, cfg.adagrad_init_acc);
    let mut log = Vec::new();
    let mut best: Option<(f64, ScoringModel, usize)> = None;
    let mut skipped_total = 0usize;
    let mut step = 0usize;

    'epochs: for epoch in 0usize.. {
        if epoch_mode && epoch >= cfg.max_epochs {
            break;
        }
        if !epoch_mode && step >= cfg.max_steps {
            break;
        }
        let capped = cap_dataset_for_epoch(train_ds, cfg, epoch);
        let shuffle_seed = derive_seed_indexed(cfg.seed, "epoch-shuffle", epoch as u64);
        for batch in batch_iter(&capped, cfg.batch_size, shuffle_seed) {
            if !epoch_mode && step >= cfg.max_steps {
                break 'epochs;
            }
            step += 1;

            let mut graph = Graph::new();
            let bound = model.bind(&mut graph);
            let mut input_nodes = Vec::with_capacity(batch.batch_size);
            for qi in 0..batch.batch_size {
                let x = Tensor::new(
                    vec![batch.max_docs, batch.feature_count],
                    batch.query_features(qi).to_vec(),
                )?;
                input_nodes.push(graph.constant(x));
            }
            let inputs: Vec<(NodeId, &[bool])> = input_nodes
                .iter()
                .enumerate()
                .map(|(qi, &n)| (n, batch.query_mask(qi)))
                .collect();
            let step_seed = derive_seed_indexed(cfg.seed, "train-step", step as u64);
            let fwd = model.forward_batch(&mut graph, &bound, &inputs, &Mode::Train { step_seed })?;
            let queries: Vec<(NodeId, &[u32], &[bool])> = (0..batch.batch_size)
                .map(|qi| (fwd.scores[qi], batch.query_labels(qi), batch.query_mask(qi)))
                .collect();
            let bl = batch_loss(&mut graph, &cfg.loss, &queries)?;
            skipped_total += bl.skipped;
            let loss_value = graph.value(bl.node).data()[0];
            graph.backward(bl.node)?;

            if !loss_value.is_finite() {
                let max_param = model
                    .params()
                    .iter()
                    .flat_map(|p| p.tensor.data())
                    .fold(0.0_f64, |a, v| a.max(v.abs()));
                let max_grad = bound
                    .ids
                    .iter()
                    .filter_map(|&id| graph.grad(id))
                    .flatten()
                    .fold(0.0_f64, |a, v| a.max(v.abs()));
                return Err(Error::Training {
                    step,
                    msg: format!(
                        "non-finite loss {loss_value} (max |param| {max_param:.3e}, max |grad| {max_grad:.3e})"
                    ),
                });
            }

            // fold fresh batch statistics into the moving averages
            for stat in &fwd.bn_stats {
                let fold = |t: &mut Tensor, fresh: &[f64]| {
                    for (m, &b) in t.data_mut().iter_mut().zip(fresh) {
                        *m = 0.99 * *m + 0.01 * b;
                    }
                };
                fold(
                    &mut model
                        .param_mut(&format!("bn{}.moving_mean", stat.layer))
                        .tensor,
                    &stat.mean,
                );
                fold(
                    &mut model
                        .param_mut(&format!("bn{}.moving_var", stat.layer))
                        .tensor,
                    &stat.var,
                );
            }

            let mut grads: Vec<Option<Vec<f64>>> = bound
                .ids
                .iter()
                .map(|&id| graph.grad(id).map(<[f64]>::to_vec))
                .collect();
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            for (idx, grad) in grads.iter().enumerate() {
                let Some(grad) = grad else { continue };
                let param = &mut model.params_mut()[idx];
                if !param.trainable {
                    continue;
                }
                adagrad_step(&mut param.tensor, grad, &mut state.acc[idx], cfg.learning_rate)?;
            }

            let mut entry = TrainLogEntry {
                step,
                loss: loss_value,
                valid_ndcg: None,
            };
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                let report = evaluate(&model, valid_ds, &[cfg.select_metric_k])?;
                let metric = report.ndcg_at[&cfg.select_metric_k];
                entry.valid_ndcg = Some(metric);
                let improved = best.as_ref().is_none_or(|(m, _, _)| metric > *m);
                if improved {
                    best = Some((metric, model.clone(), step));
                }
            }
            log.push(entry);
        }
    }

    let final_model = model.clone();
    let (best_model, best_step, best_metric) = match (epoch_mode, best) {
        // epoch protocol: use the last checkpoint
        (true, _) | (false, None) => (model, step, None),
        (false, Some((m, ckpt, s))) => (ckpt, s, Some(m)),
    };
    Ok(TrainOutcome {
        best: best_model,
        final_model,
        log,
        best_step,
        best_metric,
        skipped_queries: skipped_total,
    })
}

fn cap_dataset_for_epoch<'a>(ds: &'a Dataset, cfg: &TrainConfig, epoch: usize) -> Cow<'a, Dataset> {
    if ds.groups.iter().all(|g| g.doc_count() <= cfg.doc_cap) {
        return Cow::Borrowed(ds);
    }
    let groups = ds
        .groups
        .iter()
        .enumerate()
        .map(|(qi, g)| {
            let seed = derive_seed_indexed(
                cfg.seed,
                "doc-cap",
                (epoch as u64) << 32 | qi as u64,
            );
            cap_documents(g, cfg.doc_cap, seed)
        })
        .collect();
    Cow::Owned(Dataset {
        groups,
        feature_count: ds.feature_count,
        stats: ds.stats.clone(),
    })
}

fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
    use crate::model::{init, ModelSpec, Variant};

    #[test]
    fn adagrad_single_step_closed_form() {
        // g = 3, acc0 = 0, lr = 0.5: acc = 9, delta = -0.5 * 3 / 3 = -0.5
        let mut p = Tensor::scalar(1.0);
        let mut acc = vec![0.0];
        adagrad_step(&mut p, &[3.0], &mut acc, 0.5).unwrap();
        assert_eq!(acc[0], 9.0);
        assert!((p.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adagrad_zero_gradient_is_identity() {
        let mut p = Tensor::scalar(2.5);
        let mut acc = vec![0.0];
        adagrad_step(&mut p, &[0.0], &mut acc, 0.5).unwrap();
        assert_eq!(p.data()[0], 2.5);
        assert_eq!(acc[0], 0.0);
    }

    #[test]
    fn adagrad_two_unit_steps() {
        // g = 1 twice from acc 0: deltas -lr then -lr/sqrt(2)
        let lr = 0.3;
        let mut p = Tensor::scalar(0.0);
        let mut acc = vec![0.0];
        adagrad_step(&mut p, &[1.0], &mut acc, lr).unwrap();
        assert!((p.data()[0] + lr).abs() < 1e-15);
        adagrad_step(&mut p, &[1.0], &mut acc, lr).unwrap();
        assert!((p.data()[0] + lr + lr / 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn adagrad_shape_mismatch_is_error() {
        let mut p = Tensor::zeros(2, 2);
        let mut acc = vec![0.0; 4];
        assert!(adagrad_step(&mut p, &[1.0], &mut acc, 0.1).is_err());
    }

    fn tiny_task() -> (Dataset, Dataset) {
        let spec = SyntheticSpec {
            task: SyntheticTask::Plain,
            queries: 40,
            docs_per_query: 8,
            feature_count: 6,
            seed: 11,
            split: "train".into(),
        };
        let train = generate_synthetic(&spec).discard_no_relevant();
        let valid = generate_synthetic(&SyntheticSpec {
            queries: 15,
            split: "valid".into(),
            ..spec
        })
        .discard_no_relevant();
        (train, valid)
    }

    fn tiny_model(seed: u64) -> ScoringModel {
        let mut spec = ModelSpec::new(Variant::Univariate, 6);
        spec.hidden_widths = vec![8, 4];
        spec.seed = seed;
        init(&spec).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 8,
            max_steps: 12,
            eval_every: 6,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_log_bit_exactly() {
        let (train_ds, valid_ds) = tiny_task();
        let cfg = tiny_config();
        let a = train(tiny_model(3), &train_ds, &valid_ds, &cfg).unwrap();
        let b = train(tiny_model(3), &train_ds, &valid_ds, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        for (pa, pb) in a.final_model.params().iter().zip(b.final_model.params()) {
            for (x, y) in pa.tensor.data().iter().zip(pb.tensor.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (train_ds, valid_ds) = tiny_task();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        let model = tiny_model(3);
        let before: Vec<Vec<f64>> = model.params().iter().map(|p| p.tensor.data().to_vec()).collect();
        let out = train(model, &train_ds, &valid_ds, &cfg).unwrap();
        for (p, b) in out.final_model.params().iter().zip(&before) {
            assert_eq!(p.tensor.data(), b.as_slice());
        }
    }

    #[test]
    fn accumulators_never_decrease() {
        let mut p = Tensor::scalar(0.0);
        let mut acc = vec![0.1];
        for g in [0.5, -0.25, 0.0, 2.0, -1e-8, 0.0] {
            let before = acc[0];
            adagrad_step(&mut p, &[g], &mut acc, 0.1).unwrap();
            assert!(acc[0] >= before, "{g}: {} < {before}", acc[0]);
        }
        assert!(acc[0] >= 0.1);
    }

    #[test]
    fn loss_is_nonincreasing_on_a_repeated_batch() {
        // overfit sanity: small lr, one fixed batch
        let (train_ds, _) = tiny_task();
        let few = Dataset {
            groups: train_ds.groups[..4].to_vec(),
            feature_count: train_ds.feature_count,
            stats: None,
        };
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4, // the whole dataset: every step sees the same batch
            max_steps: 100,
            eval_every: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(tiny_model(4), &few, &few, &cfg).unwrap();
        for w in out.log.windows(2) {
            assert!(
                w[1].loss <= w[0].loss + 1e-9,
                "step {}: {} -> {}",
                w[1].step,
                w[0].loss,
                w[1].loss
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_validation_metric() {
        let (train_ds, valid_ds) = tiny_task();
        let out = train(tiny_model(3), &train_ds, &valid_ds, &tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::model::save_model(&out.best, dir.path().join("ckpt")).unwrap();
        let loaded = crate::model::load_model(dir.path().join("ckpt")).unwrap();
        let a = evaluate(&out.best, &valid_ds, &[5]).unwrap();
        let b = evaluate(&loaded, &valid_ds, &[5]).unwrap();
        assert_eq!(a.ndcg_at[&5].to_bits(), b.ndcg_at[&5].to_bits());
    }

    #[test]
    fn epoch_mode_runs_whole_epochs_and_returns_last() {
        let (train_ds, valid_ds) = tiny_task();
        let cfg = TrainConfig {
            max_epochs: 2,
            eval_every: 0,
            ..tiny_config()
        };
        let out = train(tiny_model(3), &train_ds, &valid_ds, &cfg).unwrap();
        let steps_per_epoch = train_ds.query_count().div_ceil(cfg.batch_size);
        assert_eq!(out.log.len(), 2 * steps_per_epoch);
        assert!(out.best_metric.is_none());
    }

    #[test]
    fn training_log_tsv_format() {
        let log = vec![
            TrainLogEntry { step: 1, loss: 0.75, valid_ndcg: None },
            TrainLogEntry { step: 2, loss: 0.5, valid_ndcg: Some(0.9) },
        ];
        let mut buf = Vec::new();
        write_log_tsv(&log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1\t0.75\n2\t0.5\t0.9\n");
    }
}
