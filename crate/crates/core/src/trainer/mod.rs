//! Optimization loop: triple sampling, one mask draw per step, the full
//! objective, Adam, validation-based early stopping and graph export.

mod config;

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{KernelConfig, TrainConfig};

use crate::data::{build_graph, sample_triples, Dataset, InteractionGraph, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions, MetricReport};
use crate::model::{edge_pairs, export_graph_text, gumbel_noise, Checkpoint, Model, OptimizerState};
use crate::objective::{forward_backward, Bandwidths, LossBreakdown, StepConfig, Views};
use crate::preference::PreferenceKnowledge;
use crate::relation::{build_enriched_graph, RelationKnowledge};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam without weight decay, over every tensor.
pub fn adam_update(model: &mut Model, grad: &Model, state: &mut OptimizerState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let params = model.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, p), (_, m)), (_, v)), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grad.tensors()) {
        for k in 0..p.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Knowledge artifacts available to a run.
#[derive(Clone, Copy, Default)]
pub struct Knowledge<'a> {
    pub preference: Option<&'a PreferenceKnowledge>,
    pub relations: Option<&'a RelationKnowledge>,
}

/// Telemetry of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Gradient L2 norms of the embeddings, mask generator and head.
    pub grad_norms: [f64; 3],
}

pub const METRICS_HEADER: &str = "step\tepoch\tl_rec\tl_prf\tl_rel\tl_comp\ttotal\tgrad_emb\tgrad_mask\tgrad_head";

impl StepRecord {
    pub fn to_line(&self) -> String {
        let l = &self.losses;
        let g = &self.grad_norms;
        format!(
            "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.6e}\t{:.6e}\t{:.6e}",
            self.step, self.epoch, l.l_rec, l.l_prf, l.l_rel, l.l_comp, l.total, g[0], g[1], g[2]
        )
    }
}

pub fn metrics_log(records: &[StepRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        writeln!(out, "{}", r.to_line()).unwrap();
    }
    out
}

fn grad_norms(grad: &Model) -> [f64; 3] {
    let mut sq = [0.0; 3];
    for (name, t) in grad.tensors() {
        let slot = if name == "embeddings" {
            0
        } else if name.starts_with("mask") {
            1
        } else {
            2
        };
        sq[slot] += t.iter().map(|x| x * x).sum::<f64>();
    }
    sq.map(f64::sqrt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    /// Per-step means of each component.
    pub losses: LossBreakdown,
}

/// Training state over one dataset and its knowledge.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub records: Vec<StepRecord>,
    pub epoch: usize,
    dataset: &'a Dataset,
    graph: InteractionGraph,
    pairs: Vec<(usize, usize)>,
    enriched: Option<InteractionGraph>,
    text: Option<(Array2<f64>, Array2<f64>)>,
    rng: ChaCha8Rng,
    config_hash: String,
}

impl<'a> Trainer<'a> {
    /// Builds graphs and initializes the model from `config.seed`.
    /// Knowledge needed by an active term must be present.
    pub fn new(dataset: &'a Dataset, knowledge: Knowledge, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.train().is_empty() {
            return Err(Error::Validation("empty training split".into()));
        }
        let ab = config.ablation;
        if ab.uses_prf() && knowledge.preference.is_none() {
            return Err(Error::Config("preference knowledge is required unless no_pk is set".into()));
        }
        if ab.uses_rel() && knowledge.relations.is_none() {
            return Err(Error::Config("relation knowledge is required unless no_rk is set".into()));
        }
        let graph = build_graph(dataset, &[], None)?;
        let enriched = match (ab.uses_rel(), knowledge.relations) {
            (true, Some(kr)) => Some(build_enriched_graph(dataset, kr)?),
            _ => None,
        };
        if let Some(kp) = knowledge.preference {
            if kp.num_users() != dataset.num_users() || kp.item_text.nrows() != dataset.num_items() {
                return Err(Error::Config("preference knowledge does not match the dataset".into()));
            }
        }
        let text_dim = knowledge
            .preference
            .map_or(crate::model::ModelConfig::default().text_dim, |kp| kp.text_dim());
        let text = match (ab.uses_prf(), knowledge.preference) {
            (true, Some(kp)) => Some((kp.user_text.clone(), kp.item_text.clone())),
            _ => None,
        };
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.model_config(text_dim), dataset.num_users(), dataset.num_items(), &mut init);
        let optimizer = OptimizerState::new(&model);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Ok(Self {
            pairs: edge_pairs(&graph),
            graph,
            enriched,
            text,
            model,
            optimizer,
            records: Vec::new(),
            epoch: 0,
            dataset,
            rng,
            config_hash: config.hash(),
            config,
        })
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.dataset.train().len().div_ceil(self.config.batch_size)
    }

    fn step_config(&self, tau: f64) -> StepConfig {
        let c = &self.config;
        StepConfig {
            alpha: c.alpha,
            beta: c.beta,
            contrast_tau: c.contrast_tau,
            gumbel_tau: tau,
            inclusive_nce: c.inclusive_nce,
            freeze_mask: c.freeze_mask,
            ablation: c.ablation,
            bandwidths: match c.kernel {
                KernelConfig::Median => None,
                KernelConfig::Fixed { sigma_k, sigma_m } => Some(Bandwidths {
                    users: (sigma_k, sigma_m),
                    items: (sigma_k, sigma_m),
                }),
            },
        }
    }

    /// One optimizer step; returns its telemetry.
    pub fn step(&mut self) -> Result<StepRecord> {
        let tau = self.config.gumbel_tau_at(self.epoch.max(1));
        let batch = sample_triples(self.dataset, self.config.batch_size, &mut self.rng)?;
        let delta = (!self.config.freeze_mask).then(|| gumbel_noise(self.pairs.len(), &mut self.rng));
        let views = Views {
            graph: &self.graph,
            pairs: &self.pairs,
            enriched: self.enriched.as_ref().map(|g| g.adjacency()),
            text: self.text.as_ref().map(|(u, i)| (u.view(), i.view())),
        };
        let step = self.records.len();
        let out = forward_backward(
            &self.model,
            &views,
            &batch,
            delta.as_deref(),
            &self.step_config(tau),
            step,
        )?;
        adam_update(&mut self.model, &out.grad, &mut self.optimizer, self.config.lr);
        if !self.model.is_finite() {
            return Err(Error::NonFinite {
                term: "parameters after update".into(),
                step,
            });
        }
        let record = StepRecord {
            step,
            epoch: self.epoch,
            losses: out.losses,
            grad_norms: grad_norms(&out.grad),
        };
        self.records.push(record.clone());
        Ok(record)
    }

    /// `⌈|train| / batch⌉` steps.
    pub fn train_epoch(&mut self) -> Result<EpochSummary> {
        self.epoch += 1;
        let steps = self.steps_per_epoch();
        let mut sum = LossBreakdown::zero();
        for _ in 0..steps {
            let l = self.step()?.losses;
            sum.l_rec += l.l_rec;
            sum.l_prf += l.l_prf;
            sum.l_rel += l.l_rel;
            sum.l_comp += l.l_comp;
            sum.total += l.total;
        }
        let n = steps as f64;
        Ok(EpochSummary {
            epoch: self.epoch,
            steps,
            losses: LossBreakdown {
                l_rec: sum.l_rec / n,
                l_prf: sum.l_prf / n,
                l_rel: sum.l_rel / n,
                l_comp: sum.l_comp / n,
                total: sum.total / n,
            },
        })
    }

    /// Eval-mode representations of the current model.
    pub fn representations(&self) -> Array2<f64> {
        representations(&self.model, &self.graph, &self.config, self.epoch)
    }

    pub fn evaluate(&self, split: Split, opts: &EvalOptions) -> Result<MetricReport> {
        evaluate(self.representations().view(), self.dataset, split, opts)
    }

    pub fn eval_options(&self, ns: Vec<usize>) -> EvalOptions {
        EvalOptions {
            ns,
            include_val_candidates: false,
            seed: self.config.seed,
            config_hash: self.config_hash.clone(),
        }
    }

    fn validation_recall(&self) -> Result<f64> {
        let n = self.config.monitor_n;
        let rep = self.evaluate(Split::Val, &self.eval_options(vec![n]))?;
        Ok(rep.recall_at(n).unwrap_or(0.0))
    }

    pub fn checkpoint(&self, metric: f64) -> Checkpoint {
        Checkpoint::new(&self.model, &self.optimizer, self.epoch, metric, &self.config_hash)
    }
}

/// Eval-mode representations of a model trained with `config`, at the mask
/// temperature of `epoch`.
pub fn representations(model: &Model, graph: &InteractionGraph, config: &TrainConfig, epoch: usize) -> Array2<f64> {
    model.representations(graph, config.gumbel_tau_at(epoch), config.freeze_mask)
}

/// Early stopping on a maximized metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records `metric` for `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub summary: EpochSummary,
    pub val_recall: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub initial_recall: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl FitOutcome {
    /// `epoch \t total \t val_recall` lines.
    pub fn epoch_log(&self) -> String {
        let mut out = String::from("epoch\tsteps\tmean_total\tval_recall\n");
        for e in &self.epochs {
            writeln!(out, "{}\t{}\t{:.9e}\t{:.6}", e.summary.epoch, e.summary.steps, e.summary.losses.total, e.val_recall).unwrap();
        }
        out
    }
}

/// Trains until `patience` epochs pass without a better validation
/// Recall@N or `max_epochs` is reached, keeping the best checkpoint. With
/// zero epochs the initial state is returned with its evaluation.
pub fn fit(dataset: &Dataset, knowledge: Knowledge, config: &TrainConfig) -> Result<FitOutcome> {
    if dataset.val().is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }
    let mut trainer = Trainer::new(dataset, knowledge, config.clone())?;
    let initial_recall = trainer.validation_recall()?;
    let mut best = trainer.checkpoint(initial_recall);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut epochs = Vec::new();
    for _ in 0..config.max_epochs {
        let summary = trainer.train_epoch()?;
        let val_recall = trainer.validation_recall()?;
        log::info!("epoch {} loss {:.6} val recall {:.4}", summary.epoch, summary.losses.total, val_recall);
        epochs.push(EpochRecord { summary, val_recall });
        let (improved, stop) = stopper.observe(trainer.epoch, val_recall);
        if improved {
            best = trainer.checkpoint(val_recall);
        }
        if stop {
            break;
        }
    }
    Ok(FitOutcome {
        best,
        initial_recall,
        epochs,
        steps: trainer.records,
    })
}

/// Eval-mode q per training edge and the hard set `q ≥ 0.5`, as text.
pub fn export_denoised_graph(checkpoint: &Checkpoint, dataset: &Dataset, config: &TrainConfig) -> Result<String> {
    let graph = build_graph(dataset, &[], None)?;
    let q = checkpoint
        .model
        .eval_mask(&graph, config.gumbel_tau_at(checkpoint.epoch), config.freeze_mask);
    Ok(export_graph_text(dataset, &graph, q.view()))
}

/// Eval-mode q per training edge, in training order.
pub fn edge_scores(model: &Model, dataset: &Dataset, config: &TrainConfig, epoch: usize) -> Result<Vec<f64>> {
    let graph = build_graph(dataset, &[], None)?;
    Ok(model.eval_mask(&graph, config.gumbel_tau_at(epoch), config.freeze_mask).to_vec())
}

#[cfg(test)]
mod tests;
