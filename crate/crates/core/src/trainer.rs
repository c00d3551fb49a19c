//! Search loop: sample a path, pick a teacher off the board, take a
//! distillation step, update the board, and periodically update the meta
//! network from the student's post-update validation loss.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::board::{evaluate_accuracy, final_selection, Board, BoardEntry, EvalStats, InsertResult};
use crate::config::RunConfig;
use crate::data::{draw_batch, val_order, Dataset};
use crate::error::{Error, Result};
use crate::matcher::{hypergradient, meta_step, select_teacher_with_logits, MatchScore, MetaParams};
use crate::metrics::{Event, FinalEntry, FinalEvent, MetaEvent, MetricsWriter, StepEvent};
use crate::numerics::{cross_entropy, soft_cross_entropy, ParamSet, Tensor};
use crate::rng;
use crate::space::{build_space, count_flops, sample_uniform, PathSpec, SpaceSpec};
use crate::supernet::{PathGrads, Supernet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Prioritized-path distillation with meta-learned teacher matching.
    Cream,
    /// Single-path one-shot baseline: plain cross-entropy, no distillation,
    /// no meta updates.
    Spos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Constant,
}

/// All scalars of the search loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    /// Meta update cadence tau.
    #[serde(default = "default_meta_interval")]
    pub meta_interval: usize,
    #[serde(default = "default_meta_lr")]
    pub meta_lr: f64,
    #[serde(default = "default_meta_hidden")]
    pub meta_hidden: usize,
    /// Board capacity K.
    #[serde(default = "default_board_size")]
    pub board_size: usize,
    #[serde(default)]
    pub flops_min: u64,
    /// `null` means unbounded.
    #[serde(default)]
    pub flops_max: Option<u64>,
    /// Validation-subset size for board evaluations; `null` resolves to
    /// `min(2048, val size)`.
    #[serde(default)]
    pub val_subset: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Classical momentum; 0 keeps the update rule exactly `p - lr*g`.
    #[serde(default)]
    pub momentum: f64,
    /// Replaces the matching degree in the loss weighting when set. Zero
    /// disables distillation entirely, reproducing the baseline bit for bit.
    #[serde(default)]
    pub rho_override: Option<f64>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Steps between board evaluations of the sampled path.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
}

fn default_steps() -> usize {
    1_000
}
fn default_lr0() -> f64 {
    0.5
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Linear
}
fn default_meta_interval() -> usize {
    200
}
fn default_meta_lr() -> f64 {
    0.05
}
fn default_meta_hidden() -> usize {
    64
}
fn default_board_size() -> usize {
    10
}
fn default_batch_size() -> usize {
    16
}
fn default_mode() -> Mode {
    Mode::Cream
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_eval_interval() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Linearly annealed learning rate: `lr0 * (1 - t/T)`.
pub fn lr_schedule(kind: ScheduleKind, t: usize, total: usize, lr0: f64) -> f64 {
    match kind {
        ScheduleKind::Linear => lr0 * (1.0 - t as f64 / total as f64),
        ScheduleKind::Constant => lr0,
    }
}

/// Distillation context carried from a step into a meta update.
pub struct KdCache {
    pub student_path: PathSpec,
    pub g_kd: PathGrads<f32>,
    pub score: MatchScore<f32>,
}

/// Full mutable state of a run; everything needed to resume bit-exactly.
pub struct TrainState {
    pub step: usize,
    pub net: Supernet<f32>,
    pub board: Board,
    pub meta: MetaParams<f32>,
    pub velocity: Option<ParamSet<f32>>,
    pub sample_rng: ChaCha8Rng,
    pub batch_rng: ChaCha8Rng,
    pub val_batch_rng: ChaCha8Rng,
    /// Distillation context of the last completed step, if it distilled
    /// with a matcher-produced weight.
    pub last_kd: Option<KdCache>,
}

impl TrainState {
    /// Fresh state derived entirely from the config seed.
    pub fn init(config: &RunConfig, space: &SpaceSpec) -> Result<TrainState> {
        let t = &config.train;
        let net = Supernet::init(
            space.clone(),
            &mut rng::stream(t.seed, "weights_init"),
            t.init_scale,
        );
        let meta = MetaParams::init(
            space.classes,
            t.meta_hidden,
            &mut rng::stream(t.seed, "meta_init"),
            t.init_scale,
        );
        let board = Board::init(
            space,
            t.board_size,
            t.flops_min,
            t.flops_max.unwrap_or(u64::MAX),
            &mut rng::stream(t.seed, "board_init"),
        )?;
        Ok(TrainState {
            step: 0,
            net,
            board,
            meta,
            velocity: (t.momentum > 0.0).then(ParamSet::new),
            sample_rng: rng::stream(t.seed, "sample"),
            batch_rng: rng::stream(t.seed, "batch"),
            val_batch_rng: rng::stream(t.seed, "val_batch"),
            last_kd: None,
        })
    }
}

/// Report of one training step (the logged event plus the insert outcome).
pub struct StepReport {
    pub event: StepEvent,
    pub insert: Option<InsertResult>,
}

/// Outcome of a full search run.
pub struct SearchResult {
    pub final_path: PathSpec,
    pub final_flops: u64,
    pub board: Board,
    pub full_val_stats: Vec<EvalStats>,
}

/// Drives one search run over a dataset.
pub struct SearchRun<'a> {
    config: &'a RunConfig,
    dataset: &'a Dataset,
    /// Seeded shuffle of the val indices; eval subsets are prefixes.
    val_full: Vec<usize>,
    subset: Vec<usize>,
    pub state: TrainState,
}

impl<'a> SearchRun<'a> {
    pub fn new(config: &'a RunConfig, dataset: &'a Dataset) -> Result<Self> {
        let space = build_space(&config.space)?;
        let state = TrainState::init(config, &space)?;
        Self::with_state(config, dataset, state)
    }

    /// Continue from a checkpointed state.
    pub fn with_state(
        config: &'a RunConfig,
        dataset: &'a Dataset,
        state: TrainState,
    ) -> Result<Self> {
        if dataset.val.is_empty() || dataset.train.is_empty() {
            return Err(Error::EmptyDataset("train/val split".into()));
        }
        let subset_size = config.val_subset_size(dataset)?;
        let val_full = val_order(dataset.val.len(), config.train.seed);
        let subset = val_full[..subset_size].to_vec();
        Ok(SearchRun {
            config,
            dataset,
            val_full,
            subset,
            state,
        })
    }

    fn distilling(&self) -> bool {
        self.config.train.mode == Mode::Cream
            && self.config.train.rho_override != Some(0.0)
    }

    /// One iteration: sample, (optionally) distill, update weights,
    /// evaluate and offer the path to the board.
    pub fn train_step(&mut self, writer: &mut MetricsWriter) -> Result<StepReport> {
        let t = self.state.step;
        let cfg = &self.config.train;
        if t >= cfg.steps {
            return Err(Error::Config {
                field: "train.steps".into(),
                message: format!("step {} past configured total {}", t, cfg.steps),
            });
        }
        let lr = lr_schedule(cfg.schedule, t, cfg.steps, cfg.lr0);
        let step_err = |e: Error| match e {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("step {}: {}", t, context),
            },
            e => e,
        };

        let path = sample_uniform(&self.state.net.space, &mut self.state.sample_rng);
        let flops = count_flops(&self.state.net.space, &path)?;
        let (batch, labels) = draw_batch(&self.dataset.train, cfg.batch_size, &mut self.state.batch_rng);

        let (logits, caches) = self.state.net.forward_path(&path, &batch).map_err(step_err)?;
        let (ce_loss, grad_ce_logits) = cross_entropy(&logits, &labels).map_err(step_err)?;
        let g_ce = self
            .state
            .net
            .backward_path(&path, &caches, &grad_ce_logits)
            .map_err(step_err)?;

        let mut kd_loss = None;
        let mut rho_logged = None;
        let mut teacher_logged = None;
        let mut fallback = false;
        let mut total = g_ce;
        self.state.last_kd = None;

        if self.distilling() {
            match select_teacher_with_logits(
                &self.state.meta,
                &self.state.board,
                &self.state.net,
                &logits,
                &path,
                &batch,
            ) {
                Ok((score, soft)) => {
                    let (kd, grad_kd_logits) =
                        soft_cross_entropy(&logits, &soft).map_err(step_err)?;
                    let g_kd = self
                        .state
                        .net
                        .backward_path(&path, &caches, &grad_kd_logits)
                        .map_err(step_err)?;
                    let rho_eff = match cfg.rho_override {
                        Some(r) => r as f32,
                        None => score.rho,
                    };
                    if rho_eff != 0.0 {
                        total.axpy(rho_eff, &g_kd)?;
                    }
                    kd_loss = Some(kd as f64);
                    rho_logged = Some(rho_eff as f64);
                    teacher_logged = Some(score.teacher_index);
                    // The hypergradient is only meaningful when the loss
                    // weight actually came from the matcher.
                    if cfg.rho_override.is_none() {
                        self.state.last_kd = Some(KdCache {
                            student_path: path.clone(),
                            g_kd,
                            score,
                        });
                    }
                }
                Err(Error::NoTeacher) => {
                    fallback = true;
                }
                Err(e) => return Err(step_err(e)),
            }
        }

        // Optional classical momentum; off by default so the update is the
        // plain rule.
        let update = if cfg.momentum > 0.0 {
            let velocity = self.state.velocity.get_or_insert_with(ParamSet::new);
            let m = cfg.momentum as f32;
            for (name, g) in total.iter() {
                if !velocity.contains(name) {
                    velocity.insert(name.clone(), Tensor::zeros(g.dims().to_vec()));
                }
                let v = velocity.get_mut(name)?;
                v.scale(m);
                v.axpy(1.0, g)?;
            }
            total
                .names()
                .map(|n| Ok((n.clone(), velocity.get(n)?.clone())))
                .collect::<Result<PathGrads<f32>>>()?
        } else {
            total
        };
        self.state.net.apply_path_grads(&update, lr as f32)?;

        // Evaluate the freshly updated path on the val subset and offer it
        // to the board.
        let mut insert = None;
        let mut val_correct = None;
        let mut val_total = None;
        let mut insert_str = None;
        if t % cfg.eval_interval == 0 {
            let stats = evaluate_accuracy(
                &self.state.net,
                &path,
                &self.dataset.val,
                &self.subset,
                cfg.batch_size,
            )
            .map_err(step_err)?;
            val_correct = Some(stats.correct);
            val_total = Some(stats.total);
            let result = self.state.board.try_insert(BoardEntry {
                path: path.clone(),
                stats,
                flops,
            });
            insert_str = Some(match result {
                InsertResult::Replaced(i) => format!("replaced:{}", i),
                InsertResult::Rejected => "rejected".to_string(),
            });
            insert = Some(result);
        }

        let event = StepEvent {
            step: t,
            lr,
            path: path.encode(),
            flops,
            ce: ce_loss as f64,
            kd: kd_loss,
            rho: rho_logged,
            teacher: teacher_logged,
            fallback,
            val_correct,
            val_total,
            insert: insert_str,
            board_best: self.state.board.best_accuracy(),
            board_mean: self.state.board.mean_accuracy(),
        };
        writer.write(&Event::Step(event.clone()))?;
        self.state.step += 1;
        Ok(StepReport { event, insert })
    }

    /// After step `t`, update the meta network when `t mod tau == 0` and the
    /// step distilled with a matcher-produced weight. The student's
    /// validation gradient is taken at the post-update weights on one
    /// held-out batch.
    pub fn maybe_meta_update(&mut self, writer: &mut MetricsWriter) -> Result<Option<MetaEvent>> {
        let cfg = &self.config.train;
        let t = self.state.step - 1; // the step just executed
        if cfg.mode != Mode::Cream || t % cfg.meta_interval != 0 {
            return Ok(None);
        }
        let Some(kd) = self.state.last_kd.take() else {
            return Ok(None);
        };
        let (val_batch, val_labels) =
            draw_batch(&self.dataset.val, cfg.batch_size, &mut self.state.val_batch_rng);
        let (logits, caches) = self.state.net.forward_path(&kd.student_path, &val_batch)?;
        let (_, grad_logits) = cross_entropy(&logits, &val_labels)?;
        let v = self
            .state
            .net
            .backward_path(&kd.student_path, &caches, &grad_logits)?;
        let eta = lr_schedule(cfg.schedule, t, cfg.steps, cfg.lr0) as f32;
        let dot = crate::numerics::flat_dot(&v, &kd.g_kd)?;
        let grads = hypergradient(&self.state.meta, &kd.score, &v, &kd.g_kd, eta)?;
        meta_step(&mut self.state.meta, &grads, cfg.meta_lr as f32)?;
        let event = MetaEvent {
            step: t,
            rho: kd.score.rho as f64,
            teacher: kd.score.teacher_index,
            dot: dot as f64,
            scale: (-eta * dot) as f64,
        };
        writer.write(&Event::Meta(event.clone()))?;
        Ok(Some(event))
    }

    /// Full-validation re-ranking of the board and final pick.
    pub fn finalize(&self, writer: &mut MetricsWriter) -> Result<SearchResult> {
        let (final_path, stats) = final_selection(
            &self.state.board,
            &self.state.net,
            &self.dataset.val,
            &self.val_full,
            self.config.train.batch_size,
        )?;
        let final_flops = count_flops(&self.state.net.space, &final_path)?;
        let entries = self
            .state
            .board
            .entries()
            .iter()
            .zip(&stats)
            .map(|(e, s)| FinalEntry {
                path: e.path.encode(),
                flops: e.flops,
                correct: s.correct,
                total: s.total,
            })
            .collect();
        writer.write(&Event::Final(FinalEvent {
            step: self.state.step,
            entries,
            selected: final_path.encode(),
            selected_flops: final_flops,
        }))?;
        Ok(SearchResult {
            final_path,
            final_flops,
            board: self.state.board.clone(),
            full_val_stats: stats,
        })
    }
}

/// Run the whole search: `T` steps of train + meta updates, periodic
/// checkpoints, then final selection on the full validation set.
pub fn run_search(
    config: &RunConfig,
    dataset: &Dataset,
    writer: &mut MetricsWriter,
    resume: Option<TrainState>,
    checkpoint_dir: Option<&Path>,
) -> Result<SearchResult> {
    let mut run = match resume {
        Some(state) => SearchRun::with_state(config, dataset, state)?,
        None => SearchRun::new(config, dataset)?,
    };
    while run.state.step < config.train.steps {
        run.train_step(writer)?;
        run.maybe_meta_update(writer)?;
        if let Some(dir) = checkpoint_dir {
            let interval = config.checkpoint_interval;
            if interval > 0 && run.state.step % interval == 0 && run.state.step < config.train.steps
            {
                let path = dir.join(format!("checkpoint-{}.crm", run.state.step));
                crate::checkpoint::save_checkpoint(&run.state, &path)?;
            }
        }
    }
    let result = run.finalize(writer)?;
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("checkpoint-final.crm");
        crate::checkpoint::save_checkpoint(&run.state, &path)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::micro_preset;

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(lr_schedule(ScheduleKind::Linear, 0, 100, 0.5), 0.5);
        assert_eq!(lr_schedule(ScheduleKind::Linear, 100, 100, 0.5), 0.0);
        assert_eq!(lr_schedule(ScheduleKind::Linear, 50, 100, 0.5), 0.25);
        assert_eq!(lr_schedule(ScheduleKind::Constant, 73, 100, 0.3), 0.3);
    }

    fn tiny_config(mode: Mode) -> RunConfig {
        let mut cfg = micro_preset();
        cfg.train.steps = 12;
        cfg.train.board_size = 4;
        cfg.train.meta_interval = 4;
        cfg.train.val_subset = Some(32);
        cfg.train.batch_size = 8;
        cfg.train.mode = mode;
        cfg.train.seed = 21;
        if let crate::config::DatasetSource::Synthetic(s) = &mut cfg.dataset {
            s.n_train = 64;
            s.n_val = 64;
        }
        cfg
    }

    #[test]
    fn search_runs_and_board_stays_in_band() {
        let cfg = tiny_config(Mode::Cream);
        let ds = cfg.load_dataset().unwrap();
        let mut w = MetricsWriter::sink();
        let result = run_search(&cfg, &ds, &mut w, None, None).unwrap();
        assert_eq!(result.board.k(), 4);
        let max = cfg.train.flops_max.unwrap_or(u64::MAX);
        for e in result.board.entries() {
            assert!(e.flops >= cfg.train.flops_min && e.flops <= max);
        }
        let f = result.final_flops;
        assert!(f >= cfg.train.flops_min && f <= max);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = tiny_config(Mode::Cream);
        let ds = cfg.load_dataset().unwrap();
        let (mut w1, buf1) = MetricsWriter::to_buffer();
        run_search(&cfg, &ds, &mut w1, None, None).unwrap();
        let (mut w2, buf2) = MetricsWriter::to_buffer();
        run_search(&cfg, &ds, &mut w2, None, None).unwrap();
        assert_eq!(*buf1.lock().unwrap(), *buf2.lock().unwrap());
    }

    #[test]
    fn rho_forced_zero_matches_spos_bitwise() {
        let mut cream = tiny_config(Mode::Cream);
        cream.train.rho_override = Some(0.0);
        let spos = tiny_config(Mode::Spos);
        let ds = cream.load_dataset().unwrap();

        let (mut w1, buf1) = MetricsWriter::to_buffer();
        run_search(&cream, &ds, &mut w1, None, None).unwrap();
        let (mut w2, buf2) = MetricsWriter::to_buffer();
        run_search(&spos, &ds, &mut w2, None, None).unwrap();
        let a = buf1.lock().unwrap().clone();
        let b = buf2.lock().unwrap().clone();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn spos_mode_never_logs_distillation_fields() {
        let cfg = tiny_config(Mode::Spos);
        let ds = cfg.load_dataset().unwrap();
        let (mut w, buf) = MetricsWriter::to_buffer();
        run_search(&cfg, &ds, &mut w, None, None).unwrap();
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_ne!(v["event"], "meta");
            if v["event"] == "step" {
                assert!(v["rho"].is_null());
                assert!(v["teacher"].is_null());
                assert!(v["kd"].is_null());
            }
        }
    }

    #[test]
    fn cream_mode_distills_and_updates_meta() {
        let cfg = tiny_config(Mode::Cream);
        let ds = cfg.load_dataset().unwrap();
        let (mut w, buf) = MetricsWriter::to_buffer();
        run_search(&cfg, &ds, &mut w, None, None).unwrap();
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        let mut saw_kd = false;
        let mut saw_meta = false;
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            if v["event"] == "step" && !v["rho"].is_null() {
                saw_kd = true;
                let rho = v["rho"].as_f64().unwrap();
                assert!(rho > 0.0 && rho < 1.0);
            }
            if v["event"] == "meta" {
                saw_meta = true;
            }
        }
        assert!(saw_kd);
        assert!(saw_meta);
    }
}
