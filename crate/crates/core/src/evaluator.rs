//! Ground-truth machinery: stand-alone training of individual paths,
//! tie-corrected Kendall rank correlation, and the ranking/ablation
//! experiment drivers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::board::evaluate_accuracy;
use crate::config::{RunConfig, ScratchConfig};
use crate::data::{draw_batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsWriter;
use crate::numerics::{cross_entropy, sgd_step, ParamSet};
use crate::rng;
use crate::space::{compile_path, enumerate, sample_uniform, PathSpec, ProgStep, SpaceSpec};
use crate::supernet::{init_params, run_backward, run_forward, Supernet};
use crate::trainer::{lr_schedule, ScheduleKind};

/// Train exactly one path's layers from fresh weights with plain
/// cross-entropy SGD and report full-validation top-1 accuracy.
pub fn train_from_scratch(
    space: &SpaceSpec,
    path: &PathSpec,
    dataset: &Dataset,
    scratch: &ScratchConfig,
    seed: u64,
) -> Result<f64> {
    let program = compile_path(space, path)?;
    let layers: Vec<(String, crate::numerics::LayerSpec)> = program
        .steps
        .iter()
        .filter_map(|s| match s {
            ProgStep::Layer {
                param: Some(p),
                spec,
                ..
            } => Some((p.clone(), *spec)),
            _ => None,
        })
        .collect();
    let mut params: ParamSet<f32> =
        init_params(&layers, &mut rng::stream(seed, "scratch_init"), scratch.init_scale);
    let mut batch_rng = rng::stream(seed, "scratch_batch");
    for t in 0..scratch.steps {
        let lr = lr_schedule(ScheduleKind::Linear, t, scratch.steps, scratch.lr0) as f32;
        let (batch, labels) = draw_batch(&dataset.train, scratch.batch_size, &mut batch_rng);
        let (logits, caches) = run_forward(&params, &program, &batch)?;
        let (_, grad_logits) = cross_entropy(&logits, &labels)?;
        let grads = run_backward(&params, &program, &caches, &grad_logits)?;
        sgd_step(&mut params, &grads, lr)?;
    }
    let net = Supernet {
        space: space.clone(),
        params,
    };
    let order: Vec<usize> = (0..dataset.val.len()).collect();
    let stats = evaluate_accuracy(&net, path, &dataset.val, &order, scratch.batch_size)?;
    Ok(stats.accuracy())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Stand-alone accuracy of a path: median over the scratch seeds.
pub fn scratch_accuracy(
    space: &SpaceSpec,
    path: &PathSpec,
    dataset: &Dataset,
    scratch: &ScratchConfig,
) -> Result<(f64, Vec<f64>)> {
    let per_seed: Vec<f64> = scratch
        .seeds
        .iter()
        .map(|&s| train_from_scratch(space, path, dataset, scratch, s))
        .collect::<Result<_>>()?;
    let mut sorted = per_seed.clone();
    Ok((median(&mut sorted), per_seed))
}

/// Tie-corrected Kendall rank correlation (tau-b).
///
/// Computed as `(C - D) / sqrt((n0 - n1)(n0 - n2))` where `n0` counts all
/// pairs and `n1`/`n2` count pairs tied in each list. Discordant pairs are
/// counted by merge sort over the second list after sorting by the first,
/// so the whole thing is O(n log n).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            op: "kendall_tau",
            detail: format!("{} vs {} values", xs.len(), ys.len()),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::DegenerateRanking(format!(
            "need at least two values, got {}",
            n
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "kendall_tau input".into(),
        });
    }

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Tie bookkeeping over the x-sorted sequence.
    let pair2 = |t: u64| t * (t - 1) / 2;
    let mut n1 = 0u64; // pairs tied in x
    let mut n3 = 0u64; // pairs tied in both
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                n3 += pair2(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += pair2(run_x);
            n3 += pair2(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += pair2(run_x);
    n3 += pair2(run_xy);

    // Discordant pairs: inversions of y in x-order. Pairs tied in x are
    // pre-sorted by y, so they contribute no inversions.
    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut ys_sorted);

    // Ties in y, from the now fully sorted y sequence.
    let mut n2 = 0u64;
    let mut run_y = 1u64;
    for i in 1..n {
        if ys_sorted[i] == ys_sorted[i - 1] {
            run_y += 1;
        } else {
            n2 += pair2(run_y);
            run_y = 1;
        }
    }
    n2 += pair2(run_y);

    let n0 = pair2(n as u64);
    if n0 == n1 || n0 == n2 {
        return Err(Error::DegenerateRanking(
            "all values tied in one list".into(),
        ));
    }
    let c_minus_d = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * discordant as f64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((c_minus_d / denom).clamp(-1.0, 1.0))
}

/// Merge-sort inversion count; strictly decreasing adjacent-in-order pairs.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    let mut buf = values.to_vec();
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid || j < hi {
                if i < mid && (j >= hi || values[i] <= values[j]) {
                    buf[k] = values[i];
                    i += 1;
                } else {
                    inversions += (mid - i) as u64;
                    buf[k] = values[j];
                    j += 1;
                }
                k += 1;
            }
            lo = hi;
        }
        values.copy_from_slice(&buf);
        width *= 2;
    }
    inversions
}

/// Outcome of one ranking experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankReport {
    pub paths: Vec<String>,
    pub supernet_acc: Vec<f64>,
    pub scratch_acc: Vec<f64>,
    /// Per-path accuracies for each scratch seed.
    pub scratch_per_seed: Vec<Vec<f64>>,
    pub kendall_tau: f64,
    /// Mean supernet accuracy over the ranked paths.
    pub mean_supernet_acc: f64,
}

/// Pick the paths to rank: exhaustive when the space fits under the cap,
/// otherwise distinct uniform samples.
pub fn ranking_paths(space: &SpaceSpec, config: &RunConfig) -> Result<Vec<PathSpec>> {
    if space.total_paths() <= config.rank.enumerate_cap as u128 {
        enumerate(space, config.rank.enumerate_cap)
    } else {
        let mut rng = rng::stream(config.train.seed, "rank_paths");
        let mut out: Vec<PathSpec> = Vec::with_capacity(config.rank.n_paths);
        let mut tries = 0;
        while out.len() < config.rank.n_paths {
            tries += 1;
            if tries > config.rank.n_paths * 10_000 {
                return Err(Error::Infeasible(format!(
                    "could not draw {} distinct paths",
                    config.rank.n_paths
                )));
            }
            let p = sample_uniform(space, &mut rng);
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Supernet-inherited accuracies of a set of paths on the full val split.
pub fn supernet_accuracies(
    net: &Supernet<f32>,
    dataset: &Dataset,
    paths: &[PathSpec],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let order: Vec<usize> = (0..dataset.val.len()).collect();
    paths
        .iter()
        .map(|p| Ok(evaluate_accuracy(net, p, &dataset.val, &order, batch_size)?.accuracy()))
        .collect()
}

/// Train (or reuse) a supernet, rank paths by inherited accuracy against
/// stand-alone ground truth, and report the rank correlation.
pub fn rank_experiment(
    config: &RunConfig,
    dataset: &Dataset,
    net: Option<&Supernet<f32>>,
) -> Result<RankReport> {
    let trained;
    let net = match net {
        Some(n) => n,
        None => {
            let mut run = crate::trainer::SearchRun::new(config, dataset)?;
            let mut sink = MetricsWriter::sink();
            while run.state.step < config.train.steps {
                run.train_step(&mut sink)?;
                run.maybe_meta_update(&mut sink)?;
            }
            trained = run.state.net;
            &trained
        }
    };
    let paths = ranking_paths(&net.space, config)?;
    let supernet_acc = supernet_accuracies(net, dataset, &paths, config.train.batch_size)?;
    let mut scratch_acc = Vec::with_capacity(paths.len());
    let mut scratch_per_seed = Vec::with_capacity(paths.len());
    for p in &paths {
        let (med, per_seed) = scratch_accuracy(&net.space, p, dataset, &config.scratch)?;
        scratch_acc.push(med);
        scratch_per_seed.push(per_seed);
    }
    let tau = kendall_tau(&supernet_acc, &scratch_acc)?;
    let mean = supernet_acc.iter().sum::<f64>() / supernet_acc.len() as f64;
    Ok(RankReport {
        paths: paths.iter().map(|p| p.encode()).collect(),
        supernet_acc,
        scratch_acc,
        scratch_per_seed,
        kendall_tau: tau,
        mean_supernet_acc: mean,
    })
}

/// Which single knob an ablation sweeps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblationKnob {
    /// Board capacity K; each grid point is a full rank experiment.
    BoardSize(Vec<usize>),
    /// Validation-subset size; `None` means the full val split. Each grid
    /// point correlates subset-based against full-val path rankings.
    ValSubset(Vec<Option<usize>>),
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub knob: String,
    pub value: String,
    pub tau: f64,
    pub seconds: f64,
}

/// Rank paths by subset-prefix accuracy against full-val accuracy and
/// correlate the two orders.
pub fn subset_rank_tau(
    net: &Supernet<f32>,
    dataset: &Dataset,
    paths: &[PathSpec],
    subset_size: Option<usize>,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let full_order = crate::data::val_order(dataset.val.len(), seed);
    let size = subset_size.unwrap_or(dataset.val.len()).min(dataset.val.len());
    let subset = &full_order[..size];
    let mut sub_acc = Vec::with_capacity(paths.len());
    let mut full_acc = Vec::with_capacity(paths.len());
    for p in paths {
        sub_acc.push(evaluate_accuracy(net, p, &dataset.val, subset, batch_size)?.accuracy());
        full_acc.push(
            evaluate_accuracy(net, p, &dataset.val, &full_order, batch_size)?.accuracy(),
        );
    }
    kendall_tau(&sub_acc, &full_acc)
}

/// Sweep one knob and return one row per grid point.
pub fn ablation_driver(
    base: &RunConfig,
    dataset: &Dataset,
    knob: &AblationKnob,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    match knob {
        AblationKnob::BoardSize(values) => {
            for &k in values {
                let start = Instant::now();
                let mut cfg = base.clone();
                cfg.train.board_size = k;
                cfg.validate()?;
                let report = rank_experiment(&cfg, dataset, None)?;
                rows.push(AblationRow {
                    knob: "board_size".into(),
                    value: k.to_string(),
                    tau: report.kendall_tau,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
        AblationKnob::ValSubset(values) => {
            // One trained supernet serves every subset size.
            let mut run = crate::trainer::SearchRun::new(base, dataset)?;
            let mut sink = MetricsWriter::sink();
            while run.state.step < base.train.steps {
                run.train_step(&mut sink)?;
                run.maybe_meta_update(&mut sink)?;
            }
            let net = run.state.net;
            let paths = ranking_paths(&net.space, base)?;
            for &size in values {
                let start = Instant::now();
                let tau = subset_rank_tau(
                    &net,
                    dataset,
                    &paths,
                    size,
                    base.train.seed,
                    base.train.batch_size,
                )?;
                rows.push(AblationRow {
                    knob: "val_subset".into(),
                    value: size.map_or("full".into(), |s| s.to_string()),
                    tau,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// Render ablation rows as CSV.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("knob,value,tau,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.3}\n", r.knob, r.value, r.tau, r.seconds));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::micro_preset;
    use crate::space::build_space;

    #[test]
    fn kendall_identity_and_reversal() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn kendall_single_swap_closed_form() {
        // 6 pairs, exactly 1 discordant: (5 - 1) / 6.
        let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((tau - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_errors() {
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn kendall_monotone_transform_invariance() {
        let xs = [0.1, 0.7, 0.3, 0.9, 0.5];
        let ys = [1.0, 0.2, 0.8, 0.4, 0.6];
        let base = kendall_tau(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
        let ys2: Vec<f64> = ys.iter().map(|v| 3.0 * v + 1.0).collect();
        let t2 = kendall_tau(&xs2, &ys2).unwrap();
        assert!((base - t2).abs() < 1e-12);
    }

    #[test]
    fn scratch_training_is_deterministic_per_seed() {
        let mut cfg = micro_preset();
        cfg.scratch.steps = 10;
        cfg.scratch.batch_size = 8;
        if let crate::config::DatasetSource::Synthetic(s) = &mut cfg.dataset {
            s.n_train = 32;
            s.n_val = 32;
        }
        let ds = cfg.load_dataset().unwrap();
        let space = build_space(&cfg.space).unwrap();
        let p = PathSpec::new(vec![1, 2, 1]);
        let a = train_from_scratch(&space, &p, &ds, &cfg.scratch, 42).unwrap();
        let b = train_from_scratch(&space, &p, &ds, &cfg.scratch, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_step_scratch_accuracy_near_chance() {
        let mut cfg = micro_preset();
        cfg.scratch.steps = 0;
        if let crate::config::DatasetSource::Synthetic(s) = &mut cfg.dataset {
            s.n_train = 32;
            s.n_val = 512;
        }
        let ds = cfg.load_dataset().unwrap();
        let space = build_space(&cfg.space).unwrap();
        let p = PathSpec::new(vec![2, 2, 2]);
        let acc = train_from_scratch(&space, &p, &ds, &cfg.scratch, 3).unwrap();
        let sigma = (0.25 * 0.75 / 512.0_f64).sqrt();
        assert!((acc - 0.25).abs() < 3.0 * sigma + 1e-9, "accuracy {}", acc);
    }

    #[test]
    fn injected_equal_rankings_give_tau_one() {
        // A rank report where ground truth equals the supernet ordering.
        let xs = [0.5, 0.625, 0.75, 0.875];
        assert_eq!(kendall_tau(&xs, &xs).unwrap(), 1.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        let mut v = vec![3.0, 1.0, 2.0];
        assert_eq!(median(&mut v), 2.0);
        let mut v = vec![4.0, 1.0, 2.0, 3.0];
        assert_eq!(median(&mut v), 2.5);
    }
}
