//! The prioritized path board: a fixed-size archive of high-accuracy,
//! low-complexity paths maintained under selective competition.

use rand_chacha::ChaCha8Rng;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::space::{count_flops, enumerate, sample_in_flops_range, PathSpec, SpaceSpec};
use crate::supernet::Supernet;

/// Correct/total counts from one accuracy evaluation. Counts rather than a
/// ratio so checkpoints can round-trip the value exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub correct: u64,
    pub total: u64,
}

impl EvalStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// One archived path with its accuracy at insertion time.
#[derive(Clone, Debug, PartialEq)]
pub struct BoardEntry {
    pub path: PathSpec,
    pub stats: EvalStats,
    pub flops: u64,
}

impl BoardEntry {
    pub fn accuracy(&self) -> f64 {
        self.stats.accuracy()
    }
}

/// Outcome of offering a candidate to the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertResult {
    /// The candidate displaced the entry at this slot.
    Replaced(usize),
    Rejected,
}

/// Fixed-capacity archive of `K` distinct paths inside a flops band.
#[derive(Clone, Debug, PartialEq)]
pub struct Board {
    entries: Vec<BoardEntry>,
    pub flops_min: u64,
    pub flops_max: u64,
}

impl Board {
    /// Seed the board with `k` distinct random paths inside the flops band.
    /// Their accuracy starts at zero so any evaluated candidate can displace
    /// an unevaluated seed.
    pub fn init(
        space: &SpaceSpec,
        k: usize,
        flops_min: u64,
        flops_max: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Board> {
        if k == 0 {
            return Err(Error::Config {
                field: "board.size".into(),
                message: "board needs at least one slot".into(),
            });
        }
        if flops_min > flops_max {
            return Err(Error::Config {
                field: "board.flops_min".into(),
                message: format!("min {} exceeds max {}", flops_min, flops_max),
            });
        }
        const ENUM_CAP: u64 = 65_536;
        let mut paths: Vec<PathSpec> = Vec::with_capacity(k);
        if space.total_paths() <= ENUM_CAP as u128 {
            // Small space: count feasible paths exactly so infeasible K fails
            // deterministically rather than after a try budget.
            let feasible: Vec<PathSpec> = enumerate(space, ENUM_CAP)?
                .into_iter()
                .filter(|p| {
                    count_flops(space, p)
                        .map(|f| f >= flops_min && f <= flops_max)
                        .unwrap_or(false)
                })
                .collect();
            if feasible.len() < k {
                return Err(Error::Infeasible(format!(
                    "{} feasible paths in flops band, board needs {}",
                    feasible.len(),
                    k
                )));
            }
            let picked = rand::seq::index::sample(rng, feasible.len(), k);
            paths.extend(picked.iter().map(|i| feasible[i].clone()));
        } else {
            let mut tries = 0;
            while paths.len() < k {
                if tries > k * 10_000 {
                    return Err(Error::Infeasible(format!(
                        "could not draw {} distinct paths in flops band",
                        k
                    )));
                }
                tries += 1;
                let p = sample_in_flops_range(space, rng, flops_min, flops_max, 10_000)?;
                if !paths.contains(&p) {
                    paths.push(p);
                }
            }
        }
        let entries = paths
            .into_iter()
            .map(|path| {
                let flops = count_flops(space, &path)?;
                Ok(BoardEntry {
                    path,
                    stats: EvalStats::default(),
                    flops,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Board {
            entries,
            flops_min,
            flops_max,
        })
    }

    /// Rebuild a board from checkpointed entries, re-validating invariants.
    pub fn from_entries(entries: Vec<BoardEntry>, flops_min: u64, flops_max: u64) -> Result<Board> {
        if entries.is_empty() {
            return Err(Error::Config {
                field: "board.size".into(),
                message: "board needs at least one slot".into(),
            });
        }
        for e in &entries {
            if e.flops < flops_min || e.flops > flops_max {
                return Err(Error::Checkpoint(format!(
                    "board entry {} outside flops band [{}, {}]",
                    e.path.encode(),
                    flops_min,
                    flops_max
                )));
            }
        }
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if entries[i].path == entries[j].path {
                    return Err(Error::Checkpoint(format!(
                        "duplicate board path {}",
                        entries[i].path.encode()
                    )));
                }
            }
        }
        Ok(Board {
            entries,
            flops_min,
            flops_max,
        })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[BoardEntry] {
        &self.entries
    }

    pub fn contains_path(&self, path: &PathSpec) -> bool {
        self.entries.iter().any(|e| &e.path == path)
    }

    /// Selective competition: the candidate may only displace an entry it
    /// matches or beats on accuracy while matching or undercutting on flops.
    /// Among qualifying entries the weakest goes first: lowest accuracy,
    /// then highest flops, then lowest slot index. Duplicates of a path
    /// already on the board are rejected outright.
    pub fn try_insert(&mut self, candidate: BoardEntry) -> InsertResult {
        if candidate.flops < self.flops_min || candidate.flops > self.flops_max {
            return InsertResult::Rejected;
        }
        if self.contains_path(&candidate.path) {
            return InsertResult::Rejected;
        }
        let acc = candidate.accuracy();
        let mut target: Option<usize> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if acc >= e.accuracy() && candidate.flops <= e.flops {
                let better = match target {
                    None => true,
                    Some(t) => {
                        let te = &self.entries[t];
                        e.accuracy() < te.accuracy()
                            || (e.accuracy() == te.accuracy() && e.flops > te.flops)
                    }
                };
                if better {
                    target = Some(i);
                }
            }
        }
        match target {
            Some(i) => {
                self.entries[i] = candidate;
                InsertResult::Replaced(i)
            }
            None => InsertResult::Rejected,
        }
    }

    /// Summary numbers for the metrics log.
    pub fn best_accuracy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.accuracy())
            .fold(0.0, f64::max)
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.entries.iter().map(|e| e.accuracy()).sum::<f64>() / self.entries.len() as f64
    }
}

/// Top-1 accuracy of a path over a fixed index set of a split, evaluated
/// with inherited weights in deterministic order.
pub fn evaluate_accuracy<E: Scalar>(
    net: &Supernet<E>,
    path: &PathSpec,
    split: &Split,
    indices: &[usize],
    batch_size: usize,
) -> Result<EvalStats> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("validation subset".into()));
    }
    let mut correct = 0u64;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = split.gather(chunk);
        let (logits, _) = net.forward_path(path, &batch.cast::<E>())?;
        let preds = logits.argmax_rows()?;
        correct += preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count() as u64;
    }
    Ok(EvalStats {
        correct,
        total: indices.len() as u64,
    })
}

/// Re-evaluate every entry on the full validation order with current
/// weights and return the winner (ties: lower flops, then lower slot).
pub fn final_selection<E: Scalar>(
    board: &Board,
    net: &Supernet<E>,
    split: &Split,
    full_order: &[usize],
    batch_size: usize,
) -> Result<(PathSpec, Vec<EvalStats>)> {
    if full_order.is_empty() {
        return Err(Error::EmptyDataset("validation set".into()));
    }
    let stats: Vec<EvalStats> = board
        .entries()
        .iter()
        .map(|e| evaluate_accuracy(net, &e.path, split, full_order, batch_size))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..stats.len() {
        let (a, b) = (stats[i].accuracy(), stats[best].accuracy());
        let better = a > b
            || (a == b && board.entries()[i].flops < board.entries()[best].flops);
        if better {
            best = i;
        }
    }
    Ok((board.entries()[best].path.clone(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::space::{build_space, micro_space_config};

    fn micro_space() -> SpaceSpec {
        build_space(&micro_space_config()).unwrap()
    }

    fn entry(path: Vec<usize>, correct: u64, total: u64, flops: u64) -> BoardEntry {
        BoardEntry {
            path: PathSpec::new(path),
            stats: EvalStats { correct, total },
            flops,
        }
    }

    fn two_entry_board() -> Board {
        Board {
            entries: vec![entry(vec![0, 0, 1], 60, 100, 100), entry(vec![0, 1, 0], 50, 100, 90)],
            flops_min: 0,
            flops_max: 1_000,
        }
    }

    #[test]
    fn init_draws_distinct_feasible_paths_with_zero_accuracy() {
        let space = micro_space();
        let mut rng = stream(1, "board_init");
        let board = Board::init(&space, 10, 0, u64::MAX, &mut rng).unwrap();
        assert_eq!(board.k(), 10);
        let mut codes: Vec<String> = board.entries().iter().map(|e| e.path.encode()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 10);
        for e in board.entries() {
            assert_eq!(e.accuracy(), 0.0);
            assert_eq!(e.flops, count_flops(&space, &e.path).unwrap());
        }
    }

    #[test]
    fn init_single_slot_and_infeasible_k() {
        let space = micro_space();
        let mut rng = stream(2, "board_init");
        let board = Board::init(&space, 1, 0, u64::MAX, &mut rng).unwrap();
        assert_eq!(board.k(), 1);
        // The micro space has 27 paths; asking for more must fail.
        assert!(Board::init(&space, 28, 0, u64::MAX, &mut rng).is_err());
    }

    #[test]
    fn insert_replaces_dominated_entry() {
        let mut board = two_entry_board();
        let res = board.try_insert(entry(vec![1, 0, 0], 55, 100, 80));
        assert_eq!(res, InsertResult::Replaced(1));
        assert_eq!(board.entries()[1].flops, 80);
    }

    #[test]
    fn insert_rejects_higher_flops_candidate() {
        let mut board = two_entry_board();
        let res = board.try_insert(entry(vec![1, 0, 0], 70, 100, 120));
        assert_eq!(res, InsertResult::Rejected);
    }

    #[test]
    fn dominating_candidate_displaces_weakest() {
        let mut board = two_entry_board();
        // Qualifies against both entries; the lower-accuracy (.50, 90) one goes.
        let res = board.try_insert(entry(vec![1, 0, 0], 65, 100, 80));
        assert_eq!(res, InsertResult::Replaced(1));
    }

    #[test]
    fn equal_accuracy_targets_highest_flops_then_lowest_index() {
        let mut board = Board {
            entries: vec![
                entry(vec![0, 0, 1], 50, 100, 90),
                entry(vec![0, 1, 0], 50, 100, 100),
                entry(vec![0, 1, 1], 50, 100, 100),
            ],
            flops_min: 0,
            flops_max: 1_000,
        };
        let res = board.try_insert(entry(vec![1, 0, 0], 50, 100, 80));
        assert_eq!(res, InsertResult::Replaced(1));
    }

    #[test]
    fn duplicate_path_rejected_even_if_dominating() {
        let mut board = two_entry_board();
        let res = board.try_insert(entry(vec![0, 0, 1], 99, 100, 50));
        assert_eq!(res, InsertResult::Rejected);
    }

    #[test]
    fn out_of_band_candidate_rejected() {
        let mut board = two_entry_board();
        board.flops_max = 95;
        // Would dominate the slot-0 entry, but sits above the band.
        let res = board.try_insert(entry(vec![1, 0, 0], 99, 100, 96));
        assert_eq!(res, InsertResult::Rejected);
    }

    #[test]
    fn replacement_never_lowers_slot_accuracy() {
        let mut board = two_entry_board();
        let mut rng = stream(3, "ins");
        use rand::Rng;
        for _ in 0..500 {
            let cand = entry(
                vec![
                    rng.random_range(0..3),
                    rng.random_range(0..3),
                    rng.random_range(0..3),
                ],
                rng.random_range(0..=100),
                100,
                rng.random_range(50..150),
            );
            let before: Vec<f64> = board.entries().iter().map(|e| e.accuracy()).collect();
            let acc = cand.accuracy();
            if let InsertResult::Replaced(i) = board.try_insert(cand) {
                assert!(acc >= before[i]);
            }
            assert_eq!(board.k(), 2);
        }
    }

    #[test]
    fn final_selection_prefers_accuracy_then_low_flops() {
        let space = micro_space();
        let mut rng = stream(4, "board_init");
        let net: Supernet<f32> = Supernet::init(space.clone(), &mut rng, 1.0);
        let ds = crate::data::gen_synthetic(&crate::data::SyntheticSpec {
            classes: 4,
            resolution: 8,
            n_train: 16,
            n_val: 16,
            noise: 0.1,
            seed: 5,
        })
        .unwrap();
        let order: Vec<usize> = (0..ds.val.len()).collect();

        let board = Board {
            entries: vec![entry(vec![0, 0, 0], 0, 0, 999), entry(vec![0, 0, 1], 0, 0, 998)],
            flops_min: 0,
            flops_max: 1_000,
        };
        let (best, stats) = final_selection(&board, &net, &ds.val, &order, 8).unwrap();
        assert_eq!(stats.len(), 2);
        // The winner is the argmax of the freshly computed accuracies with
        // the lower-flops tie-break.
        let (a0, a1) = (stats[0].accuracy(), stats[1].accuracy());
        let expected = if a1 > a0 || (a1 == a0 && 998 < 999) {
            &board.entries()[1].path
        } else {
            &board.entries()[0].path
        };
        assert_eq!(&best, expected);
    }

    #[test]
    fn single_entry_board_returns_it() {
        let space = micro_space();
        let mut rng = stream(6, "board_init");
        let net: Supernet<f32> = Supernet::init(space, &mut rng, 1.0);
        let ds = crate::data::gen_synthetic(&crate::data::SyntheticSpec {
            classes: 4,
            resolution: 8,
            n_train: 16,
            n_val: 8,
            noise: 0.0,
            seed: 5,
        })
        .unwrap();
        let order: Vec<usize> = (0..ds.val.len()).collect();
        let board = Board {
            entries: vec![entry(vec![1, 1, 1], 0, 0, 10)],
            flops_min: 0,
            flops_max: 100,
        };
        let (best, _) = final_selection(&board, &net, &ds.val, &order, 4).unwrap();
        assert_eq!(best, PathSpec::new(vec![1, 1, 1]));
    }

    #[test]
    fn random_net_accuracy_near_chance_on_balanced_subset() {
        let space = micro_space();
        let mut rng = stream(7, "board_init");
        let net: Supernet<f32> = Supernet::init(space, &mut rng, 1.0);
        let ds = crate::data::gen_synthetic(&crate::data::SyntheticSpec {
            classes: 4,
            resolution: 8,
            n_train: 16,
            n_val: 512,
            noise: 0.2,
            seed: 9,
        })
        .unwrap();
        let order: Vec<usize> = (0..ds.val.len()).collect();
        let path = PathSpec::new(vec![1, 1, 1]);
        let stats = evaluate_accuracy(&net, &path, &ds.val, &order, 32).unwrap();
        // 3 sigma around 1/C for a binomial with n=512, p=0.25.
        let sigma = (0.25 * 0.75 / 512.0_f64).sqrt();
        assert!((stats.accuracy() - 0.25).abs() < 3.0 * sigma + 1e-9,
            "accuracy {} too far from chance", stats.accuracy());
    }

    #[test]
    fn empty_subset_is_an_error() {
        let space = micro_space();
        let mut rng = stream(8, "board_init");
        let net: Supernet<f32> = Supernet::init(space, &mut rng, 1.0);
        let ds = crate::data::gen_synthetic(&crate::data::SyntheticSpec {
            classes: 4,
            resolution: 8,
            n_train: 16,
            n_val: 8,
            noise: 0.0,
            seed: 5,
        })
        .unwrap();
        let path = PathSpec::new(vec![0, 0, 0]);
        assert!(evaluate_accuracy(&net, &path, &ds.val, &[], 4).is_err());
    }
}
