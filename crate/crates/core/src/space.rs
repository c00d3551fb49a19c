//! Choice-block search space: macro layout, path encoding, uniform
//! sampling, and multiply-add counting.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LayerSpec;

/// One candidate operator for a choice block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OperatorSpec {
    /// Inverted bottleneck: 1x1 expand, depthwise kxk, 1x1 project,
    /// residual when shapes permit.
    MbConv { kernel: usize, expansion: usize },
    /// Residual bottleneck with a fixed 3x3 core.
    ResBlock,
    /// Plain 2-d convolution.
    Conv2d { kernel: usize },
    /// Identity; encodes elastic depth.
    Skip,
}

impl OperatorSpec {
    pub fn is_skip(&self) -> bool {
        matches!(self, OperatorSpec::Skip)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OperatorSpec::MbConv { kernel, expansion } => {
                if ![3, 5, 7].contains(&kernel) {
                    return Err(Error::Config {
                        field: "operator.kernel".into(),
                        message: format!("mbconv kernel must be 3, 5 or 7, got {}", kernel),
                    });
                }
                if ![2, 4, 6].contains(&expansion) {
                    return Err(Error::Config {
                        field: "operator.expansion".into(),
                        message: format!("mbconv expansion must be 2, 4 or 6, got {}", expansion),
                    });
                }
            }
            OperatorSpec::Conv2d { kernel } => {
                if ![1, 3, 5].contains(&kernel) {
                    return Err(Error::Config {
                        field: "operator.kernel".into(),
                        message: format!("conv kernel must be 1, 3 or 5, got {}", kernel),
                    });
                }
            }
            OperatorSpec::ResBlock | OperatorSpec::Skip => {}
        }
        Ok(())
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorSpec::MbConv { kernel, expansion } => {
                write!(f, "mbconv-k{}-e{}", kernel, expansion)
            }
            OperatorSpec::ResBlock => write!(f, "resblock"),
            OperatorSpec::Conv2d { kernel } => write!(f, "conv-k{}", kernel),
            OperatorSpec::Skip => write!(f, "skip"),
        }
    }
}

impl From<OperatorSpec> for String {
    fn from(op: OperatorSpec) -> String {
        op.to_string()
    }
}

impl std::str::FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |s: &str| Error::Config {
            field: "operator".into(),
            message: format!("unrecognized operator {:?}", s),
        };
        let op = if s == "skip" {
            OperatorSpec::Skip
        } else if s == "resblock" {
            OperatorSpec::ResBlock
        } else if let Some(rest) = s.strip_prefix("conv-k") {
            OperatorSpec::Conv2d {
                kernel: rest.parse().map_err(|_| bad(s))?,
            }
        } else if let Some(rest) = s.strip_prefix("mbconv-k") {
            let (k, e) = rest.split_once("-e").ok_or_else(|| bad(s))?;
            OperatorSpec::MbConv {
                kernel: k.parse().map_err(|_| bad(s))?,
                expansion: e.parse().map_err(|_| bad(s))?,
            }
        } else {
            return Err(bad(s));
        };
        op.validate()?;
        Ok(op)
    }
}

impl TryFrom<String> for OperatorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One stage of the macro layout: a group of choice blocks sharing a
/// channel count. The lead block applies the stage stride and channel
/// change; blocks at depth `min_repeat` and beyond may choose skip for
/// elastic depth (`min_repeat: 0` makes the whole stage elastic where
/// shapes permit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    #[serde(default)]
    pub min_repeat: usize,
    pub max_repeat: usize,
    pub stride: usize,
    pub operators: Vec<OperatorSpec>,
}

fn default_one() -> usize {
    1
}

/// User-facing description of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub input_resolution: usize,
    #[serde(default = "default_one")]
    pub input_channels: usize,
    pub classes: usize,
    pub stem_channels: usize,
    #[serde(default = "default_one")]
    pub stem_stride: usize,
    pub head_channels: usize,
    pub stages: Vec<StageConfig>,
}

/// A single choice block with its resolved shapes and admissible operators.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub ops: Vec<OperatorSpec>,
}

/// Fully resolved search space layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceSpec {
    pub input_resolution: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub head_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Channel count and spatial size entering the head.
    pub feature_channels: usize,
    pub feature_hw: (usize, usize),
}

/// A concrete architecture: one operator index per choice block.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathSpec {
    pub choices: Vec<usize>,
}

impl PathSpec {
    pub fn new(choices: Vec<usize>) -> Self {
        PathSpec { choices }
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Compact dash-separated encoding, e.g. `[0,2,1]` -> `"0-2-1"`.
    pub fn encode(&self) -> String {
        self.choices
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn decode(s: &str, space: &SpaceSpec) -> Result<PathSpec> {
        let choices: Vec<usize> = if s.is_empty() {
            Vec::new()
        } else {
            s.split('-')
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| Error::InvalidPath(format!("bad index {:?} in {:?}", tok, s)))
                })
                .collect::<Result<_>>()?
        };
        let path = PathSpec::new(choices);
        path.validate(space)?;
        Ok(path)
    }

    pub fn validate(&self, space: &SpaceSpec) -> Result<()> {
        if self.choices.len() != space.blocks.len() {
            return Err(Error::InvalidPath(format!(
                "path has {} choices, space has {} blocks",
                self.choices.len(),
                space.blocks.len()
            )));
        }
        for (i, (&c, block)) in self.choices.iter().zip(&space.blocks).enumerate() {
            if c >= block.ops.len() {
                return Err(Error::InvalidPath(format!(
                    "choice {} out of range for block {} ({} operators)",
                    c,
                    i,
                    block.ops.len()
                )));
            }
        }
        Ok(())
    }
}

/// Resolve a space config into concrete blocks.
///
/// Skip is admissible only where the identity is shape-consistent: never on
/// a block that changes stride or channel count, and never below a stage's
/// `min_repeat` depth.
pub fn build_space(config: &SpaceConfig) -> Result<SpaceSpec> {
    if config.input_resolution == 0 {
        return Err(Error::Config {
            field: "space.input_resolution".into(),
            message: "must be positive".into(),
        });
    }
    if config.classes < 2 {
        return Err(Error::Config {
            field: "space.classes".into(),
            message: "need at least two classes".into(),
        });
    }
    for (field, ch) in [
        ("space.input_channels", config.input_channels),
        ("space.stem_channels", config.stem_channels),
        ("space.head_channels", config.head_channels),
    ] {
        if ch == 0 {
            return Err(Error::Config {
                field: field.into(),
                message: "must be positive".into(),
            });
        }
    }
    if config.stem_stride != 1 && config.stem_stride != 2 {
        return Err(Error::Config {
            field: "space.stem_stride".into(),
            message: format!("stride must be 1 or 2, got {}", config.stem_stride),
        });
    }

    let stem = LayerSpec::conv2d(config.input_channels, config.stem_channels, 3, config.stem_stride);
    let mut hw = stem.out_hw((config.input_resolution, config.input_resolution));
    let mut channels = config.stem_channels;
    let mut blocks = Vec::new();

    for (si, stage) in config.stages.iter().enumerate() {
        let field = |name: &str| format!("space.stages[{}].{}", si, name);
        if stage.channels == 0 {
            return Err(Error::Config {
                field: field("channels"),
                message: "must be positive".into(),
            });
        }
        if stage.stride != 1 && stage.stride != 2 {
            return Err(Error::Config {
                field: field("stride"),
                message: format!("stride must be 1 or 2, got {}", stage.stride),
            });
        }
        if stage.max_repeat == 0 || stage.min_repeat > stage.max_repeat {
            return Err(Error::Config {
                field: field("min_repeat"),
                message: format!(
                    "need min_repeat <= max_repeat and max_repeat >= 1, got {}..{}",
                    stage.min_repeat, stage.max_repeat
                ),
            });
        }
        for op in &stage.operators {
            op.validate()?;
        }
        if !stage.operators.iter().any(|op| !op.is_skip()) {
            return Err(Error::Config {
                field: field("operators"),
                message: "need at least one non-skip operator".into(),
            });
        }
        for r in 0..stage.max_repeat {
            let stride = if r == 0 { stage.stride } else { 1 };
            let in_channels = channels;
            let out_channels = stage.channels;
            let identity_ok =
                stride == 1 && in_channels == out_channels && r >= stage.min_repeat;
            let ops: Vec<OperatorSpec> = stage
                .operators
                .iter()
                .copied()
                .filter(|op| !op.is_skip() || identity_ok)
                .collect();
            let in_hw = hw;
            let out_hw = LayerSpec::conv2d(in_channels, out_channels, 3, stride).out_hw(in_hw);
            blocks.push(BlockSpec {
                in_channels,
                out_channels,
                stride,
                in_hw,
                out_hw,
                ops,
            });
            channels = out_channels;
            hw = out_hw;
        }
    }

    Ok(SpaceSpec {
        input_resolution: config.input_resolution,
        input_channels: config.input_channels,
        classes: config.classes,
        stem_channels: config.stem_channels,
        stem_stride: config.stem_stride,
        head_channels: config.head_channels,
        blocks,
        feature_channels: channels,
        feature_hw: hw,
    })
}

impl SpaceSpec {
    /// Number of distinct paths, as a wide integer so huge spaces don't wrap.
    pub fn total_paths(&self) -> u128 {
        self.blocks
            .iter()
            .map(|b| b.ops.len() as u128)
            .product()
    }
}

/// One step of a compiled path: a primitive layer (optionally owning
/// parameters under `param` + ".weight"/".bias") or residual bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub enum ProgStep {
    Layer {
        param: Option<String>,
        spec: LayerSpec,
        in_hw: (usize, usize),
    },
    /// Push the current activation onto the skip stack.
    SaveSkip,
    /// Pop the skip stack and add it to the current activation.
    AddSkip,
}

/// Straight-line layer program realizing one path through the space.
#[derive(Clone, Debug, PartialEq)]
pub struct PathProgram {
    pub steps: Vec<ProgStep>,
}

impl PathProgram {
    /// Total multiply-adds of the program.
    pub fn macs(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                ProgStep::Layer { spec, in_hw, .. } => spec.macs(*in_hw),
                _ => 0,
            })
            .sum()
    }

    /// Parameter name prefixes owned by this program, in execution order.
    pub fn param_prefixes(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                ProgStep::Layer {
                    param: Some(p), ..
                } => Some(p.clone()),
                _ => None,
            })
            .collect()
    }
}

fn push_layer(
    steps: &mut Vec<ProgStep>,
    param: Option<String>,
    spec: LayerSpec,
    in_hw: (usize, usize),
) -> (usize, (usize, usize)) {
    let out = (spec.out_channels, spec.out_hw(in_hw));
    steps.push(ProgStep::Layer { param, spec, in_hw });
    out
}

/// Layer sequence of one operator instance. `prefix` namespaces its
/// parameters, e.g. `"b3.o1"`.
fn op_steps(steps: &mut Vec<ProgStep>, prefix: &str, block: &BlockSpec, op: &OperatorSpec) {
    let (cin, cout, s) = (block.in_channels, block.out_channels, block.stride);
    let residual = s == 1 && cin == cout;
    match *op {
        OperatorSpec::Skip => {}
        OperatorSpec::MbConv { kernel, expansion } => {
            let mid = cin * expansion;
            if residual {
                steps.push(ProgStep::SaveSkip);
            }
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.expand")),
                LayerSpec::conv2d(cin, mid, 1, 1),
                block.in_hw,
            );
            push_layer(steps, None, LayerSpec::relu(mid), hw);
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.dw")),
                LayerSpec::depthwise(mid, kernel, s),
                hw,
            );
            push_layer(steps, None, LayerSpec::relu(mid), hw);
            push_layer(
                steps,
                Some(format!("{prefix}.project")),
                LayerSpec::conv2d(mid, cout, 1, 1),
                hw,
            );
            if residual {
                steps.push(ProgStep::AddSkip);
            }
        }
        OperatorSpec::ResBlock => {
            let mid = (cout / 4).max(1);
            if residual {
                steps.push(ProgStep::SaveSkip);
            }
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.reduce")),
                LayerSpec::conv2d(cin, mid, 1, 1),
                block.in_hw,
            );
            push_layer(steps, None, LayerSpec::relu(mid), hw);
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.conv")),
                LayerSpec::conv2d(mid, mid, 3, s),
                hw,
            );
            push_layer(steps, None, LayerSpec::relu(mid), hw);
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.expand")),
                LayerSpec::conv2d(mid, cout, 1, 1),
                hw,
            );
            if residual {
                steps.push(ProgStep::AddSkip);
            }
            push_layer(steps, None, LayerSpec::relu(cout), hw);
        }
        OperatorSpec::Conv2d { kernel } => {
            let (_, hw) = push_layer(
                steps,
                Some(format!("{prefix}.conv")),
                LayerSpec::conv2d(cin, cout, kernel, s),
                block.in_hw,
            );
            push_layer(steps, None, LayerSpec::relu(cout), hw);
        }
    }
}

/// Compile a path into the straight-line program of primitive layers,
/// stem and head included.
pub fn compile_path(space: &SpaceSpec, path: &PathSpec) -> Result<PathProgram> {
    path.validate(space)?;
    let mut steps = Vec::new();
    let in_hw = (space.input_resolution, space.input_resolution);
    let (_, hw) = push_layer(
        &mut steps,
        Some("stem.conv".into()),
        LayerSpec::conv2d(space.input_channels, space.stem_channels, 3, space.stem_stride),
        in_hw,
    );
    push_layer(&mut steps, None, LayerSpec::relu(space.stem_channels), hw);

    for (i, (&choice, block)) in path.choices.iter().zip(&space.blocks).enumerate() {
        let op = &block.ops[choice];
        op_steps(&mut steps, &format!("b{i}.o{choice}"), block, op);
    }

    let (_, hw) = push_layer(
        &mut steps,
        Some("head.proj".into()),
        LayerSpec::conv2d(space.feature_channels, space.head_channels, 1, 1),
        space.feature_hw,
    );
    push_layer(&mut steps, None, LayerSpec::relu(space.head_channels), hw);
    let (_, hw) = push_layer(
        &mut steps,
        None,
        LayerSpec::global_avg_pool(space.head_channels),
        hw,
    );
    push_layer(
        &mut steps,
        Some("head.fc".into()),
        LayerSpec::dense(space.head_channels, space.classes),
        hw,
    );
    Ok(PathProgram { steps })
}

/// Multiply-add count of a path, summed over stem, chosen operators and head.
pub fn count_flops(space: &SpaceSpec, path: &PathSpec) -> Result<u64> {
    Ok(compile_path(space, path)?.macs())
}

/// Draw each block's choice independently and uniformly.
pub fn sample_uniform(space: &SpaceSpec, rng: &mut ChaCha8Rng) -> PathSpec {
    let choices = space
        .blocks
        .iter()
        .map(|b| rng.random_range(0..b.ops.len()))
        .collect();
    PathSpec::new(choices)
}

/// Rejection-sample a path whose multiply-add count lies in
/// `[min_flops, max_flops]`.
pub fn sample_in_flops_range(
    space: &SpaceSpec,
    rng: &mut ChaCha8Rng,
    min_flops: u64,
    max_flops: u64,
    max_tries: usize,
) -> Result<PathSpec> {
    if min_flops > max_flops {
        return Err(Error::Config {
            field: "flops_min".into(),
            message: format!("min {} exceeds max {}", min_flops, max_flops),
        });
    }
    for _ in 0..max_tries {
        let path = sample_uniform(space, rng);
        let flops = count_flops(space, &path)?;
        if flops >= min_flops && flops <= max_flops {
            return Ok(path);
        }
    }
    Err(Error::Infeasible(format!(
        "no path with flops in [{}, {}] after {} tries",
        min_flops, max_flops, max_tries
    )))
}

/// All distinct paths in deterministic lexicographic order.
pub fn enumerate(space: &SpaceSpec, cap: u64) -> Result<Vec<PathSpec>> {
    let total = space.total_paths();
    if total > cap as u128 {
        return Err(Error::SpaceTooLarge { total, cap });
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut current = vec![0usize; space.blocks.len()];
    loop {
        out.push(PathSpec::new(current.clone()));
        // Mixed-radix increment with block 0 as the most significant digit.
        let mut i = current.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            current[i] += 1;
            if current[i] < space.blocks[i].ops.len() {
                break;
            }
            current[i] = 0;
        }
    }
}

/// Paper-shaped layout: five stages of elastic-depth choice blocks over the
/// full mobile operator menu. Kept for reference and scale tests.
pub fn paper_shaped_config() -> SpaceConfig {
    let mbconv_menu: Vec<OperatorSpec> = [3, 5, 7]
        .iter()
        .flat_map(|&k| {
            [4, 6]
                .iter()
                .map(move |&e| OperatorSpec::MbConv { kernel: k, expansion: e })
        })
        .chain([OperatorSpec::Skip])
        .collect();
    let stage = |channels, stride| StageConfig {
        channels,
        min_repeat: 4,
        max_repeat: 6,
        stride,
        operators: mbconv_menu.clone(),
    };
    SpaceConfig {
        input_resolution: 224,
        input_channels: 3,
        classes: 1000,
        stem_channels: 16,
        stem_stride: 2,
        head_channels: 1280,
        stages: vec![
            stage(24, 2),
            stage(40, 2),
            stage(80, 1),
            stage(96, 2),
            stage(192, 1),
        ],
    }
}

/// Desk-scale micro space: three constant-channel stages of one block each,
/// three operators per block, 27 enumerable paths.
pub fn micro_space_config() -> SpaceConfig {
    let ops = vec![
        OperatorSpec::Skip,
        OperatorSpec::Conv2d { kernel: 3 },
        OperatorSpec::MbConv { kernel: 3, expansion: 2 },
    ];
    let stage = || StageConfig {
        channels: 4,
        min_repeat: 0,
        max_repeat: 1,
        stride: 1,
        operators: ops.clone(),
    };
    SpaceConfig {
        input_resolution: 8,
        input_channels: 1,
        classes: 4,
        stem_channels: 4,
        stem_stride: 1,
        head_channels: 8,
        stages: vec![stage(), stage(), stage()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::collections::HashMap;

    fn micro_space() -> SpaceSpec {
        build_space(&micro_space_config()).unwrap()
    }

    #[test]
    fn paper_shaped_block_count_in_range() {
        let space = build_space(&paper_shaped_config()).unwrap();
        assert!(space.blocks.len() >= 20 && space.blocks.len() <= 30);
        // Lead blocks change channels, so skip is filtered there; elastic
        // tail blocks keep the full 7-operator menu.
        assert!(space.blocks.iter().any(|b| b.ops.len() == 7));
        assert!(space.blocks.iter().all(|b| !b.ops.is_empty()));
    }

    #[test]
    fn micro_space_has_27_paths() {
        let space = micro_space();
        assert_eq!(space.blocks.len(), 3);
        assert!(space.blocks.iter().all(|b| b.ops.len() == 3));
        assert_eq!(space.total_paths(), 27);
    }

    #[test]
    fn appendix_c_menu_has_eight_operators() {
        let mut config = paper_shaped_config();
        for stage in &mut config.stages {
            stage.operators.push(OperatorSpec::ResBlock);
        }
        assert_eq!(config.stages[0].operators.len(), 8);
        build_space(&config).unwrap();
    }

    #[test]
    fn skip_filtered_on_stride2_and_channel_change() {
        let config = SpaceConfig {
            input_resolution: 8,
            input_channels: 1,
            classes: 2,
            stem_channels: 2,
            stem_stride: 1,
            head_channels: 4,
            stages: vec![StageConfig {
                channels: 4,
                min_repeat: 1,
                max_repeat: 2,
                stride: 2,
                operators: vec![OperatorSpec::Skip, OperatorSpec::Conv2d { kernel: 3 }],
            }],
        };
        let space = build_space(&config).unwrap();
        // Lead block: stride 2 + channel change, skip dropped.
        assert_eq!(space.blocks[0].ops.len(), 1);
        // Second block: shape-preserving and past min_repeat, skip kept.
        assert_eq!(space.blocks[1].ops.len(), 2);
    }

    #[test]
    fn skip_only_stage_rejected() {
        let mut config = micro_space_config();
        config.stages[0].operators = vec![OperatorSpec::Skip];
        assert!(build_space(&config).is_err());
    }

    #[test]
    fn uniform_sampling_is_seeded_and_covers_paths() {
        let space = micro_space();
        let mut rng = stream(9, "sample");
        let a: Vec<PathSpec> = (0..16).map(|_| sample_uniform(&space, &mut rng)).collect();
        let mut rng = stream(9, "sample");
        let b: Vec<PathSpec> = (0..16).map(|_| sample_uniform(&space, &mut rng)).collect();
        assert_eq!(a, b);

        // 27,000 draws: every path lands within +-15% of its expected 1,000.
        let mut rng = stream(1, "sample");
        let mut counts: HashMap<String, usize> = HashMap::new();
        for _ in 0..27_000 {
            *counts.entry(sample_uniform(&space, &mut rng).encode()).or_default() += 1;
        }
        assert_eq!(counts.len(), 27);
        for (_, c) in counts {
            assert!(c >= 850 && c <= 1150, "count {} outside tolerance", c);
        }
    }

    #[test]
    fn degenerate_space_always_samples_same_path() {
        let mut config = micro_space_config();
        for stage in &mut config.stages {
            stage.operators = vec![OperatorSpec::Conv2d { kernel: 3 }];
        }
        let space = build_space(&config).unwrap();
        let mut rng = stream(3, "sample");
        for _ in 0..10 {
            assert_eq!(sample_uniform(&space, &mut rng).choices, vec![0, 0, 0]);
        }
    }

    #[test]
    fn flops_range_sampling() {
        let space = micro_space();
        let mut rng = stream(4, "sample");
        // Unbounded range behaves like uniform sampling.
        let p = sample_in_flops_range(&space, &mut rng, 0, u64::MAX, 100).unwrap();
        p.validate(&space).unwrap();

        // Empty range errors out after max_tries.
        assert!(sample_in_flops_range(&space, &mut rng, 1, 2, 50).is_err());

        // Range covering a known subset only ever yields members of it.
        let all = enumerate(&space, 100).unwrap();
        let mut flops: Vec<u64> = all.iter().map(|p| count_flops(&space, p).unwrap()).collect();
        flops.sort_unstable();
        flops.dedup();
        let cutoff = flops[2];
        let allowed: Vec<String> = all
            .iter()
            .filter(|p| count_flops(&space, p).unwrap() <= cutoff)
            .map(|p| p.encode())
            .collect();
        for _ in 0..50 {
            let p = sample_in_flops_range(&space, &mut rng, 0, cutoff, 1000).unwrap();
            assert!(allowed.contains(&p.encode()));
        }
    }

    #[test]
    fn all_skip_path_costs_stem_plus_head_only() {
        let space = micro_space();
        let all_skip = PathSpec::new(vec![0, 0, 0]);
        assert!(space.blocks.iter().all(|b| b.ops[0].is_skip()));
        let base = count_flops(&space, &all_skip).unwrap();

        // stem conv 3x3 1->4 on 8x8 + head proj 1x1 4->8 on 8x8 + fc 8->4.
        let expected = 8 * 8 * 4 * 9 + 8 * 8 * 8 * 4 + 8 * 4;
        assert_eq!(base, expected as u64);

        // Swapping any skip for a real operator strictly increases flops.
        for b in 0..3 {
            for op in 1..3 {
                let mut choices = vec![0, 0, 0];
                choices[b] = op;
                let f = count_flops(&space, &PathSpec::new(choices)).unwrap();
                assert!(f > base);
            }
        }
    }

    #[test]
    fn enumerate_is_exact_and_capped() {
        let space = micro_space();
        let all = enumerate(&space, 27).unwrap();
        assert_eq!(all.len(), 27);
        let mut seen: Vec<String> = all.iter().map(|p| p.encode()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 27);
        assert!(enumerate(&space, 10).is_err());

        // Lexicographic order.
        assert_eq!(all[0].choices, vec![0, 0, 0]);
        assert_eq!(all[1].choices, vec![0, 0, 1]);
        assert_eq!(all[26].choices, vec![2, 2, 2]);
    }

    #[test]
    fn encode_decode_roundtrip_and_errors() {
        let space = micro_space();
        let p = PathSpec::new(vec![0, 2, 1]);
        assert_eq!(p.encode(), "0-2-1");
        assert_eq!(PathSpec::decode("0-2-1", &space).unwrap(), p);
        assert!(PathSpec::decode("0-9-0", &space).is_err());
        assert!(PathSpec::decode("0-1", &space).is_err());
        assert!(PathSpec::decode("0-x-0", &space).is_err());

        for p in enumerate(&space, 27).unwrap() {
            assert_eq!(PathSpec::decode(&p.encode(), &space).unwrap(), p);
        }
    }

    #[test]
    fn empty_space_decodes_empty_path() {
        let config = SpaceConfig {
            stages: vec![],
            ..micro_space_config()
        };
        let space = build_space(&config).unwrap();
        let p = PathSpec::decode("", &space).unwrap();
        assert!(p.is_empty());
        assert_eq!(space.total_paths(), 1);
    }

    #[test]
    fn operator_string_roundtrip() {
        for s in ["skip", "resblock", "conv-k3", "mbconv-k5-e4"] {
            let op: OperatorSpec = s.parse().unwrap();
            assert_eq!(op.to_string(), s);
        }
        assert!("mbconv-k4-e2".parse::<OperatorSpec>().is_err());
        assert!("conv-k7".parse::<OperatorSpec>().is_err());
        assert!("dwconv".parse::<OperatorSpec>().is_err());
    }
}
