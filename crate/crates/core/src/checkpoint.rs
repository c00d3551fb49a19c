//! Bit-exact run checkpoints.
//!
//! Binary layout, all little-endian: magic `CRM1`, version `u32`, record
//! count `u32`, then named tensor records (name length `u32`, UTF-8 name,
//! rank `u32`, dims `u32` each, payload of 32-bit floats), closed by a
//! `u32` CRC-32 over everything before it.
//!
//! Integers (step counter, RNG state, counts, flops) ride along as tensors
//! of byte values, which 32-bit floats represent exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::board::{Board, BoardEntry, EvalStats};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::matcher::MetaParams;
use crate::numerics::{ParamSet, Tensor};
use crate::rng::{restore, snapshot, RngSnapshot};
use crate::space::{build_space, count_flops, PathSpec};
use crate::supernet::{param_layers_dims, Supernet};
use crate::trainer::TrainState;

const MAGIC: &[u8; 4] = b"CRM1";
const VERSION: u32 = 1;

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn bytes_as_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32).collect()
}

fn f32_as_bytes(vals: &[f32], name: &str) -> Result<Vec<u8>> {
    vals.iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Checkpoint(format!(
                    "record {} holds non-byte value {}",
                    name, v
                )))
            }
        })
        .collect()
}

fn u64_record(out: &mut Vec<u8>, name: &str, value: u64) {
    push_record(out, name, &[8], &bytes_as_f32(&value.to_le_bytes()));
}

fn rng_records(out: &mut Vec<u8>, prefix: &str, snap: &RngSnapshot) {
    push_record(out, &format!("{prefix}.seed"), &[32], &bytes_as_f32(&snap.seed));
    push_record(
        out,
        &format!("{prefix}.pos"),
        &[16],
        &bytes_as_f32(&snap.word_pos.to_le_bytes()),
    );
}

/// Serialize the full train state and atomically replace `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut records: Vec<u8> = Vec::new();
    let mut count: u32 = 0;
    let add =
        |records: &mut Vec<u8>, count: &mut u32, name: &str, dims: &[usize], data: &[f32]| {
            push_record(records, name, dims, data);
            *count += 1;
        };

    let mut body = Vec::new();
    u64_record(&mut body, "state.step", state.step as u64);
    count += 1;
    for (name, t) in state.net.params.iter() {
        add(&mut body, &mut count, &format!("net.{name}"), t.dims(), t.data());
    }
    for (name, t) in state.meta.to_param_set().iter() {
        add(&mut body, &mut count, name, t.dims(), t.data());
    }
    if let Some(vel) = &state.velocity {
        for (name, t) in vel.iter() {
            add(&mut body, &mut count, &format!("vel.{name}"), t.dims(), t.data());
        }
    }
    for (k, entry) in state.board.entries().iter().enumerate() {
        let choices: Vec<f32> = entry.path.choices.iter().map(|&c| c as f32).collect();
        add(
            &mut body,
            &mut count,
            &format!("board.{k}.path"),
            &[choices.len()],
            &choices,
        );
        let mut stats = entry.stats.correct.to_le_bytes().to_vec();
        stats.extend_from_slice(&entry.stats.total.to_le_bytes());
        add(
            &mut body,
            &mut count,
            &format!("board.{k}.stats"),
            &[16],
            &bytes_as_f32(&stats),
        );
        u64_record(&mut body, &format!("board.{k}.flops"), entry.flops);
        count += 1;
    }
    rng_records(&mut body, "rng.sample", &snapshot(&state.sample_rng));
    rng_records(&mut body, "rng.batch", &snapshot(&state.batch_rng));
    rng_records(&mut body, "rng.val_batch", &snapshot(&state.val_batch_rng));
    count += 6;

    records.extend_from_slice(MAGIC);
    records.extend_from_slice(&VERSION.to_le_bytes());
    records.extend_from_slice(&count.to_le_bytes());
    records.extend_from_slice(&body);
    let crc = crc32fast::hash(&records);
    records.extend_from_slice(&crc.to_le_bytes());

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &records)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Record {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn parse_records(bytes: &[u8]) -> Result<BTreeMap<String, Record>> {
    let err = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 {
        return Err(err("file too short"));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(err("checksum failure"));
    }
    if &payload[0..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let version = u32::from_le_bytes(payload[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file {}, supported {}",
            version, VERSION
        )));
    }
    let count = u32::from_le_bytes(payload[8..12].try_into().unwrap()) as usize;
    let mut offset = 12;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
        let s = payload
            .get(*offset..*offset + n)
            .ok_or_else(|| err("truncated record"))?;
        *offset += n;
        Ok(s)
    };
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut offset, name_len)?.to_vec())
            .map_err(|_| err("record name not UTF-8"))?;
        let rank = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = dims.iter().product();
        let raw = take(&mut offset, len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if records.insert(name.clone(), Record { dims, data }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {}", name)));
        }
    }
    if offset != payload.len() {
        return Err(err("trailing bytes after records"));
    }
    Ok(records)
}

fn get<'a>(records: &'a BTreeMap<String, Record>, name: &str) -> Result<&'a Record> {
    records
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing record {}", name)))
}

fn read_u64(records: &BTreeMap<String, Record>, name: &str) -> Result<u64> {
    let r = get(records, name)?;
    let bytes = f32_as_bytes(&r.data, name)?;
    let arr: [u8; 8] = bytes
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint(format!("record {} is not a u64", name)))?;
    Ok(u64::from_le_bytes(arr))
}

fn read_rng(records: &BTreeMap<String, Record>, prefix: &str) -> Result<rand_chacha::ChaCha8Rng> {
    let seed_rec = get(records, &format!("{prefix}.seed"))?;
    let seed_bytes = f32_as_bytes(&seed_rec.data, prefix)?;
    let seed: [u8; 32] = seed_bytes
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint(format!("{} seed is not 32 bytes", prefix)))?;
    let pos_rec = get(records, &format!("{prefix}.pos"))?;
    let pos_bytes = f32_as_bytes(&pos_rec.data, prefix)?;
    let pos128: [u8; 16] = pos_bytes
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint(format!("{} position is not 16 bytes", prefix)))?;
    Ok(restore(&RngSnapshot {
        seed,
        word_pos: u128::from_le_bytes(pos128),
    }))
}

/// Load a checkpoint and rebuild the train state against a config. The
/// config's space must match the shapes stored in the file.
pub fn load_checkpoint(path: &Path, config: &RunConfig) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    let records = parse_records(&bytes)?;
    let space = build_space(&config.space)?;

    // Shape check: the stored network parameters must match the space
    // layer for layer.
    let mut params: ParamSet<f32> = ParamSet::new();
    for (name, dims) in param_layers_dims(&space) {
        let key = format!("net.{name}");
        let rec = records.get(&key).ok_or_else(|| {
            Error::Checkpoint(format!("space shape mismatch: missing {}", key))
        })?;
        if rec.dims != dims {
            return Err(Error::Checkpoint(format!(
                "space shape mismatch: {} stored {:?}, space wants {:?}",
                key, rec.dims, dims
            )));
        }
        params.insert(name, Tensor::new(rec.dims.clone(), rec.data.clone())?);
    }
    let stored_net: usize = records.keys().filter(|k| k.starts_with("net.")).count();
    if stored_net != params.len() {
        return Err(Error::Checkpoint(format!(
            "space shape mismatch: {} stored parameters, space wants {}",
            stored_net,
            params.len()
        )));
    }

    let meta_set: ParamSet<f32> = ["meta.l1.weight", "meta.l1.bias", "meta.l2.weight", "meta.l2.bias"]
        .iter()
        .map(|&name| {
            let rec = get(&records, name)?;
            Ok((
                name.to_string(),
                Tensor::new(rec.dims.clone(), rec.data.clone())?,
            ))
        })
        .collect::<Result<_>>()?;
    let meta = MetaParams::from_param_set(&meta_set)?;
    if meta.classes() != space.classes || meta.hidden() != config.train.meta_hidden {
        return Err(Error::Checkpoint(format!(
            "meta shape mismatch: stored {}x{}, config wants {}x{}",
            meta.hidden(),
            meta.classes(),
            config.train.meta_hidden,
            space.classes
        )));
    }

    let mut velocity: Option<ParamSet<f32>> = None;
    let vel_names: Vec<String> = records
        .keys()
        .filter(|k| k.starts_with("vel."))
        .cloned()
        .collect();
    if !vel_names.is_empty() {
        let mut v = ParamSet::new();
        for key in vel_names {
            let rec = &records[&key];
            v.insert(
                key.trim_start_matches("vel.").to_string(),
                Tensor::new(rec.dims.clone(), rec.data.clone())?,
            );
        }
        velocity = Some(v);
    } else if config.train.momentum > 0.0 {
        velocity = Some(ParamSet::new());
    }

    let mut entries = Vec::new();
    for k in 0.. {
        let key = format!("board.{k}.path");
        let Some(rec) = records.get(&key) else { break };
        let choices: Vec<usize> = rec.data.iter().map(|&v| v as usize).collect();
        let path = PathSpec::new(choices);
        path.validate(&space)
            .map_err(|e| Error::Checkpoint(format!("board path invalid: {}", e)))?;
        let stats_rec = get(&records, &format!("board.{k}.stats"))?;
        let stats_bytes = f32_as_bytes(&stats_rec.data, &format!("board.{k}.stats"))?;
        if stats_bytes.len() != 16 {
            return Err(Error::Checkpoint("board stats record malformed".into()));
        }
        let correct = u64::from_le_bytes(stats_bytes[0..8].try_into().unwrap());
        let total = u64::from_le_bytes(stats_bytes[8..16].try_into().unwrap());
        let flops = read_u64(&records, &format!("board.{k}.flops"))?;
        if flops != count_flops(&space, &path)? {
            return Err(Error::Checkpoint(format!(
                "board entry {} flops {} disagree with space",
                path.encode(),
                flops
            )));
        }
        entries.push(BoardEntry {
            path,
            stats: EvalStats { correct, total },
            flops,
        });
    }
    let board = Board::from_entries(
        entries,
        config.train.flops_min,
        config.train.flops_max.unwrap_or(u64::MAX),
    )?;
    if board.k() != config.train.board_size {
        return Err(Error::Checkpoint(format!(
            "board holds {} entries, config wants {}",
            board.k(),
            config.train.board_size
        )));
    }

    Ok(TrainState {
        step: read_u64(&records, "state.step")? as usize,
        net: Supernet { space, params },
        board,
        meta,
        velocity,
        sample_rng: read_rng(&records, "rng.sample")?,
        batch_rng: read_rng(&records, "rng.batch")?,
        val_batch_rng: read_rng(&records, "rng.val_batch")?,
        last_kd: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::micro_preset;

    fn state_after(steps: usize, seed: u64) -> (RunConfig, crate::data::Dataset, TrainState) {
        let mut cfg = micro_preset();
        cfg.train.steps = steps.max(1) + 4;
        cfg.train.board_size = 3;
        cfg.train.val_subset = Some(16);
        cfg.train.batch_size = 4;
        cfg.train.seed = seed;
        if let crate::config::DatasetSource::Synthetic(s) = &mut cfg.dataset {
            s.n_train = 32;
            s.n_val = 32;
        }
        let ds = cfg.load_dataset().unwrap();
        let mut run = crate::trainer::SearchRun::new(&cfg, &ds).unwrap();
        let mut sink = crate::metrics::MetricsWriter::sink();
        for _ in 0..steps {
            run.train_step(&mut sink).unwrap();
            run.maybe_meta_update(&mut sink).unwrap();
        }
        let state = run.state;
        (cfg, ds, state)
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let (cfg, _ds, state) = state_after(3, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.crm");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path, &cfg).unwrap();
        assert_eq!(loaded.step, state.step);
        assert!(loaded.net.params.bitwise_eq(&state.net.params));
        assert!(loaded.meta.bitwise_eq(&state.meta));
        assert_eq!(loaded.board, state.board);
        assert_eq!(snapshot(&loaded.batch_rng), snapshot(&state.batch_rng));
        assert_eq!(snapshot(&loaded.sample_rng), snapshot(&state.sample_rng));
        assert_eq!(
            snapshot(&loaded.val_batch_rng),
            snapshot(&state.val_batch_rng)
        );
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let (cfg, _ds, state) = state_after(1, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.crm");
        save_checkpoint(&state, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path, &cfg) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("checksum"), "{}", m),
            other => panic!("expected checksum failure, got {:?}", other.err()),
        }
    }

    #[test]
    fn wrong_space_is_rejected() {
        let (cfg, _ds, state) = state_after(1, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.crm");
        save_checkpoint(&state, &path).unwrap();
        let mut other = cfg.clone();
        other.space.stem_channels = 2;
        match load_checkpoint(&path, &other) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("shape mismatch"), "{}", m),
            other => panic!("expected shape mismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (cfg, _ds, state) = state_after(1, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.crm");
        save_checkpoint(&state, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Bump the version field and re-seal the checksum.
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path, &cfg) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{}", m),
            other => panic!("expected version mismatch, got {:?}", other.err()),
        }
    }
}
