//! Binary checkpoint format.
//!
//! Layout (little-endian): `AVSE` magic, u32 version, u64 config
//! fingerprint, u32 entry count, then per entry a length-prefixed name
//! (u32 + bytes), u32 rank, u32 extents and f64 values. Weight arrays use
//! their registry names; optimizer state is stored under `opt.v.<name>`,
//! scheduler and epoch counters under `sched.state` and `train.epoch`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::optim::{PlateauScheduler, RmsProp};
use crate::error::{Error, Result};
use crate::params::{Array, ParamSet};

const MAGIC: &[u8; 4] = b"AVSE";
const VERSION: u32 = 1;

/// Optimizer and scheduler state carried alongside the weights so a resumed
/// run continues bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub opt_v: Vec<Vec<f64>>,
    pub opt_steps: u64,
    pub sched: PlateauScheduler,
    pub epoch: usize,
}

impl TrainState {
    pub fn capture(opt: &RmsProp, sched: &PlateauScheduler, epoch: usize) -> Self {
        TrainState {
            opt_v: opt.v.clone(),
            opt_steps: opt.steps(),
            sched: sched.clone(),
            epoch,
        }
    }
}

fn write_array<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(shape.len() as u32)?;
    for &e in shape {
        w.write_u32::<LittleEndian>(e as u32)?;
    }
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_array<R: Read>(r: &mut R) -> Result<(String, Array)> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    if name_len > 1 << 16 {
        return Err(Error::Format(format!("implausible name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Format("array name is not valid utf-8".into()))?;
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible rank {rank} for '{name}'")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    Ok((name, Array { shape, data }))
}

fn write_entries(
    path: &Path,
    fingerprint: u64,
    entries: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(fingerprint)?;
        w.write_u32::<LittleEndian>(entries.len() as u32)?;
        for (name, shape, data) in entries {
            write_array(&mut w, name, shape, data)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Save weights only (an inference checkpoint).
pub fn save_model(path: &Path, fingerprint: u64, params: &ParamSet) -> Result<()> {
    save_checkpoint(path, fingerprint, params, None)
}

/// Save weights plus optional training state. The serialized weight element
/// count is cross-checked against the registry before writing.
pub fn save_checkpoint(
    path: &Path,
    fingerprint: u64,
    params: &ParamSet,
    state: Option<&TrainState>,
) -> Result<()> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = params
        .iter()
        .map(|(n, a)| (n.to_string(), a.shape.clone(), a.data.clone()))
        .collect();
    let serialized: usize = entries.iter().map(|(_, _, d)| d.len()).sum();
    if serialized != params.param_count() {
        return Err(Error::Format(format!(
            "checkpoint would serialize {serialized} weight elements but the registry holds {}",
            params.param_count()
        )));
    }
    if let Some(st) = state {
        for ((name, a), v) in params.iter().zip(&st.opt_v) {
            entries.push((format!("opt.v.{name}"), a.shape.clone(), v.clone()));
        }
        entries.push((
            "sched.state".into(),
            vec![6],
            vec![
                st.sched.lr,
                st.sched.factor,
                st.sched.patience as f64,
                st.sched.rel_threshold,
                st.sched.best,
                st.sched.bad_epochs as f64,
            ],
        ));
        entries.push((
            "train.epoch".into(),
            vec![2],
            vec![st.epoch as f64, st.opt_steps as f64],
        ));
    }
    write_entries(path, fingerprint, &entries)
}

/// Load a checkpoint into an existing registry. The stored fingerprint must
/// match `fingerprint`; every weight array must exist with the same shape.
/// Returns the training state when the checkpoint carries one.
pub fn load_checkpoint(
    path: &Path,
    fingerprint: u64,
    params: &mut ParamSet,
) -> Result<Option<TrainState>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, not a checkpoint",
            path.display(),
            magic
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let stored = r.read_u64::<LittleEndian>()?;
    if stored != fingerprint {
        return Err(Error::Format(format!(
            "checkpoint fingerprint {stored:#018x} does not match the configured model {fingerprint:#018x}"
        )));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut opt_v: Vec<(String, Vec<f64>)> = Vec::new();
    let mut sched_state: Option<Vec<f64>> = None;
    let mut epoch_state: Option<Vec<f64>> = None;
    let mut loaded = 0usize;
    for _ in 0..count {
        let (name, array) = read_array(&mut r)?;
        if let Some(rest) = name.strip_prefix("opt.v.") {
            opt_v.push((rest.to_string(), array.data));
        } else if name == "sched.state" {
            sched_state = Some(array.data);
        } else if name == "train.epoch" {
            epoch_state = Some(array.data);
        } else {
            params.load_named(&name, &array.shape, array.data)?;
            loaded += 1;
        }
    }
    if loaded != params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {loaded} weight arrays, model expects {}",
            params.len()
        )));
    }
    match (opt_v.is_empty(), sched_state, epoch_state) {
        (true, None, None) => Ok(None),
        (false, Some(s), Some(e)) if s.len() == 6 && e.len() == 2 => {
            // Optimizer slots were written in registry order right after the
            // weights; realign by name to be safe.
            let mut v = Vec::with_capacity(params.len());
            for (name, a) in params.iter() {
                let slot = opt_v
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| {
                        Error::Format(format!("checkpoint is missing optimizer state for '{name}'"))
                    })?;
                if slot.1.len() != a.numel() {
                    return Err(Error::Format(format!(
                        "optimizer state for '{name}' has wrong length"
                    )));
                }
                v.push(slot.1.clone());
            }
            Ok(Some(TrainState {
                opt_v: v,
                opt_steps: e[1] as u64,
                sched: PlateauScheduler {
                    lr: s[0],
                    factor: s[1],
                    patience: s[2] as usize,
                    rel_threshold: s[3],
                    best: s[4],
                    bad_epochs: s[5] as usize,
                },
                epoch: e[0] as usize,
            }))
        }
        _ => Err(Error::Format(
            "checkpoint carries partial training state".into(),
        )),
    }
}

/// Restore an optimizer from captured state.
pub fn restore_optimizer(params: &ParamSet, alpha: f64, eps: f64, st: &TrainState) -> RmsProp {
    let mut opt = RmsProp::new(params, alpha, eps);
    opt.v = st.opt_v.clone();
    opt.set_steps(st.opt_steps);
    opt
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sample_params(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.add("a.w", Array::uniform(&[3, 4], 4, &mut rng));
        ps.add("b.w", Array::uniform(&[2, 3, 5], 15, &mut rng));
        ps.add("b.b", Array::zeros(&[2]));
        ps
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ps = sample_params(7);
        save_model(&path, 0xDEAD_BEEF, &ps).unwrap();
        let mut loaded = sample_params(8);
        assert_ne!(loaded.by_name("a.w"), ps.by_name("a.w"));
        let st = load_checkpoint(&path, 0xDEAD_BEEF, &mut loaded).unwrap();
        assert!(st.is_none());
        for ((_, a), (_, b)) in ps.iter().zip(loaded.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn training_state_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("train.ckpt");
        let mut ps = sample_params(3);
        let mut opt = RmsProp::new(&ps, 0.99, 1e-8);
        let grads: Vec<Vec<f64>> = ps.iter().map(|(_, a)| vec![0.1; a.numel()]).collect();
        opt.step(&mut ps, &grads, 1e-3).unwrap();
        opt.step(&mut ps, &grads, 1e-3).unwrap();
        let mut sched = PlateauScheduler::new(1e-4, 0.8, 5, 1e-4);
        sched.observe(0.5);
        sched.observe(0.6);
        let state = TrainState::capture(&opt, &sched, 2);
        save_checkpoint(&path, 1, &ps, Some(&state)).unwrap();

        let mut ps2 = sample_params(4);
        let st = load_checkpoint(&path, 1, &mut ps2).unwrap().unwrap();
        assert_eq!(st.epoch, 2);
        assert_eq!(st.opt_steps, 2);
        assert_eq!(st.sched, sched);
        assert_eq!(st.opt_v, opt.v);
        for ((_, a), (_, b)) in ps.iter().zip(ps2.iter()) {
            assert_eq!(a, b);
        }
        let opt2 = restore_optimizer(&ps2, 0.99, 1e-8, &st);
        assert_eq!(opt2.v, opt.v);
        assert_eq!(opt2.steps(), 2);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ps = sample_params(1);
        save_model(&path, 10, &ps).unwrap();
        let mut ps2 = sample_params(1);
        let err = load_checkpoint(&path, 11, &mut ps2).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"RIFFxxxxxxxxxxxxxxxx").unwrap();
        let mut ps = sample_params(1);
        let err = load_checkpoint(&path, 0, &mut ps).unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let ps = sample_params(2);
        save_model(&path, 5, &ps).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let mut ps2 = sample_params(2);
        assert!(load_checkpoint(&path, 5, &mut ps2).is_err());
    }

    #[test]
    fn no_temp_file_left_behind() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clean.ckpt");
        save_model(&path, 0, &sample_params(0)).unwrap();
        assert!(path.exists());
        assert!(!path.with_extension("tmp").exists());
    }
}
