//! Binary checkpoints: magic, version, JSON header, named tensors, CRC-32.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{Model, StateEntry};
use super::train::{TrainProgress, Trainer};
use super::ZooError;
use crate::acf::NormStats;
use crate::ingest::Database;
use crate::nn::{Adam, AdamConfig, Tensor};

const MAGIC: &[u8; 4] = b"ACFN";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub progress: TrainProgress,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub train_databases: Vec<Database>,
}

/// Everything needed to resume training or to score new data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    /// One set of normalization statistics per tower.
    pub norm: Vec<NormStats>,
}

enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Values,
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ZooError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ZooError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ZooError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ZooError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ZooError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn to_f32_entries(state: Vec<StateEntry<f32>>, prefix: &str) -> impl Iterator<Item = Entry> + '_ {
    state.into_iter().map(move |(name, shape, values)| Entry {
        name: format!("{prefix}{name}"),
        shape,
        values: Values::F32(values),
    })
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, norm: Vec<NormStats>, train_databases: Vec<Database>) -> Self {
        Self {
            meta: CheckpointMeta {
                config: trainer.model.config.clone(),
                progress: trainer.progress.clone(),
                adam: trainer.adam.config,
                adam_step: trainer.adam.step,
                train_databases,
            },
            model: trainer.model.clone(),
            adam: trainer.adam.clone(),
            norm,
        }
    }

    pub fn into_trainer(self) -> Trainer {
        let mut model = self.model;
        model.config = self.meta.config;
        Trainer {
            model,
            adam: self.adam,
            progress: self.meta.progress,
        }
    }

    fn entries(&self) -> Vec<Entry> {
        let mut out: Vec<Entry> = to_f32_entries(self.model.state(), "").collect();
        let names: Vec<String> = self.model.named_params().into_iter().map(|(n, _)| n).collect();
        for (kind, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (name, t) in names.iter().zip(moments) {
                out.push(Entry {
                    name: format!("adam.{kind}.{name}"),
                    shape: t.shape().to_vec(),
                    values: Values::F32(t.data().to_vec()),
                });
            }
        }
        for (tower, stats) in self.meta.config.feature_mode.tower_names().iter().zip(&self.norm) {
            for (kind, a) in [("mean", &stats.mean), ("std", &stats.std)] {
                out.push(Entry {
                    name: format!("norm.{tower}.{kind}"),
                    shape: a.shape().to_vec(),
                    values: Values::F64(a.iter().copied().collect()),
                });
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ZooError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        let header = serde_json::to_vec(&self.meta).map_err(|e| ZooError::Checkpoint(e.to_string()))?;
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        let entries = self.entries();
        put_u32(&mut out, entries.len() as u32);
        for e in &entries {
            put_u16(&mut out, e.name.len() as u16);
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.values {
                Values::F32(_) => DTYPE_F32,
                Values::F64(_) => DTYPE_F64,
            });
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                put_u32(&mut out, d as u32);
            }
            match &e.values {
                Values::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ZooError> {
        if bytes.len() < 4 + 2 + 4 + 4 + 4 || &bytes[..4] != MAGIC {
            return Err(ZooError::Checkpoint("not a checkpoint file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(ZooError::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u16()?;
        if version != VERSION {
            return Err(ZooError::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| ZooError::Checkpoint(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| ZooError::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let values = match dtype {
                DTYPE_F32 => Values::F32(
                    r.take(len * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DTYPE_F64 => Values::F64(
                    r.take(len * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => return Err(ZooError::Checkpoint(format!("{name}: unknown dtype {other}"))),
            };
            entries.push(Entry { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(ZooError::Checkpoint("trailing bytes after tensor table".into()));
        }
        Self::assemble(meta, entries)
    }

    fn assemble(meta: CheckpointMeta, entries: Vec<Entry>) -> Result<Self, ZooError> {
        let mut model = Model::<f32>::new(&meta.config)?;
        let n_state = model.state().len();
        let n_params = model.named_params().len();
        let n_towers = meta.config.feature_mode.tower_names().len();
        if entries.len() != n_state + 2 * n_params + 2 * n_towers {
            return Err(ZooError::Checkpoint(format!(
                "{} tensors stored, configuration implies {}",
                entries.len(),
                n_state + 2 * n_params + 2 * n_towers
            )));
        }
        let f32s = |e: &Entry| match &e.values {
            Values::F32(v) => Ok(v.clone()),
            Values::F64(_) => Err(ZooError::Checkpoint(format!("{}: expected f32", e.name))),
        };
        let mut it = entries.into_iter();
        let state: Vec<StateEntry<f32>> = (&mut it)
            .take(n_state)
            .map(|e| Ok((e.name.clone(), e.shape.clone(), f32s(&e)?)))
            .collect::<Result<_, ZooError>>()?;
        model.load_state(&state)?;

        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut adam = Adam::new(meta.adam, &[]);
        adam.step = meta.adam_step;
        for kind in ["m", "v"] {
            let mut moments = Vec::with_capacity(n_params);
            for (name, (_, p)) in names.iter().zip(model.named_params()) {
                let e = it.next().expect("count checked");
                if e.name != format!("adam.{kind}.{name}") || e.shape != p.value.shape() {
                    return Err(ZooError::Checkpoint(format!("unexpected tensor {}", e.name)));
                }
                moments.push(Tensor::from_vec(&e.shape, f32s(&e)?)?);
            }
            if kind == "m" {
                adam.m = moments;
            } else {
                adam.v = moments;
            }
        }

        let mut norm = Vec::with_capacity(n_towers);
        for tower in meta.config.feature_mode.tower_names() {
            let mut arrays = Vec::with_capacity(2);
            for kind in ["mean", "std"] {
                let e = it.next().expect("count checked");
                let Values::F64(v) = e.values else {
                    return Err(ZooError::Checkpoint(format!("{}: expected f64", e.name)));
                };
                if e.name != format!("norm.{tower}.{kind}") || e.shape.len() != 2 {
                    return Err(ZooError::Checkpoint(format!("unexpected tensor {}", e.name)));
                }
                arrays.push(
                    Array2::from_shape_vec((e.shape[0], e.shape[1]), v)
                        .map_err(|err| ZooError::Checkpoint(err.to_string()))?,
                );
            }
            let std = arrays.pop().unwrap();
            let mean = arrays.pop().unwrap();
            norm.push(NormStats { mean, std });
        }
        Ok(Self { meta, model, adam, norm })
    }

    pub fn save(&self, path: &Path) -> Result<(), ZooError> {
        write_atomic(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ZooError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::FeatureMode;

    fn sample(mode: FeatureMode) -> Checkpoint {
        let cfg = ModelConfig { seed: 5, ..ModelConfig::best(mode) };
        let mut trainer = Trainer::new(Model::new(&cfg).unwrap());
        trainer.adam.step = 7;
        trainer.adam.m[0].data_mut()[0] = 0.25;
        trainer.adam.v[3].data_mut()[1] = 1.5;
        trainer.progress = TrainProgress {
            epochs_done: 12,
            best_val_loss: Some(0.5),
            best_epoch: 9,
            wait: 3,
        };
        let norm = mode
            .tower_channels()
            .iter()
            .map(|m| NormStats {
                mean: Array2::from_elem((m * m, 51), 0.1),
                std: Array2::from_elem((m * m, 51), 2.0),
            })
            .collect();
        Checkpoint::from_trainer(&trainer, norm, vec![Database::Md1])
    }

    #[test]
    fn round_trip_is_exact() {
        for mode in [FeatureMode::Tv8, FeatureMode::Fused] {
            let ck = sample(mode);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back.meta, ck.meta);
            assert_eq!(back.model.state(), ck.model.state());
            assert_eq!(back.adam, ck.adam);
            assert_eq!(back.norm, ck.norm);
            assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample(FeatureMode::Mfcc12).to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 10]).is_err());
        assert!(Checkpoint::from_bytes(b"RIFF0000000000000000").is_err());
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(FeatureMode::Tv8);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model.state(), ck.model.state());
        assert!(!dir.path().join("model.ckpt.partial").exists());
    }
}
