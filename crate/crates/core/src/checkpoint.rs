//! Single-file training archive: config text, tensors, optimizer moments,
//! counters, random-generator and sampler state. Little-endian throughout.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use coloc_autograd::Tensor;

use crate::config::{parse_kv, reject_unknown, render_kv, GanConfig};
use crate::error::{Error, Result};
use crate::models::{Gan, ParamStore};
use crate::training::{Adam, AdamConfig, AugmentationPolicy, BatchSampler, Counters};

const MAGIC: &[u8; 8] = b"COLOCKPT";
const VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub policy: Option<AugmentationPolicy>,
    pub params: ParamStore<f32>,
    pub buffers: ParamStore<f32>,
    pub d_opt: Adam<f32>,
    pub g_opt: Adam<f32>,
    pub counters: Counters,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub sampler: Option<BatchSampler>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.str(name);
        self.u32(t.rank() as u32);
        for d in t.shape() {
            self.u64(*d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated archive at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Checkpoint(format!(
                "length {n} runs past the end of the archive"
            )));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let numel = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let numel = numel
            .filter(|n| {
                n.checked_mul(4)
                    .is_some_and(|b| b <= self.buf.len() - self.pos)
            })
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` overruns the archive")))?;
        let data = self
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok((name, Tensor::new(shape, data)))
    }
}

const PARAM: &str = "param/";
const BUFFER: &str = "buffer/";
const D_M: &str = "adam.discriminator.m/";
const D_V: &str = "adam.discriminator.v/";
const G_M: &str = "adam.generator.m/";
const G_V: &str = "adam.generator.v/";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let mut kv = self.config.to_kv();
        kv.extend(self.policy.clone().unwrap_or_default().to_kv());
        w.str(&render_kv(&kv));
        w.u64(self.counters.iteration);
        w.u64(self.counters.d_updates);
        w.u64(self.counters.g_updates);
        w.u64(self.d_opt.step);
        w.u64(self.g_opt.step);
        w.0.extend_from_slice(&self.rng_seed);
        w.u64(self.rng_stream);
        w.0.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        let groups: [(&str, &ParamStore<f32>); 6] = [
            (PARAM, &self.params),
            (BUFFER, &self.buffers),
            (D_M, &self.d_opt.m),
            (D_V, &self.d_opt.v),
            (G_M, &self.g_opt.m),
            (G_V, &self.g_opt.v),
        ];
        w.u64(groups.iter().map(|(_, s)| s.len() as u64).sum());
        for (prefix, store) in groups {
            for (name, t) in store.iter() {
                w.tensor(&format!("{prefix}{name}"), t);
            }
        }
        match &self.sampler {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.perm.len() as u64);
                for i in &s.perm {
                    w.u64(*i as u64);
                }
                w.u64(s.pos as u64);
                w.u64(s.epoch);
            }
        }
        w.0.extend_from_slice(TRAILER);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint archive".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported archive version {version}"
            )));
        }
        let mut map = parse_kv(&r.str()?)?;
        let config = GanConfig::take_from(&mut map)?;
        let policy = AugmentationPolicy::take_from(&mut map)?;
        reject_unknown(&map)?;
        let counters = Counters {
            iteration: r.u64()?,
            d_updates: r.u64()?,
            g_updates: r.u64()?,
        };
        let d_step = r.u64()?;
        let g_step = r.u64()?;
        let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let rng_stream = r.u64()?;
        let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let mut stores: BTreeMap<&str, ParamStore<f32>> = BTreeMap::new();
        let count = r.u64()?;
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            let prefix = [PARAM, BUFFER, D_M, D_V, G_M, G_V]
                .into_iter()
                .find(|p| name.starts_with(p))
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor group in `{name}`")))?;
            stores
                .entry(prefix)
                .or_default()
                .insert(name[prefix.len()..].to_string(), t);
        }
        let sampler = match r.u8()? {
            0 => None,
            1 => {
                let n = r.len()?;
                let perm = (0..n)
                    .map(|_| r.u64().map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?;
                let pos = r.u64()? as usize;
                let epoch = r.u64()?;
                if pos > perm.len() {
                    return Err(Error::Checkpoint(
                        "sampler position past its permutation".into(),
                    ));
                }
                Some(BatchSampler { perm, pos, epoch })
            }
            v => return Err(Error::Checkpoint(format!("bad sampler tag {v}"))),
        };
        if r.take(4)? != TRAILER || r.pos != buf.len() {
            return Err(Error::Checkpoint("corrupt archive trailer".into()));
        }
        let mut take = |p: &str| stores.remove(p).unwrap_or_default();
        let opt_cfg = AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
        };
        let params = take(PARAM);
        let buffers = take(BUFFER);
        let d_opt = Adam {
            config: opt_cfg,
            step: d_step,
            m: take(D_M),
            v: take(D_V),
        };
        let g_opt = Adam {
            config: opt_cfg,
            step: g_step,
            m: take(G_M),
            v: take(G_V),
        };
        Ok(Self {
            policy: config.augmentation.then_some(policy),
            config,
            params,
            buffers,
            d_opt,
            g_opt,
            counters,
            rng_seed,
            rng_stream,
            rng_word_pos,
            sampler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.partial");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The model alone, shape-checked against the stored configuration.
    pub fn to_gan(&self) -> Result<Gan<f32>> {
        Gan::from_parts(&self.config, self.params.clone(), self.buffers.clone())
    }

    /// File stem used as the checkpoint id in reports.
    pub fn id_from_path(path: &Path) -> String {
        path.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("checkpoint")
            .to_string()
    }
}
