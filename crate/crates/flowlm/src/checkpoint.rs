//! Checkpoint binary format.
//!
//! Layout: magic bytes, format version, length-prefixed config echo, step
//! counters, then length-prefixed little-endian f64 arrays in a fixed
//! declared order — embedding table, normalization stats, raw parameters,
//! EMA shadow, optimizer first and second moments. Save → load → save is
//! byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::corpus::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::numeric::{Array, Rng};
use crate::trainer::{CorpusBundle, Trainer};
use crate::Real;

const MAGIC: &[u8; 4] = b"FLWM";
const VERSION: u32 = 1;

type Arr = Array<Real>;

pub struct Checkpoint {
    pub run: RunConfig,
    pub step: u64,
    pub denoise_steps: u64,
    pub decode_steps: u64,
    pub provider: EmbeddingProvider<Real>,
    pub params: NetParams<Real>,
    pub ema: NetParams<Real>,
    pub opt_m: Vec<Arr>,
    pub opt_v: Vec<Arr>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            run: t.run.clone(),
            step: t.step,
            denoise_steps: t.denoise_steps,
            decode_steps: t.decode_steps,
            provider: t.corpus.provider.clone(),
            params: t.params.clone(),
            ema: t.ema.clone(),
            opt_m: t.opt.m.clone(),
            opt_v: t.opt.v.clone(),
        }
    }

    /// Parameters evaluation should use, honoring `sample.use_ema`. The
    /// stored EMA is the raw zero-initialized accumulator; the returned view
    /// is bias-corrected.
    pub fn eval_params(&self) -> NetParams<Real> {
        if self.run.sample.use_ema {
            crate::trainer::ema_view(&self.ema, self.run.train.ema_decay, self.step, &self.params)
        } else {
            self.params.clone()
        }
    }

    /// Rebuild the runtime corpus with the checkpointed provider so the
    /// oracle and the embedding space match training exactly.
    pub fn bundle(&self) -> Result<CorpusBundle> {
        CorpusBundle::with_provider(&self.run, self.provider.clone())
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let bundle = self.bundle()?;
        Trainer::restore(
            self.run,
            bundle,
            self.params,
            self.ema,
            self.opt_m,
            self.opt_v,
            self.step,
            self.denoise_steps,
            self.decode_steps,
        )
    }

    fn arrays_in_order(&self) -> Vec<&Arr> {
        let mut out: Vec<&Arr> =
            vec![self.provider.table(), self.provider.mu(), self.provider.sigma()];
        self.params.visit(&mut |_, a| out.push(a));
        self.ema.visit(&mut |_, a| out.push(a));
        out.extend(self.opt_m.iter());
        out.extend(self.opt_v.iter());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let echo = self.run.to_text();
        w.write_all(&(echo.len() as u64).to_le_bytes())?;
        w.write_all(echo.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.denoise_steps.to_le_bytes())?;
        w.write_all(&self.decode_steps.to_le_bytes())?;
        let arrays = self.arrays_in_order();
        w.write_all(&(arrays.len() as u64).to_le_bytes())?;
        for a in arrays {
            w.write_all(&(a.len() as u64).to_le_bytes())?;
            for &v in a.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic bytes {magic:?} in {}",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let echo_len = read_u64(&mut r)? as usize;
        let mut echo = vec![0u8; echo_len];
        r.read_exact(&mut echo)?;
        let echo = String::from_utf8(echo)
            .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
        let run = RunConfig::from_text(&echo)?;
        let step = read_u64(&mut r)?;
        let denoise_steps = read_u64(&mut r)?;
        let decode_steps = read_u64(&mut r)?;
        let n_arrays = read_u64(&mut r)? as usize;

        // Template with the right shapes; data overwritten from the stream.
        let mut template_rng = Rng::new(0);
        let mut params: NetParams<Real> = NetParams::init(run.net_config(), &mut template_rng);
        let mut ema = params.clone();
        let d_emb = run.model.d_emb;
        let v = run.corpus.vocab_size;
        let mut expected_shapes: Vec<Vec<usize>> =
            vec![vec![v, d_emb], vec![d_emb], vec![d_emb]];
        params.visit(&mut |_, a| expected_shapes.push(a.shape().to_vec()));
        params.visit(&mut |_, a| expected_shapes.push(a.shape().to_vec()));
        params.visit(&mut |_, a| expected_shapes.push(a.shape().to_vec()));
        params.visit(&mut |_, a| expected_shapes.push(a.shape().to_vec()));
        if n_arrays != expected_shapes.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {n_arrays}",
                expected_shapes.len()
            )));
        }
        let mut arrays = Vec::with_capacity(n_arrays);
        for shape in &expected_shapes {
            let len = read_u64(&mut r)? as usize;
            let want: usize = shape.iter().product();
            if len != want {
                return Err(Error::Checkpoint(format!(
                    "array length {len} does not match expected shape {shape:?}"
                )));
            }
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            let data: Vec<Real> = buf
                .chunks_exact(8)
                .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(Array::from_vec(shape, data));
        }
        let mut it = arrays.into_iter();
        let table = it.next().unwrap();
        let mu = it.next().unwrap();
        let sigma = it.next().unwrap();
        let provider = EmbeddingProvider::from_parts(table, mu, sigma, run.model.d_bottleneck);
        params.visit_mut(&mut |_, a| *a = it.next().unwrap());
        ema.visit_mut(&mut |_, a| *a = it.next().unwrap());
        let n_params = {
            let mut n = 0;
            params.visit(&mut |_, _| n += 1);
            n
        };
        let opt_m: Vec<Arr> = (0..n_params).map(|_| it.next().unwrap()).collect();
        let opt_v: Vec<Arr> = (0..n_params).map(|_| it.next().unwrap()).collect();
        Ok(Checkpoint {
            run,
            step,
            denoise_steps,
            decode_steps,
            provider,
            params,
            ema,
            opt_m,
            opt_v,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trainer() -> Trainer {
        let mut run = RunConfig::default();
        run.corpus.vocab_size = 8;
        run.corpus.seq_len = 6;
        run.corpus.stats_tokens = 2_000;
        run.model.d_emb = 8;
        run.model.d_bottleneck = 4;
        run.model.d_model = 16;
        run.model.depth = 1;
        run.model.heads = 2;
        run.model.mlp_ratio = 2;
        run.train.batch_size = 2;
        run.train.steps = 4;
        Trainer::new(run).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut t = tiny_trainer();
        for _ in 0..3 {
            t.train_step().unwrap();
        }
        let dir = std::env::temp_dir().join("flowlm_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.bin");
        let p2 = dir.join("b.bin");
        let ck = Checkpoint::from_trainer(&t);
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(loaded.step, 3);
    }

    #[test]
    fn restored_trainer_continues_identically() {
        let mut a = tiny_trainer();
        let mut b = tiny_trainer();
        for _ in 0..2 {
            a.train_step().unwrap();
            b.train_step().unwrap();
        }
        let dir = std::env::temp_dir().join("flowlm_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.bin");
        Checkpoint::from_trainer(&a).save(&p).unwrap();
        let mut restored = Checkpoint::load(&p).unwrap().into_trainer().unwrap();
        let ma = a.train_step().unwrap();
        let mr = restored.train_step().unwrap();
        let mb = b.train_step().unwrap();
        assert_eq!(ma.loss.to_bits(), mr.loss.to_bits());
        assert_eq!(ma.loss.to_bits(), mb.loss.to_bits());
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = std::env::temp_dir().join("flowlm_ckpt_test3");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.bin");
        std::fs::write(&p, b"NOPE0000").unwrap();
        let err = match Checkpoint::load(&p) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("corrupted checkpoint loaded"),
        };
        assert!(err.contains("magic"));
    }
}
