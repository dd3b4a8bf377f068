//! Binary checkpoint: `HGAN` magic, u32 version, config text and its FNV-1a
//! digest, step, then length-prefixed named tensors stored as f64.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::{fnv1a, TrainingConfig};
use super::optim::AdamState;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{Real, Tensor};

type Tensors = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

const MAGIC: &[u8; 4] = b"HGAN";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn tensor<T: Real>(&mut self, name: &str, shape: &[usize], data: &[T]) {
        self.bytes(name.as_bytes());
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
        for v in data {
            self.0.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
}

fn params<T: Real>(w: &mut Writer, prefix: &str, p: &ParamSet<T>) {
    for (name, t) in p.iter() {
        w.tensor(&format!("{prefix}/{name}"), t.shape(), t.data());
    }
}

fn adam<T: Real>(w: &mut Writer, prefix: &str, p: &ParamSet<T>, s: &AdamState<T>) {
    w.tensor(&format!("adam.{prefix}.step"), &[1], &[s.step as f64]);
    for ((name, t), (m, v)) in p.iter().zip(s.m.iter().zip(&s.v)) {
        w.tensor(&format!("adam.{prefix}.m/{name}"), t.shape(), m);
        w.tensor(&format!("adam.{prefix}.v/{name}"), t.shape(), v);
    }
}

pub fn to_bytes<T: Real>(state: &ModelState<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let text = state.config.to_text();
    w.bytes(text.as_bytes());
    w.u64(fnv1a(text.as_bytes()));
    w.u64(state.step);
    let mut body = Writer(Vec::new());
    let mut count = 0u32;
    let nets = [("G", &state.g.params), ("F", &state.f.params), ("DX", &state.dx.params), ("DY", &state.dy.params)];
    let opts = [&state.adam_g, &state.adam_f, &state.adam_dx, &state.adam_dy];
    for (prefix, p) in nets {
        params(&mut body, prefix, p);
        count += p.len() as u32;
    }
    for ((prefix, p), s) in nets.iter().zip(opts) {
        adam(&mut body, prefix, p, s);
        count += 1 + 2 * p.len() as u32;
    }
    for (prefix, pool) in [("a", &state.pool_a), ("b", &state.pool_b)] {
        for (k, img) in pool.images.iter().enumerate() {
            body.tensor(&format!("pool.{prefix}/{k}"), img.shape(), img.data());
            count += 1;
        }
    }
    w.u32(count);
    w.0.extend_from_slice(&body.0);
    w.0
}

pub fn save<T: Real>(state: &ModelState<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, why: impl Into<String>) -> Error {
        Error::format(self.path, why)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name = String::from_utf8(self.bytes()?.to_vec()).map_err(|_| self.err("tensor name is not UTF-8"))?;
        let nd = self.u32()? as usize;
        if nd > 8 {
            return Err(self.err(format!("tensor {name} has {nd} dims")));
        }
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(self.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.err("tensor too large"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, shape, data))
    }
}

fn header<'a>(r: &mut Reader<'a>) -> Result<TrainingConfig> {
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic, not a checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let text = r.bytes()?;
    let digest = r.u64()?;
    if fnv1a(text) != digest {
        return Err(r.err("config digest mismatch"));
    }
    let text = std::str::from_utf8(text).map_err(|_| r.err("config is not UTF-8"))?;
    TrainingConfig::parse_text(text).map_err(|e| r.err(format!("embedded config: {e}")))
}

/// The configuration embedded in a checkpoint, without loading tensors.
pub fn read_config(path: &Path) -> Result<TrainingConfig> {
    let bytes = std::fs::read(path)?;
    header(&mut Reader { bytes: &bytes, pos: 0, path })
}

pub fn from_bytes<T: Real>(bytes: &[u8], path: &Path) -> Result<ModelState<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    let config = header(&mut r)?;
    let step = r.u64()?;
    let count = r.u32()?;
    let mut tensors = Tensors::new();
    for _ in 0..count {
        let (name, shape, data) = r.tensor()?;
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(r.err(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }

    let mut state = ModelState::<T>::new(config)?;
    state.step = step;
    let take = |tensors: &mut Tensors, name: &str, shape: &[usize]| -> Result<Vec<T>> {
        let (s, d) = tensors.remove(name).ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if s != shape {
            return Err(Error::format(path, format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("tensor {name} holds non-finite values")));
        }
        Ok(d.into_iter().map(T::of).collect())
    };
    let ModelState { g, f, dx, dy, adam_g, adam_f, adam_dx, adam_dy, .. } = &mut state;
    for (prefix, p, s) in [
        ("G", &mut g.params, adam_g),
        ("F", &mut f.params, adam_f),
        ("DX", &mut dx.params, adam_dx),
        ("DY", &mut dy.params, adam_dy),
    ] {
        let names: Vec<String> = p.names().map(str::to_owned).collect();
        for (k, (name, t)) in names.iter().zip(p.tensors_mut()).enumerate() {
            let shape = t.shape().to_vec();
            *t = Tensor::new(shape.clone(), take(&mut tensors, &format!("{prefix}/{name}"), &shape)?)?;
            s.m[k] = take(&mut tensors, &format!("adam.{prefix}.m/{name}"), &shape)?;
            s.v[k] = take(&mut tensors, &format!("adam.{prefix}.v/{name}"), &shape)?;
        }
        let st = take(&mut tensors, &format!("adam.{prefix}.step"), &[1])?[0].f64();
        if st < 0.0 || st.fract() != 0.0 {
            return Err(Error::format(path, format!("bad optimizer step for {prefix}")));
        }
        s.step = st as u64;
    }
    let size = state.config.channels;
    for (prefix, pool) in [("a", &mut state.pool_a), ("b", &mut state.pool_b)] {
        let mut k = 0;
        while let Some((shape, _)) = tensors.get(&format!("pool.{prefix}/{k}")) {
            let shape = shape.clone();
            if shape.len() != 4 || shape[0] != 1 || shape[1] != size {
                return Err(Error::format(path, format!("bad replay image shape {shape:?}")));
            }
            let data = take(&mut tensors, &format!("pool.{prefix}/{k}"), &shape)?;
            pool.images.push(Tensor::new(shape, data)?);
            k += 1;
        }
        if pool.images.len() > pool.capacity {
            return Err(Error::format(path, "replay pool exceeds its capacity"));
        }
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {name}")));
    }
    Ok(state)
}

pub fn load<T: Real>(path: &Path) -> Result<ModelState<T>> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use crate::train::train_step;

    fn trained() -> ModelState {
        let cfg = TrainingConfig {
            gen_base_channels: 4,
            gen_res_blocks: 1,
            disc_base_channels: 4,
            disc_layers: 2,
            n_pairs: 4,
            replay_buffer_size: 3,
            ..TrainingConfig::default()
        };
        let mut s = ModelState::new(cfg).unwrap();
        let mut rng = substream(9, Stream::Data, 0);
        for _ in 0..2 {
            let a = Tensor::rand_uniform(vec![1, 1, 16, 16], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(vec![1, 1, 16, 16], -1.0, 1.0, &mut rng);
            train_step(&mut s, &a, &b, 2e-4).unwrap();
        }
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let s = trained();
        let bytes = to_bytes(&s);
        let back: ModelState = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let bytes = to_bytes(&trained());
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&bad, p), Err(Error::Format { .. })));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes::<f64>(&bytes[..cut], p).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes::<f64>(&long, p).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(from_bytes::<f64>(&version, p).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let s = trained();
        save(&s, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap(), s);
    }
}
