//! Binary checkpoint of parameters and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSSF" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f64)
//!             | u8 rank | rank x u32 dims | payload
//! ```
//!
//! Parameters come first in store order. Optimizer moments follow as
//! `opt/m/<name>` and `opt/v/<name>`, then `opt/meta`, a float64 tensor
//! holding `[step, lr, beta1, beta2, weight_decay, eps]`.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::param::ParamStore;
use crate::tensor::{DType, Element, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MSSF";
pub const VERSION: u32 = 1;
const META: &str = "opt/meta";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn push_tensor<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
    out.extend(len.to_le_bytes());
    out.extend(name.as_bytes());
    out.push(T::DTYPE as u8);
    out.push(4);
    for d in t.shape().dims() {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes_into(out);
    }
    Ok(())
}

pub fn encode_checkpoint<T: Element>(
    store: &ParamStore<T>,
    opt: Option<&AdamState<T>>,
) -> Result<Vec<u8>> {
    let mut entries: Vec<(String, &Tensor<T>)> = store
        .iter()
        .map(|(_, p)| (p.name.clone(), &p.value))
        .collect();
    let meta;
    if let Some(opt) = opt {
        if opt.m.len() != store.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameter store".into(),
            ));
        }
        for (prefix, moments) in [("opt/m/", &opt.m), ("opt/v/", &opt.v)] {
            for ((_, p), t) in store.iter().zip(moments) {
                entries.push((format!("{prefix}{}", p.name), t));
            }
        }
    }
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let count = entries.len() + usize::from(opt.is_some());
    out.extend((count as u32).to_le_bytes());
    for (name, t) in &entries {
        push_tensor(&mut out, name, *t)?;
    }
    if let Some(opt) = opt {
        let c = opt.config;
        meta = Tensor::<f64>::from_vec(
            Shape::new(1, 6, 1, 1),
            vec![
                opt.step as f64,
                c.lr,
                c.beta1,
                c.beta2,
                c.weight_decay,
                c.eps,
            ],
        )?;
        push_tensor(&mut out, META, &meta)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "payload length mismatch: {what} needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

fn read_values<T: Element>(raw: &[u8], dtype: u8) -> Vec<T> {
    match dtype {
        0 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect(),
        _ => raw
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

fn read_tensor<T: Element>(r: &mut Reader<'_>) -> Result<(String, Tensor<T>, Vec<f64>)> {
    let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
    let name = std::str::from_utf8(r.take(len, "name")?)
        .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
        .to_string();
    let head = r.take(2, "dtype and rank")?;
    let (dtype, rank) = (head[0], head[1] as usize);
    let width = match dtype {
        d if d == DType::F32 as u8 => 4,
        d if d == DType::F64 as u8 => 8,
        d => return Err(Error::Checkpoint(format!("{name}: unknown dtype {d}"))),
    };
    if rank == 0 || rank > 4 {
        return Err(Error::Checkpoint(format!(
            "{name}: unsupported rank {rank}"
        )));
    }
    let mut dims = [1usize; 4];
    for d in dims.iter_mut().skip(4 - rank) {
        *d = r.u32("dims")? as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let raw = r.take(shape.numel() * width, &format!("payload of {name}"))?;
    let exact = if name == META {
        read_values(raw, dtype)
    } else {
        Vec::new()
    };
    Ok((
        name,
        Tensor::from_vec(shape, read_values(raw, dtype))?,
        exact,
    ))
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "unsupported version: bad magic {:?}, expected \"MSSF\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut meta = None;
    let mut seen = HashSet::new();
    for _ in 0..count {
        let (name, t, exact) = read_tensor::<T>(&mut r)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!(
                "name collision: {name} appears twice"
            )));
        }
        if name == META {
            meta = Some(exact);
        } else if let Some(rest) = name.strip_prefix("opt/m/") {
            m.push((rest.to_string(), t));
        } else if let Some(rest) = name.strip_prefix("opt/v/") {
            v.push((rest.to_string(), t));
        } else {
            params.add(name, t)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "payload length mismatch: {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let optimizer = match meta {
        None if m.is_empty() && v.is_empty() => None,
        None => {
            return Err(Error::Checkpoint(
                "optimizer moments without opt/meta".into(),
            ))
        }
        Some(meta) => {
            let [step, lr, beta1, beta2, weight_decay, eps]: [f64; 6] = meta
                .try_into()
                .map_err(|_| Error::Checkpoint("opt/meta must hold 6 values".into()))?;
            let order = |moments: Vec<(String, Tensor<T>)>, kind: &str| -> Result<Vec<Tensor<T>>> {
                if moments.len() != params.len() {
                    return Err(Error::Checkpoint(format!(
                        "{} opt/{kind} tensors for {} parameters",
                        moments.len(),
                        params.len()
                    )));
                }
                moments
                    .into_iter()
                    .zip(params.iter())
                    .map(|((name, t), (_, p))| {
                        if name != p.name || t.shape() != p.value.shape() {
                            Err(Error::Checkpoint(format!(
                                "opt/{kind}/{name} does not match parameter {}",
                                p.name
                            )))
                        } else {
                            Ok(t)
                        }
                    })
                    .collect()
            };
            Some(AdamState {
                config: AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                },
                step: step as u64,
                m: order(m, "m")?,
                v: order(v, "v")?,
            })
        }
    };
    Ok(Checkpoint { params, optimizer })
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    store: &ParamStore<T>,
    opt: Option<&AdamState<T>>,
) -> Result<()> {
    let bytes = encode_checkpoint(store, opt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_store(rng: &mut Rng) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.w", rng.normal_tensor(Shape::new(2, 3, 3, 3), 1.0))
            .unwrap();
        s.add("dec.b", rng.normal_tensor(Shape::new(1, 4, 1, 1), 1.0))
            .unwrap();
        s
    }

    #[test]
    fn roundtrip_with_optimizer() {
        let mut rng = Rng::new(1);
        let mut store = sample_store(&mut rng);
        let mut opt = AdamState::new(AdamConfig::default(), &store);
        for p in store.iter_mut() {
            p.grad = p.value.map(|v| v * 0.5);
        }
        opt.step(&mut store, None).unwrap();
        let bytes = encode_checkpoint(&store, Some(&opt)).unwrap();
        let ck = decode_checkpoint::<f32>(&bytes).unwrap();
        let again = encode_checkpoint(&ck.params, ck.optimizer.as_ref()).unwrap();
        assert_eq!(bytes, again);
        let o = ck.optimizer.unwrap();
        assert_eq!(o.step, 1);
        assert_eq!(o.config, opt.config);
        assert_eq!(o.m, opt.m);
    }

    #[test]
    fn bad_magic_is_named() {
        let mut bytes = encode_checkpoint(&sample_store(&mut Rng::new(2)), None).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_checkpoint::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("version") && err.contains("XXXX"), "{err}");
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = encode_checkpoint(&sample_store(&mut Rng::new(3)), None).unwrap();
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1])
            .unwrap_err()
            .to_string()
            .contains("length mismatch"));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint::<f32>(&long)
            .unwrap_err()
            .to_string()
            .contains("trailing"));
    }

    #[test]
    fn name_collision_rejected() {
        let mut rng = Rng::new(4);
        let t = rng.normal_tensor::<f32>(Shape::new(1, 2, 1, 1), 1.0);
        let mut bytes = Vec::new();
        bytes.extend(MAGIC);
        bytes.extend(VERSION.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        push_tensor(&mut bytes, "a", &t).unwrap();
        push_tensor(&mut bytes, "a", &t).unwrap();
        assert!(decode_checkpoint::<f32>(&bytes)
            .unwrap_err()
            .to_string()
            .contains("collision"));
    }

    #[test]
    fn layout_of_one_tensor() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::<f32>::full(Shape::new(1, 1, 1, 2), 1.0))
            .unwrap();
        let bytes = encode_checkpoint(&s, None).unwrap();
        let mut expected = b"MSSF".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u16.to_le_bytes());
        expected.push(b'w');
        expected.extend([0u8, 4]);
        for d in [1u32, 1, 1, 2] {
            expected.extend(d.to_le_bytes());
        }
        expected.extend(1f32.to_le_bytes());
        expected.extend(1f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }
}
