//! Versioned little-endian dump of a network and, optionally, its optimiser.
//!
//! Layout: magic `SSQN`, `u32` version, `u32` layer-size count, `u32` sizes,
//! row-major weights then bias per layer as `f64`, a `u8` optimiser flag followed
//! by learning rate, decay, epsilon and the squared-gradient caches, and finally
//! an FNV-1a `u64` checksum over everything before it.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{Dense, QNetwork, RmsProp};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SSQN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn to_bytes(net: &QNetwork, opt: Option<&RmsProp>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let sizes = net.sizes();
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in &sizes {
        out.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for l in net.layers() {
        l.weights.iter().for_each(|&v| put(v));
        l.bias.iter().for_each(|&v| put(v));
    }
    match opt {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
            put(o.learning_rate);
            put(o.decay);
            put(o.epsilon);
            for (w, b) in &o.cache {
                w.iter().for_each(|&v| put(v));
                b.iter().for_each(|&v| put(v));
            }
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("checkpoint truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("sized from header"))
    }

    fn vector(&mut self, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from((0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(QNetwork, Option<RmsProp>)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("not a network checkpoint".into()));
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < 8 + 8 {
        return Err(Error::Corrupt("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, at: 8 };
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Corrupt(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n - 1);
    for w in sizes.windows(2) {
        let weights = r.matrix(w[0], w[1])?;
        let bias = r.vector(w[1])?;
        layers.push(Dense { weights, bias });
    }
    let net = QNetwork::from_layers(layers).map_err(|e| Error::Corrupt(e.to_string()))?;
    let opt = match r.take(1)?[0] {
        0 => None,
        1 => {
            let learning_rate = r.f64()?;
            let decay = r.f64()?;
            let epsilon = r.f64()?;
            let mut cache = Vec::with_capacity(n - 1);
            for w in sizes.windows(2) {
                cache.push((r.matrix(w[0], w[1])?, r.vector(w[1])?));
            }
            Some(RmsProp { learning_rate, decay, epsilon, cache })
        }
        f => return Err(Error::Corrupt(format!("unknown optimiser flag {f}"))),
    };
    if r.at != body.len() {
        return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
    }
    Ok((net, opt))
}

pub fn save(path: &Path, net: &QNetwork, opt: Option<&RmsProp>) -> Result<()> {
    fs::write(path, to_bytes(net, opt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(QNetwork, Option<RmsProp>)> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> QNetwork {
        QNetwork::new(&[15, 6, 5, 4], &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn round_trip_with_optimizer() {
        let n = net();
        let mut o = RmsProp::new(&n, 1e-4, 0.95, 1e-6);
        o.cache[0].0.fill(0.25);
        let (n2, o2) = from_bytes(&to_bytes(&n, Some(&o))).unwrap();
        assert_eq!(n2, n);
        assert_eq!(o2.unwrap(), o);
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = to_bytes(&net(), None);
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let mut bytes = to_bytes(&net(), None);
        bytes[40] ^= 0xff;
        assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn other_version_is_rejected() {
        let mut bytes = to_bytes(&net(), None);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }
}
