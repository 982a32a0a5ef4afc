use std::fs;
use std::path::Path;

use cgtn_tensor::{Element, Tensor};

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"CGTN";
const VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes the architecture text and named parameter tensors. The
/// trailing 8 bytes are an FNV-1a checksum of everything before them, so
/// truncation and bit rot are detected at load time.
pub fn save_checkpoint<E: Element>(
    path: &Path,
    arch_text: &str,
    tensors: &[(String, &Tensor<E>)],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_str(&mut out, arch_text);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        push_str(&mut out, name);
        out.push(E::DTYPE.tag());
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Data("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| CoreError::Data("checkpoint holds non-UTF-8 text".into()))
    }
}

/// Loads a checkpoint written by [`save_checkpoint`] with the same scalar
/// type. Returns the architecture text and the named tensors in file order.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<(String, Vec<(String, Tensor<E>)>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(CoreError::Data(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().expect("8 bytes"));
    let computed = fnv1a64(&bytes[..body_len]);
    if stored != computed {
        return Err(CoreError::Checksum {
            file: path.display().to_string(),
            expected: format!("{stored:016x}"),
            got: format!("{computed:016x}"),
        });
    }
    let mut r = Reader {
        bytes: &bytes[..body_len],
        pos: 4,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CoreError::Data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let arch_text = r.string()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let tag = r.u8()?;
        let dtype = cgtn_tensor::DType::from_tag(tag)
            .ok_or_else(|| CoreError::Data(format!("unknown dtype tag {tag}")))?;
        if dtype != E::DTYPE {
            return Err(CoreError::Data(format!(
                "tensor {name} is stored as {dtype}, expected {}",
                E::DTYPE
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * E::DTYPE.size_bytes())?;
        let mut data = Vec::with_capacity(numel);
        let step = E::DTYPE.size_bytes();
        for i in 0..numel {
            data.push(E::read_le(&payload[i * step..(i + 1) * step]));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body_len {
        return Err(CoreError::Data(format!(
            "checkpoint has {} trailing bytes",
            body_len - r.pos
        )));
    }
    Ok((arch_text, tensors))
}
