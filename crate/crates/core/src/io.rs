//! File formats: STNT tensors, checkpoint containers, binary PGM/PPM images.
//!
//! STNT layout: magic `STNT`, little-endian u32 header length, a JSON header
//! `{"dtype": "f32"|"f64", "shape": [...]}`, then the scalars row-major in
//! little-endian order. Checkpoints use the same framing with magic `STNC`
//! and a manifest of named tensors in front of the concatenated payloads.

use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"STNT";
const CONTAINER_MAGIC: &[u8; 4] = b"STNC";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
}

fn frame(magic: &[u8; 4], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

fn unframe<'a>(bytes: &'a [u8], magic: &[u8; 4], what: &str) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(CoreError::Format(format!("{what}: bad magic")));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(CoreError::Format(format!("{what}: truncated header")));
    }
    Ok((&bytes[8..8 + hlen], &bytes[8 + hlen..]))
}

fn scalars_to_bytes<T: Scalar>(data: &[T]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(data.len() * T::BYTES);
    for &v in data {
        v.write_le(&mut payload);
    }
    payload
}

// decode a raw little-endian payload of dtype `dtype` into T, converting
// between f32 and f64 when the stored type differs
fn bytes_to_scalars<T: Scalar>(dtype: &str, payload: &[u8], n: usize, what: &str) -> Result<Vec<T>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(CoreError::Format(format!("{what}: unknown dtype {other:?}"))),
    };
    if payload.len() < n * width {
        return Err(CoreError::Format(format!(
            "{what}: payload holds {} bytes, need {}",
            payload.len(),
            n * width
        )));
    }
    let data = (0..n)
        .map(|i| {
            let b = &payload[i * width..(i + 1) * width];
            let v = if width == 4 {
                f32::from_le_bytes(b.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(b.try_into().unwrap())
            };
            T::from_f64(v)
        })
        .collect();
    Ok(data)
}

pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let header = serde_json::to_vec(&TensorHeader {
        dtype: T::DTYPE.to_string(),
        shape: t.shape().to_vec(),
    })
    .expect("header serialization cannot fail");
    frame(TENSOR_MAGIC, &header, &scalars_to_bytes(t.data()))
}

pub fn tensor_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (header, payload) = unframe(bytes, TENSOR_MAGIC, "tensor")?;
    let h: TensorHeader = serde_json::from_slice(header)?;
    let n: usize = h.shape.iter().product();
    let data = bytes_to_scalars(&h.dtype, payload, n, "tensor")?;
    Tensor::from_vec(&h.shape, data)
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    Ok(fs::write(path, tensor_to_bytes(t))?)
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    tensor_from_bytes(&fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    meta: serde_json::Value,
}

/// Write named tensors plus free-form JSON metadata as one checkpoint file.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    entries: &[(String, &Tensor<T>)],
    meta: serde_json::Value,
) -> Result<()> {
    let mut manifest = Manifest { tensors: Vec::new(), meta };
    let mut payload = Vec::new();
    for (name, t) in entries {
        let bytes = scalars_to_bytes(t.data());
        manifest.tensors.push(ManifestEntry {
            name: name.clone(),
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
            bytes: bytes.len(),
        });
        payload.extend_from_slice(&bytes);
    }
    let header = serde_json::to_vec(&manifest)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&frame(CONTAINER_MAGIC, &header, &payload))?;
    Ok(())
}

/// Read a checkpoint back as (named tensors in manifest order, metadata).
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Vec<(String, Tensor<T>)>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    let (header, payload) = unframe(&bytes, CONTAINER_MAGIC, "checkpoint")?;
    let manifest: Manifest = serde_json::from_slice(header)?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.offset + e.bytes > payload.len() {
            return Err(CoreError::Format(format!("checkpoint: entry {} out of bounds", e.name)));
        }
        let n: usize = e.shape.iter().product();
        let data = bytes_to_scalars(&e.dtype, &payload[e.offset..e.offset + e.bytes], n, "checkpoint")?;
        out.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
    }
    Ok((out, manifest.meta))
}

/// Write a (H,W) or (1,1,H,W) tensor as binary PGM, clamping to [0,1].
pub fn write_pgm<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let (h, w) = match t.shape() {
        [h, w] => (*h, *w),
        [1, 1, h, w] => (*h, *w),
        other => return Err(CoreError::shape(format!("write_pgm: shape {other:?} not (H,W)"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|v| {
        let x = v.to_f64_().clamp(0.0, 1.0);
        (x * 255.0).round() as u8
    }));
    Ok(fs::write(path, out)?)
}

fn parse_netpbm_header(bytes: &[u8]) -> Result<(u8, usize, usize, usize, usize)> {
    if bytes.len() < 2 || bytes[0] != b'P' || (bytes[1] != b'5' && bytes[1] != b'6') {
        return Err(CoreError::Format("netpbm: expected binary P5 or P6".into()));
    }
    let kind = bytes[1];
    // read three whitespace-separated integers, skipping '#' comments
    let mut vals = [0usize; 3];
    let mut vi = 0;
    let mut i = 2;
    while vi < 3 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(CoreError::Format("netpbm: malformed header".into()));
        }
        vals[vi] = std::str::from_utf8(&bytes[start..i]).unwrap().parse().unwrap();
        vi += 1;
    }
    // exactly one whitespace byte separates the header from the raster
    i += 1;
    Ok((kind, vals[0], vals[1], vals[2], i))
}

/// Read a binary PGM (P5) or PPM (P6) into (1,C,H,W) scaled to [0,1].
pub fn read_netpbm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let (kind, w, h, maxval, start) = parse_netpbm_header(&bytes)?;
    if maxval == 0 || maxval > 255 {
        return Err(CoreError::Format(format!("netpbm: unsupported maxval {maxval}")));
    }
    let c = if kind == b'5' { 1 } else { 3 };
    let need = c * h * w;
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(CoreError::Format("netpbm: truncated raster".into()));
    }
    let scale = 1.0 / maxval as f64;
    let mut t = Tensor::zeros(&[1, c, h, w]);
    // netpbm is pixel-interleaved; tensors are planar
    for p in 0..h * w {
        for ci in 0..c {
            t.data_mut()[ci * h * w + p] = T::from_f64(raster[p * c + ci] as f64 * scale);
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tensor_roundtrip_both_dtypes() {
        let dir = std::env::temp_dir().join("stnt_io_test");
        fs::create_dir_all(&dir).unwrap();
        let t64 = rand_tensor(&[2, 3, 4], 1);
        let p = dir.join("a.stnt");
        write_tensor(&p, &t64).unwrap();
        let back: Tensor<f64> = read_tensor(&p).unwrap();
        assert_eq!(t64, back);

        let t32 = t64.cast::<f32>();
        write_tensor(&p, &t32).unwrap();
        let back32: Tensor<f32> = read_tensor(&p).unwrap();
        assert_eq!(t32, back32);
        // stored f32, read as f64: values survive exactly (widening)
        let widened: Tensor<f64> = read_tensor(&p).unwrap();
        assert_eq!(widened, t32.cast::<f64>());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        assert!(tensor_from_bytes::<f64>(b"NOPE\0\0\0\0").is_err());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_names_order_and_meta() {
        let dir = std::env::temp_dir().join("stnt_io_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("ckpt.stnc");
        let a = rand_tensor(&[3, 2], 2);
        let b = rand_tensor(&[5], 3);
        let meta = serde_json::json!({"iters": 7, "tag": "best"});
        save_checkpoint(&p, &[("enc.w".into(), &a), ("enc.b".into(), &b)], meta.clone()).unwrap();
        let (entries, m) = load_checkpoint::<f64>(&p).unwrap();
        assert_eq!(m, meta);
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].0, "enc.w");
        assert_eq!(entries[0].1, a);
        assert_eq!(entries[1].0, "enc.b");
        assert_eq!(entries[1].1, b);
    }

    #[test]
    fn pgm_roundtrip_is_exact_on_8bit_grid() {
        let dir = std::env::temp_dir().join("stnt_io_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("img.pgm");
        // values on the exact 8-bit grid so quantization is lossless
        let t = Tensor::<f64>::from_fn(&[1, 1, 4, 5], |i| (i % 256) as f64 / 255.0);
        write_pgm(&p, &t).unwrap();
        let back: Tensor<f64> = read_netpbm(&p).unwrap();
        assert_eq!(back.shape(), &[1, 1, 4, 5]);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_header_with_comment_parses() {
        let bytes = b"P5\n# a comment\n2 2\n255\n\x00\x7f\xff\x10";
        let dir = std::env::temp_dir().join("stnt_io_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.pgm");
        fs::write(&p, bytes).unwrap();
        let t: Tensor<f64> = read_netpbm(&p).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert!((t.data()[3] - 16.0 / 255.0).abs() < 1e-12);
    }
}
