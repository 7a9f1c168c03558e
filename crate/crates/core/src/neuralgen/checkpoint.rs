//! Checkpoint file, little-endian: magic "VAE1", u32 version, u32 tensor
//! count, then per tensor: u16 name length, name bytes, u8 rank, u32
//! extents, f64 data.
//!
//! The architecture itself rides along as two reserved tensors
//! (`__arch_enc__` / `__arch_dec__`, one 8-wide row per layer) plus a
//! `__meta__` vector, so a checkpoint alone reconstructs the network.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::{Activation, LayerKind, LayerSpec};
use super::network::VaeNetwork;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VAE1";
const VERSION: u32 = 1;
const ARCH_ROW: usize = 8;

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::Linear => 0.0,
        Activation::Relu => 1.0,
        Activation::Sigmoid => 2.0,
    }
}

fn activation_from(code: f64) -> Result<Activation> {
    match code as i64 {
        0 => Ok(Activation::Linear),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Sigmoid),
        c => Err(Error::numeric(format!("unknown activation code {c}"))),
    }
}

fn spec_row(spec: &LayerSpec) -> [f64; ARCH_ROW] {
    let mut row = [0.0; ARCH_ROW];
    row[1] = activation_code(spec.activation);
    match spec.kind {
        LayerKind::Conv2d { kernels, kernel, stride } => {
            row[0] = 0.0;
            row[2] = kernels as f64;
            row[3] = kernel.0 as f64;
            row[4] = kernel.1 as f64;
            row[5] = stride.0 as f64;
            row[6] = stride.1 as f64;
        }
        LayerKind::TransposedConv2d { kernels, kernel, stride } => {
            row[0] = 1.0;
            row[2] = kernels as f64;
            row[3] = kernel.0 as f64;
            row[4] = kernel.1 as f64;
            row[5] = stride.0 as f64;
            row[6] = stride.1 as f64;
        }
        LayerKind::Dense { units } => {
            row[0] = 2.0;
            row[2] = units as f64;
        }
        LayerKind::Flatten => row[0] = 3.0,
        LayerKind::Reshape { shape } => {
            row[0] = 4.0;
            row[2] = shape.0 as f64;
            row[3] = shape.1 as f64;
            row[4] = shape.2 as f64;
        }
        LayerKind::Dropout { rate } => {
            row[0] = 5.0;
            row[2] = rate;
        }
        LayerKind::BilinearUpsample { out_h, out_w } => {
            row[0] = 6.0;
            row[2] = out_h as f64;
            row[3] = out_w as f64;
        }
    }
    row
}

fn spec_from_row(row: &[f64]) -> Result<LayerSpec> {
    let activation = activation_from(row[1])?;
    let kind = match row[0] as i64 {
        0 => LayerKind::Conv2d {
            kernels: row[2] as usize,
            kernel: (row[3] as usize, row[4] as usize),
            stride: (row[5] as usize, row[6] as usize),
        },
        1 => LayerKind::TransposedConv2d {
            kernels: row[2] as usize,
            kernel: (row[3] as usize, row[4] as usize),
            stride: (row[5] as usize, row[6] as usize),
        },
        2 => LayerKind::Dense { units: row[2] as usize },
        3 => LayerKind::Flatten,
        4 => LayerKind::Reshape {
            shape: (row[2] as usize, row[3] as usize, row[4] as usize),
        },
        5 => LayerKind::Dropout { rate: row[2] },
        6 => LayerKind::BilinearUpsample {
            out_h: row[2] as usize,
            out_w: row[3] as usize,
        },
        c => return Err(Error::numeric(format!("unknown layer kind code {c}"))),
    };
    Ok(LayerSpec { kind, activation })
}

fn arch_tensor(specs: &[&LayerSpec]) -> Tensor {
    let mut data = Vec::with_capacity(specs.len() * ARCH_ROW);
    for s in specs {
        data.extend_from_slice(&spec_row(s));
    }
    Tensor::new(vec![specs.len(), ARCH_ROW], data).expect("arch tensor volume")
}

/// Save the network (architecture + parameters) to `path`.
pub fn save_checkpoint(net: &VaeNetwork, path: &Path) -> Result<()> {
    let [h, w, k] = net.input_shape();
    let meta = Tensor::from_vec(vec![
        h as f64,
        w as f64,
        k as f64,
        net.n_z() as f64,
        net.epochs_trained() as f64,
    ]);
    let enc_specs: Vec<&LayerSpec> = net.encoder.iter().map(|l| &l.spec).collect();
    let dec_specs: Vec<&LayerSpec> = net.decoder.iter().map(|l| &l.spec).collect();
    let arch_enc = arch_tensor(&enc_specs);
    let arch_dec = arch_tensor(&dec_specs);

    let mut records: Vec<(String, &Tensor)> = vec![
        ("__meta__".to_string(), &meta),
        ("__arch_enc__".to_string(), &arch_enc),
        ("__arch_dec__".to_string(), &arch_dec),
    ];
    let params = net.param_tensors();
    records.extend(params.iter().map(|(n, t)| (n.clone(), *t)));

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&mut wtr, MAGIC)?;
    put(&mut wtr, &VERSION.to_le_bytes())?;
    put(&mut wtr, &(records.len() as u32).to_le_bytes())?;
    for (name, tensor) in &records {
        let name_bytes = name.as_bytes();
        put(&mut wtr, &(name_bytes.len() as u16).to_le_bytes())?;
        put(&mut wtr, name_bytes)?;
        put(&mut wtr, &(tensor.shape().len() as u8).to_le_bytes())?;
        for &e in tensor.shape() {
            put(&mut wtr, &(e as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            put(&mut wtr, &v.to_le_bytes())?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

fn read_exact_or(r: &mut BufReader<File>, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(path, format!("truncated while reading {what}")))
}

/// Load a checkpoint saved by [`save_checkpoint`]. Parameter tensors are
/// validated against the architecture's shapes.
pub fn load_checkpoint(path: &Path) -> Result<VaeNetwork> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected \"VAE1\"")));
    }
    let mut u32b = [0u8; 4];
    read_exact_or(&mut r, &mut u32b, path, "version")?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    read_exact_or(&mut r, &mut u32b, path, "tensor count")?;
    let count = u32::from_le_bytes(u32b) as usize;

    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for i in 0..count {
        let mut u16b = [0u8; 2];
        read_exact_or(&mut r, &mut u16b, path, "name length")?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name, path, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format(path, format!("tensor {i} name is not UTF-8")))?;
        let mut rank = [0u8; 1];
        read_exact_or(&mut r, &mut rank, path, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            read_exact_or(&mut r, &mut u32b, path, "extent")?;
            shape.push(u32::from_le_bytes(u32b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut f64b = [0u8; 8];
        for v in &mut data {
            read_exact_or(&mut r, &mut f64b, path, &format!("data of {name}"))?;
            *v = f64::from_le_bytes(f64b);
        }
        tensors.push((name, Tensor::new(shape, data).expect("read tensor volume")));
    }

    let find = |name: &str| -> Result<&Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
    };

    let meta = find("__meta__")?;
    if meta.len() != 5 {
        return Err(Error::format(path, "meta tensor must have 5 entries"));
    }
    let m = meta.data();
    let (h, w, k, n_z) = (m[0] as usize, m[1] as usize, m[2] as usize, m[3] as usize);
    let epochs_trained = m[4] as u32;

    let parse_specs = |t: &Tensor| -> Result<Vec<LayerSpec>> {
        if t.shape().len() != 2 || t.shape()[1] != ARCH_ROW {
            return Err(Error::format(path, "malformed architecture tensor"));
        }
        t.data().chunks_exact(ARCH_ROW).map(spec_from_row).collect()
    };
    let enc_specs = parse_specs(find("__arch_enc__")?)?;
    let dec_specs = parse_specs(find("__arch_dec__")?)?;

    let mut net = VaeNetwork::new([h, w, k], enc_specs, dec_specs, n_z, 0)?;
    for (name, param) in net.param_tensors_mut() {
        let stored = find(&name)?;
        if stored.shape() != param.shape() {
            return Err(Error::Shape {
                context: format!("checkpoint tensor {name}"),
                expected: param.shape().to_vec(),
                got: stored.shape().to_vec(),
            });
        }
        param.data_mut().copy_from_slice(stored.data());
    }
    net.epochs_trained = epochs_trained;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::network::DeskWidths;

    fn net() -> VaeNetwork {
        VaeNetwork::desk(8, 8, 2, 4, DeskWidths { conv1: 4, conv2: 4, conv3: 4, dense: 8 }, 77).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.vae");
        let net = net();
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.input_shape(), net.input_shape());
        assert_eq!(back.n_z(), net.n_z());
        for ((n1, t1), (n2, t2)) in net.param_tensors().iter().zip(back.param_tensors()) {
            assert_eq!(n1, &n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn load_then_decode_matches_pre_save_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.vae");
        let net = net();
        let z = vec![0.3, -0.8, 0.1, 1.2];
        let before = net.decode(&z).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let after = load_checkpoint(&path).unwrap().decode(&z).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.vae");
        std::fs::write(&path, b"WHAT\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_checkpoint_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.vae");
        save_checkpoint(&net(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
