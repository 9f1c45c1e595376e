//! Binary model files.
//!
//! Layout (little endian): magic `V2XQNET\0`, `u32` format version, `u32`
//! number of dimensions, the dimensions as `u64`, then per layer the
//! input-major weight matrix followed by the bias vector, all `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::{Dense, QNetwork};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"V2XQNET\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_network<W: Write>(net: &QNetwork, mut out: W) -> std::io::Result<()> {
    let dims = net.dims();
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        out.write_all(&(*d as u64).to_le_bytes())?;
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

fn read_exact<R: Read, const N: usize>(input: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_network<R: Read>(mut input: R) -> std::result::Result<QNetwork, String> {
    let io = |e: std::io::Error| e.to_string();
    let magic: [u8; 8] = read_exact(&mut input).map_err(io)?;
    if &magic != MAGIC {
        return Err("not a Q-network checkpoint".into());
    }
    let version = u32::from_le_bytes(read_exact(&mut input).map_err(io)?);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let count = u32::from_le_bytes(read_exact(&mut input).map_err(io)?) as usize;
    if !(2..=64).contains(&count) {
        return Err(format!("implausible layer count {count}"));
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        let d = u64::from_le_bytes(read_exact(&mut input).map_err(io)?);
        if d == 0 || d > 1 << 24 {
            return Err(format!("implausible dimension {d}"));
        }
        dims.push(d as usize);
    }
    let mut layers = Vec::with_capacity(count - 1);
    for w in dims.windows(2) {
        let mut layer = Dense::zeros(w[0], w[1]);
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = f64::from_le_bytes(read_exact(&mut input).map_err(io)?);
        }
        layers.push(layer);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io)? != 0 {
        return Err("trailing bytes after parameters".into());
    }
    QNetwork::from_layers(layers).map_err(|e| e.to_string())
}

pub fn save(net: &QNetwork, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_network(net, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<QNetwork> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_network(BufReader::new(file)).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedHierarchy;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn reload_reproduces_outputs_bit_exactly(
            seed in any::<u64>(),
            hidden in 1usize..40,
            x in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let mut rng = SeedHierarchy::new(seed).stream("ckpt", 0);
            let net = QNetwork::new(&[6, hidden, 5], &mut rng).unwrap();
            let mut bytes = Vec::new();
            write_network(&net, &mut bytes).unwrap();
            let back = read_network(bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_network(&b"garbage!"[..]).is_err());
        let net = QNetwork::zeros(&[2, 2]).unwrap();
        let mut bytes = Vec::new();
        write_network(&net, &mut bytes).unwrap();
        assert!(read_network(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(read_network(bytes.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.qnet");
        let mut rng = SeedHierarchy::new(3).stream("ckpt", 0);
        let net = QNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }
}
