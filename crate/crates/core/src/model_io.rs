//! Binary container for models and patch archives.
//!
//! Layout (little-endian, no padding): magic `CMSR`, version `u8 = 1`,
//! scale `u8`, profile `u8`, record count `u16`, then per record a
//! `u16` name length, the UTF-8 name, rank `u8`, `u32` dims and the
//! `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{build_network, NetworkConfig, NetworkParams, Profile};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"CMSR";
pub const VERSION: u8 = 1;
/// Profile byte marking a patch archive rather than a model.
pub const ARCHIVE_PROFILE: u8 = 0xDA;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub struct Container {
    pub scale: u8,
    pub profile: u8,
    pub records: Vec<Record>,
}

pub fn write_container(
    path: &Path,
    scale: u8,
    profile: u8,
    records: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    if records.len() > u16::MAX as usize {
        return Err(Error::invalid(format!(
            "too many records for the container format: {}",
            records.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, scale, profile])?;
    w.write_all(&(records.len() as u16).to_le_bytes())?;
    for (name, dims, values) in records {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("record name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[dims.len() as u8])?;
        let mut n = 1usize;
        for &d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
            n *= d;
        }
        if n != values.len() {
            return Err(Error::invalid(format!(
                "record {name}: dims {dims:?} do not match {} values",
                values.len()
            )));
        }
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CorruptModel(format!("truncated while reading {what}")))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::CorruptModel(format!(
            "bad magic {:?} (expected \"CMSR\")",
            magic
        )));
    }
    let mut head = [0u8; 3];
    read_exact(&mut r, &mut head, "header")?;
    let (version, scale, profile) = (head[0], head[1], head[2]);
    if version != VERSION {
        return Err(Error::CorruptModel(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    if !matches!(scale, 2 | 3 | 4) {
        return Err(Error::UnsupportedScale(scale));
    }
    let mut cnt = [0u8; 2];
    read_exact(&mut r, &mut cnt, "record count")?;
    let count = u16::from_le_bytes(cnt) as usize;

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut len = [0u8; 2];
        read_exact(&mut r, &mut len, &format!("record {i} name length"))?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut name, &format!("record {i} name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CorruptModel(format!("record {i}: name is not UTF-8")))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, &format!("record {name} rank"))?;
        if rank[0] == 0 || rank[0] > 4 {
            return Err(Error::CorruptModel(format!(
                "record {name}: rank {} out of range",
                rank[0]
            )));
        }
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut n = 1usize;
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact(&mut r, &mut d, &format!("record {name} dims"))?;
            let d = u32::from_le_bytes(d) as usize;
            dims.push(d);
            n = n.checked_mul(d).ok_or_else(|| {
                Error::CorruptModel(format!("record {name}: dims overflow"))
            })?;
        }
        if n > (1 << 28) {
            return Err(Error::CorruptModel(format!(
                "record {name}: implausible payload of {n} values"
            )));
        }
        let mut payload = vec![0u8; n * 4];
        read_exact(&mut r, &mut payload, &format!("record {name} payload"))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok(Container {
        scale,
        profile,
        records,
    })
}

pub fn save_model<T: Scalar>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    write_container(
        path,
        params.scale as u8,
        params.profile.as_byte(),
        &params.records(),
    )
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<NetworkParams<T>> {
    let c = read_container(path)?;
    if c.profile == ARCHIVE_PROFILE {
        return Err(Error::CorruptModel(
            "file is a patch archive, not a model".into(),
        ));
    }
    let profile = Profile::from_byte(c.profile)?;
    let config = NetworkConfig::new(c.scale as usize, profile, 0)?;
    let mut params = build_network::<T>(&config)?;
    let expected = params.records();
    if c.records.len() != expected.len() {
        return Err(Error::CorruptModel(format!(
            "expected {} records, found {}",
            expected.len(),
            c.records.len()
        )));
    }
    for (rec, (name, dims, _)) in c.records.iter().zip(&expected) {
        if rec.name != *name {
            return Err(Error::CorruptModel(format!(
                "unexpected record {} (expected {name})",
                rec.name
            )));
        }
        if rec.dims != *dims {
            return Err(Error::CorruptModel(format!(
                "record {name}: shape {:?} does not match expected {:?}",
                rec.dims, dims
            )));
        }
    }
    // All validated; fill in one pass.
    for rec in &c.records {
        let (layer, field) = rec
            .name
            .rsplit_once('.')
            .ok_or_else(|| Error::CorruptModel(format!("malformed record name {}", rec.name)))?;
        let id = params
            .layer_ids()
            .into_iter()
            .find(|id| id.name() == layer)
            .ok_or_else(|| Error::CorruptModel(format!("unknown layer record {layer}")))?;
        let (k, b) = params.layer_mut(id);
        match field {
            "kernel" => {
                for (dst, src) in k.data_mut().iter_mut().zip(&rec.values) {
                    *dst = T::from_f32(*src);
                }
            }
            "bias" => {
                for (dst, src) in b.iter_mut().zip(&rec.values) {
                    *dst = T::from_f32(*src);
                }
            }
            _ => {
                return Err(Error::CorruptModel(format!(
                    "unknown record field {field} in {}",
                    rec.name
                )))
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_gaussian, parameter_count};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("cmsr_model_io_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let config = NetworkConfig::new(3, Profile::Common, 0).unwrap();
        let mut params = build_network::<f32>(&config).unwrap();
        init_gaussian(&mut params, 1e-2, 7).unwrap();
        let path = tmp("roundtrip.cmsr");
        save_model(&params, &path).unwrap();
        let loaded = load_model::<f32>(&path).unwrap();
        assert_eq!(parameter_count(&loaded, false), 60_436);
        assert_eq!(params, loaded);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let config = NetworkConfig::new(2, Profile::Common, 0).unwrap();
        let params = build_network::<f32>(&config).unwrap();
        let path = tmp("trunc.cmsr");
        save_model(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_model::<f32>(&path) {
            Err(Error::CorruptModel(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected corrupt-model error, got {other:?}"),
        }
    }

    #[test]
    fn bad_scale_byte_is_unsupported_scale() {
        let config = NetworkConfig::new(2, Profile::Common, 0).unwrap();
        let params = build_network::<f32>(&config).unwrap();
        let path = tmp("badscale.cmsr");
        save_model(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[5] = 5; // scale byte
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(Error::UnsupportedScale(5))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmp("badmagic.cmsr");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(Error::CorruptModel(_))
        ));
    }
}
