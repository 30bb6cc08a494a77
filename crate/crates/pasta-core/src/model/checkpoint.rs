//! Checkpoint archive: magic, the model config as key=value text, the
//! iteration counter, then every parameter as
//! `name / dims / little-endian f32 payload` in registry order. Loads are
//! bitwise exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PastaModel};

const MAGIC: &[u8; 8] = b"PASTAC01";

pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub iter: u64,
    pub values: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

pub fn save_checkpoint(model: &PastaModel, iter: u64, path: &Path) -> Result<()> {
    let f = File::create(path)
        .map_err(|e| Error::msg(format!("create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    w.write_all(MAGIC)?;
    let cfg_text = model.cfg.to_kv();
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;
    w.write_all(&iter.to_le_bytes())?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = t.shape();
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path)
        .map_err(|e| Error::msg(format!("open {}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let cfg_len = u32::from_le_bytes(u32b) as usize;
    let mut cfg_text = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_text)?;
    let cfg = ModelConfig::from_kv(
        std::str::from_utf8(&cfg_text)
            .map_err(|_| Error::Parse("checkpoint config not utf-8".into()))?,
    )?;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let iter = u64::from_le_bytes(u64b);
    r.read_exact(&mut u32b)?;
    let n = u32::from_le_bytes(u32b) as usize;
    let mut values = HashMap::with_capacity(n);
    for _ in 0..n {
        let mut u16b = [0u8; 2];
        r.read_exact(&mut u16b)?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Parse("checkpoint parameter name not utf-8".into()))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            r.read_exact(&mut u32b)?;
            shape.push(u32::from_le_bytes(u32b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        values.insert(name, (shape, data));
    }
    Ok(Checkpoint { cfg, iter, values })
}

impl Checkpoint {
    /// Rebuild the model with these exact parameter values.
    pub fn build_model(&self) -> Result<PastaModel> {
        let model = PastaModel::new(self.cfg.clone(), 0)?;
        model.params.load_values(&self.values)?;
        Ok(model)
    }
}
