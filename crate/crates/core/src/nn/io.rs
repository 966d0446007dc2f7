//! Model container: `ARMPOSE\x01`, a little-endian `u32` header length, a
//! JSON header (spec, layout, meta) and the parameters as little-endian
//! `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelSpec, NnError, TrainedModel, TrainingMeta};

pub const MODEL_MAGIC: &[u8; 8] = b"ARMPOSE\x01";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    layout: Layout,
    meta: TrainingMeta,
}

pub fn write_model<W: Write>(model: &TrainedModel, mut out: W) -> Result<(), NnError> {
    let header = Header { spec: model.spec, layout: model.layout.clone(), meta: model.meta.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<TrainedModel, NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format("not a model file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;
    if header.layout != Layout::for_spec(&header.spec) {
        return Err(NnError::Format("layout does not match spec".into()));
    }
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != header.layout.total * 8 {
        return Err(NnError::Format(format!("expected {} parameter bytes, found {}", header.layout.total * 8, raw.len())));
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    TrainedModel::from_parts(header.spec, params, header.meta)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    write_model(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel, NnError> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, TargetCodec};

    #[test]
    fn round_trip_is_lossless() {
        let mut m = TrainedModel::init(ModelSpec::new(Arch::Recurrent, TargetCodec::SixD), 3).unwrap();
        m.meta.best_val_loss = 0.1 + 0.2;
        m.meta.epochs_run = 17;
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = TrainedModel::init(ModelSpec::new(Arch::Feedforward, TargetCodec::Xyz), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(NnError::Format(_))));
        let truncated = &buf[..buf.len() - 4];
        assert!(matches!(read_model(truncated), Err(NnError::Format(_))));
    }
}
