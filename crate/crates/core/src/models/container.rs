//! On-disk model container: magic `SEPW`, a little-endian version, family
//! and horizon tags, the spec as length-prefixed JSON, the parameter
//! payload, and a trailing CRC-32C over everything before it.

use super::nets::{load_trainable, trainable_values};
use super::{build, ModelError, ModelFamily, ModelKind, ModelSpec, TrainedModel, SUPPORTED_HORIZONS};
use crate::boosting;

pub const MAGIC: [u8; 4] = *b"SEPW";
pub const FORMAT_VERSION: u16 = 1;
/// Magic + version + family + horizon + spec length prefix.
pub const HEADER_BYTES: usize = 12;
pub const TRAILER_BYTES: usize = 4;

/// Castagnoli CRC table (reflected polynomial 0x82F63B78), built at compile
/// time.
const fn crc32c_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0x82F6_3B78
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc32c_table();

pub fn crc32c(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ u32::from(b)) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

/// Trainable values in documented block order, then batch-statistic
/// buffers, all IEEE-754 32-bit little-endian.
fn neural_payload(values: &[f32], buffers: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (values.len() + buffers.len()));
    for v in values.iter().chain(buffers) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn serialize(model: &TrainedModel) -> Vec<u8> {
    let spec_json = serde_json::to_vec(&model.spec).expect("specs are plain data");
    let payload = match &model.kind {
        ModelKind::Mlp(net) => neural_payload(&trainable_values(&net.params()), &net.buffer_values()),
        ModelKind::Lstm(net) => neural_payload(&trainable_values(&net.params()), &net.buffer_values()),
        ModelKind::LstmFcn(net) => {
            neural_payload(&trainable_values(&net.params()), &net.buffer_values())
        }
        ModelKind::Gbdt(m) => boosting::encode_payload(m),
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + spec_json.len() + payload.len() + TRAILER_BYTES);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.spec.family.as_u8());
    out.push(model.horizon_hours);
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec_json);
    out.extend_from_slice(&payload);
    let crc = crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::BadContainer(msg.into())
}

/// Integrity is checked before structure: any truncation or corruption
/// fails the checksum first. Neural training logs are not stored, so a
/// deserialized neural model carries an empty log; tree payloads are
/// self-contained and keep theirs.
pub fn deserialize(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    if bytes.len() < TRAILER_BYTES {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - TRAILER_BYTES);
    let stored = u32::from_le_bytes(tail.try_into().expect("four-byte tail"));
    if crc32c(body) != stored {
        return Err(ModelError::ChecksumMismatch);
    }
    if body.len() < HEADER_BYTES {
        return Err(bad("header truncated"));
    }
    if body[0..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch { found: version });
    }
    let family_tag = body[6];
    let horizon_hours = body[7];
    let json_len = u32::from_le_bytes([body[8], body[9], body[10], body[11]]) as usize;
    let rest = &body[HEADER_BYTES..];
    if rest.len() < json_len {
        return Err(bad("spec length overruns the file"));
    }
    let (json, payload) = rest.split_at(json_len);

    let family =
        ModelFamily::from_u8(family_tag).ok_or_else(|| bad(format!("unknown family tag {family_tag}")))?;
    let spec: ModelSpec =
        serde_json::from_slice(json).map_err(|e| bad(format!("spec json: {e}")))?;
    if spec.family != family {
        return Err(bad("family tag disagrees with the embedded spec"));
    }
    if !SUPPORTED_HORIZONS.contains(&horizon_hours) {
        return Err(bad(format!("unsupported horizon {horizon_hours}")));
    }
    spec.validate().map_err(|e| bad(format!("embedded spec: {e}")))?;

    if family == ModelFamily::Gbdt {
        let m = boosting::decode_payload(payload).map_err(|e| bad(format!("tree payload: {e}")))?;
        let spec_params = spec.gbdt_params()?;
        if m.params != spec_params {
            return Err(bad("tree payload parameters disagree with the spec"));
        }
        let train_log = m.train_log.clone();
        return Ok(TrainedModel {
            spec,
            kind: ModelKind::Gbdt(m),
            train_log,
            val_log: Vec::new(),
            horizon_hours,
        });
    }

    let mut shell = build(&spec, horizon_hours, 0)?;
    let (expected_train, expected_buf) = match &shell.kind {
        ModelKind::Mlp(n) => (n.param_count(), n.buffer_values().len()),
        ModelKind::Lstm(n) => (n.param_count(), n.buffer_values().len()),
        ModelKind::LstmFcn(n) => (n.param_count(), n.buffer_values().len()),
        ModelKind::Gbdt(_) => unreachable!("handled above"),
    };
    let expected_bytes = 4 * (expected_train + expected_buf);
    if payload.len() != expected_bytes {
        return Err(bad(format!(
            "payload holds {} bytes, spec needs {expected_bytes}",
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(expected_train + expected_buf);
    for chunk in payload.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().expect("four-byte chunks")));
    }
    let (train_vals, buf_vals) = values.split_at(expected_train);
    match &mut shell.kind {
        ModelKind::Mlp(n) => load_trainable(&mut n.params_mut(), train_vals)?,
        ModelKind::Lstm(n) => load_trainable(&mut n.params_mut(), train_vals)?,
        ModelKind::LstmFcn(n) => {
            load_trainable(&mut n.params_mut(), train_vals)?;
            n.load_buffers(buf_vals)?;
        }
        ModelKind::Gbdt(_) => unreachable!("handled above"),
    }
    Ok(shell)
}
