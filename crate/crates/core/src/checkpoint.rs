//! Binary checkpoint format for [`ModelParams`].
//!
//! ```text
//! FEDSIM-CKPT v1\n
//! <group count>\n
//! <name>\t<element count>\n      (one line per group, in order)
//! <little-endian f64 payload, groups concatenated in header order>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;

const MAGIC: &str = "FEDSIM-CKPT v1";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n{}\n", params.num_groups());
    for (name, values) in params.groups() {
        header.push_str(&format!("{name}\t{}\n", values.len()));
    }
    let mut out = header.into_bytes();
    out.reserve(params.total_len() * 8);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut cursor = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[cursor..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        cursor += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    };

    if next_line()? != MAGIC {
        return Err(bad("unrecognized magic line"));
    }
    let count: usize = next_line()?
        .parse()
        .map_err(|_| bad("group count is not an integer"))?;
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let (name, len) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("group line missing tab separator"))?;
        let len: usize = len.parse().map_err(|_| bad("group length is not an integer"))?;
        layout.push((name.to_string(), len));
    }

    let payload = &bytes[cursor..];
    let expected: usize = layout.iter().map(|(_, n)| n * 8).sum();
    if payload.len() != expected {
        return Err(bad(&format!(
            "payload has {} bytes, header describes {expected}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(8);
    let groups = layout
        .into_iter()
        .map(|(name, n)| {
            let values = chunks
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            (name, values)
        })
        .collect::<Vec<(String, Vec<f64>)>>();
    ModelParams::new(groups).map_err(|e| bad(&e.to_string()))
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

fn bad(msg: &str) -> Error {
    Error::InvalidCheckpoint(msg.to_string())
}
