//! Checkpoint layout:
//!
//! ```text
//! mwe-checkpoint v1
//! config {"model":{...},"scheme":[...],"meta":...}
//! param <name> <weight|bias|norm> <d0>x<d1>...
//! ...
//! end
//! <little-endian f64 values of every tensor, in the order listed>
//! ```
//!
//! Header lines end in `\n`; the binary block starts right after `end\n`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassScheme, FusionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::ParamKind;

const MAGIC: &str = "mwe-checkpoint v1";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    scheme: ClassScheme,
    /// Caller-owned extras such as input normalization.
    #[serde(default)]
    meta: serde_json::Value,
}

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Weight => "weight",
        ParamKind::Bias => "bias",
        ParamKind::Norm => "norm",
    }
}

pub fn write_checkpoint(model: &FusionModel, out: impl Write) -> Result<()> {
    write_checkpoint_with_meta(model, &serde_json::Value::Null, out)
}

pub fn write_checkpoint_with_meta(model: &FusionModel, meta: &serde_json::Value, mut out: impl Write) -> Result<()> {
    let header = Header {
        model: model.config,
        scheme: model.scheme.clone(),
        meta: meta.clone(),
    };
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "config {}", serde_json::to_string(&header)?)?;
    for e in model.store.entries() {
        let shape: Vec<String> = e.tensor.shape().iter().map(ToString::to_string).collect();
        writeln!(out, "param {} {} {}", e.name, kind_name(e.kind), shape.join("x"))?;
    }
    writeln!(out, "end")?;
    for e in model.store.entries() {
        for v in e.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &FusionModel, path: &Path) -> Result<()> {
    save_checkpoint_with_meta(model, &serde_json::Value::Null, path)
}

pub fn save_checkpoint_with_meta(model: &FusionModel, meta: &serde_json::Value, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint_with_meta(model, meta, std::io::BufWriter::new(f))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint(input: impl Read) -> Result<FusionModel> {
    Ok(read_checkpoint_with_meta(input)?.0)
}

pub fn read_checkpoint_with_meta(input: impl Read) -> Result<(FusionModel, serde_json::Value)> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut r)? != MAGIC {
        return Err(bad("missing `mwe-checkpoint v1` magic line"));
    }
    let cfg_line = next_line(&mut r)?;
    let json = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("second header line must start with `config `"))?;
    let header: Header = serde_json::from_str(json)?;
    let mut model = FusionModel::new(header.model, header.scheme, 0)?;

    let mut listed = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let parts: Vec<&str> = l.split(' ').collect();
        if parts.len() != 4 || parts[0] != "param" {
            return Err(bad(format!("malformed parameter line `{l}`")));
        }
        listed.push((parts[1].to_string(), parts[2].to_string(), parts[3].to_string()));
    }
    if listed.len() != model.store.len() {
        return Err(bad(format!(
            "header lists {} tensors but the configured model has {}",
            listed.len(),
            model.store.len()
        )));
    }
    for ((name, kind, shape), e) in listed.iter().zip(model.store.entries()) {
        let expect: Vec<String> = e.tensor.shape().iter().map(ToString::to_string).collect();
        if *name != e.name || kind != kind_name(e.kind) || *shape != expect.join("x") {
            return Err(bad(format!(
                "tensor `{name}` ({kind}, {shape}) does not match model tensor `{}` ({}, {})",
                e.name,
                kind_name(e.kind),
                expect.join("x")
            )));
        }
    }
    let mut buf = [0u8; 8];
    for e in model.store.entries_mut() {
        for v in e.tensor.data_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("value block truncated inside `{}`", e.name)))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after the value block"));
    }
    Ok((model, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel> {
    read_checkpoint(std::fs::File::open(path)?)
}

pub fn load_checkpoint_with_meta(path: &Path) -> Result<(FusionModel, serde_json::Value)> {
    read_checkpoint_with_meta(std::fs::File::open(path)?)
}
