//! Model checkpoints: a directory holding the spec as `key = value` text and
//! each named parameter as a little-endian f64 array with a shape header.
//! Load(save(m)) reproduces scores bit-exactly.

use super::{init, ModelSpec, Pooling, ScoringModel, Variant};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use std::fs;
use std::io::Read;
use std::path::Path;

pub fn save_model(model: &ScoringModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("params"))?;
    let spec = &model.spec;
    let mut text = String::new();
    text.push_str(&format!("variant = {}\n", spec.variant.name()));
    text.push_str(&format!("input_width = {}\n", spec.input_width));
    let widths: Vec<String> = spec.hidden_widths.iter().map(usize::to_string).collect();
    text.push_str(&format!("hidden_widths = {}\n", widths.join(",")));
    text.push_str(&format!("group_size = {}\n", spec.group_size));
    text.push_str(&format!("shrinkage = {}\n", spec.shrinkage));
    text.push_str(&format!("pooling = {}\n", spec.pooling.name()));
    text.push_str(&format!("batch_norm = {}\n", spec.batch_norm));
    text.push_str(&format!("se_on_input = {}\n", spec.se_on_input));
    text.push_str(&format!(
        "double_relu_excitation = {}\n",
        spec.double_relu_excitation
    ));
    text.push_str(&format!("seed = {}\n", spec.seed));
    fs::write(dir.join("spec.txt"), text)?;

    for p in model.params() {
        let mut bytes = Vec::new();
        let shape = p.tensor.shape();
        bytes.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("params").join(format!("{}.bin", p.name)), bytes)?;
    }
    Ok(())
}

fn parse_spec(text: &str) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(Variant::Univariate, 1);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("expected key = value, found {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::Config(format!("bad {what} in checkpoint spec: {value:?}"));
        match key {
            "variant" => spec.variant = Variant::parse(value)?,
            "input_width" => spec.input_width = value.parse().map_err(|_| bad(key))?,
            "hidden_widths" => {
                spec.hidden_widths = value
                    .split(',')
                    .map(|t| t.trim().parse().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
            }
            "group_size" => spec.group_size = value.parse().map_err(|_| bad(key))?,
            "shrinkage" => spec.shrinkage = value.parse().map_err(|_| bad(key))?,
            "pooling" => spec.pooling = Pooling::parse(value)?,
            "batch_norm" => spec.batch_norm = value.parse().map_err(|_| bad(key))?,
            "se_on_input" => spec.se_on_input = value.parse().map_err(|_| bad(key))?,
            "double_relu_excitation" => {
                spec.double_relu_excitation = value.parse().map_err(|_| bad(key))?;
            }
            "seed" => spec.seed = value.parse().map_err(|_| bad(key))?,
            other => return Err(Error::Config(format!("unknown checkpoint key {other:?}"))),
        }
    }
    Ok(spec)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ScoringModel> {
    let dir = dir.as_ref();
    let spec = parse_spec(&fs::read_to_string(dir.join("spec.txt"))?)?;
    let mut model = init(&spec)?;
    for p in model.params_mut() {
        let path = dir.join("params").join(format!("{}.bin", p.name));
        let mut file = fs::File::open(&path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let mut cursor = 0usize;
        let mut take_u64 = || -> Result<u64> {
            let end = cursor + 8;
            let bytes: [u8; 8] = buf
                .get(cursor..end)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| Error::Schema(format!("truncated parameter file {path:?}")))?;
            cursor = end;
            Ok(u64::from_le_bytes(bytes))
        };
        let ndims = take_u64()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(take_u64()? as usize);
        }
        if shape != p.tensor.shape() {
            return Err(Error::Schema(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.name,
                shape,
                p.tensor.shape()
            )));
        }
        let numel: usize = shape.iter().product();
        if buf.len() - cursor != numel * 8 {
            return Err(Error::Schema(format!(
                "parameter {} has {} data bytes, expected {}",
                p.name,
                buf.len() - cursor,
                numel * 8
            )));
        }
        let data: Vec<f64> = buf[cursor..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("exact chunks")))
            .collect();
        p.tensor = Tensor::new(shape, data)?;
    }
    Ok(model)
}

/// Write one extra value file (e.g. optimizer metadata) next to a checkpoint.
pub fn write_note(dir: impl AsRef<Path>, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir.as_ref())?;
    fs::write(dir.as_ref().join(name), content)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn roundtrip_reproduces_scores_bit_exactly() {
        let mut spec = ModelSpec::new(Variant::SerankB, 8);
        spec.hidden_widths = vec![6, 4];
        spec.batch_norm = true;
        spec.seed = 3;
        let model = init(&spec).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path().join("ckpt")).unwrap();
        let loaded = load_model(dir.path().join("ckpt")).unwrap();

        assert_eq!(model.spec, loaded.spec);
        let x = Tensor::from_rows(&[
            vec![0.1, -0.2, 0.3, 0.5, -1.0, 0.7, 0.0, 0.25],
            vec![1.1, 0.4, -0.6, 0.2, 0.9, -0.3, 0.8, -0.1],
        ])
        .unwrap();
        let mask = [true, true];
        let a = model.score(&x, &mask, &super::super::Mode::Infer).unwrap();
        let b = loaded.score(&x, &mask, &super::super::Mode::Infer).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let spec = ModelSpec::new(Variant::Univariate, 4);
        let model = init(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path().join("ckpt")).unwrap();

        // corrupt one parameter file's shape header
        let path = dir.path().join("ckpt/params/fc0.weight.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99;
        fs::write(&path, bytes).unwrap();
        assert!(load_model(dir.path().join("ckpt")).is_err());
    }
}
