//! Model checkpoints: a text header (format line, `model.*` settings,
//! tensor names and shapes, `[end]`) followed by one binary tensor record
//! per listed tensor, parameters first, then batch-norm statistics.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mcta_tensor::{Parameter, Tensor};

use crate::error::{Error, Result};
use crate::model::{MctaModel, ModelConfig};
use crate::tensor_file::{read_tensor, write_tensor};

pub const HEADER: &str = "MCTA-CHECKPOINT 1";

fn buffer_names(model: &MctaModel<f32>) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (i, s) in model.bn.iter().enumerate() {
        let layer = if i + 1 == model.bn.len() {
            "attention.bn".to_string()
        } else {
            format!("embed.bn{}", i + 1)
        };
        out.push((format!("{layer}.running_mean"), s.channels()));
        out.push((format!("{layer}.running_var"), s.channels()));
    }
    out
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &MctaModel<f32>) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for (k, v) in model.config.entries() {
        writeln!(w, "{k} = {v}")?;
    }
    let dims = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    for p in &model.params {
        writeln!(w, "param {} {}", p.name, dims(p.value.shape()))?;
    }
    for (name, n) in buffer_names(model) {
        writeln!(w, "buffer {name} {n}")?;
    }
    writeln!(w, "[end]")?;
    for p in &model.params {
        write_tensor(w, p.value.shape(), p.value.data())?;
    }
    for s in &model.bn {
        write_tensor(w, &[s.channels()], &s.running_mean)?;
        write_tensor(w, &[s.channels()], &s.running_var)?;
    }
    Ok(())
}

pub fn save(path: &Path, model: &MctaModel<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, model)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R, origin: &Path) -> Result<MctaModel<f32>> {
    let bad = |detail: String| Error::parse(origin, detail);
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<Option<String>> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        Ok((n > 0).then(|| line.trim_end_matches(['\n', '\r']).to_string()))
    };
    if next_line(r)?.as_deref() != Some(HEADER) {
        return Err(bad(format!("not a checkpoint (expected {HEADER:?} header)")));
    }
    let mut config = ModelConfig::default();
    let mut params: Vec<(String, Vec<usize>)> = Vec::new();
    let mut buffers: Vec<(String, usize)> = Vec::new();
    loop {
        let Some(l) = next_line(r)? else {
            return Err(bad("header ends before [end]".into()));
        };
        if l == "[end]" {
            break;
        }
        if let Some(rest) = l.strip_prefix("param ") {
            let (name, dims) = rest.split_once(' ').ok_or_else(|| bad(format!("bad param line {l:?}")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape in {l:?}"))))
                .collect::<Result<Vec<_>>>()?;
            params.push((name.to_string(), shape));
        } else if let Some(rest) = l.strip_prefix("buffer ") {
            let (name, n) = rest.split_once(' ').ok_or_else(|| bad(format!("bad buffer line {l:?}")))?;
            let n = n.parse().map_err(|_| bad(format!("bad length in {l:?}")))?;
            buffers.push((name.to_string(), n));
        } else if let Some((k, v)) = l.split_once('=') {
            let key = k.trim();
            let name = key
                .strip_prefix("model.")
                .ok_or_else(|| bad(format!("unexpected header key {key}")))?;
            config.set(name, v.trim()).map_err(|e| bad(e.to_string()))?;
        } else if !l.trim().is_empty() {
            return Err(bad(format!("unexpected header line {l:?}")));
        }
    }
    let mut read = |expect: &[usize], name: &str| -> Result<Vec<f32>> {
        let (shape, data) = read_tensor(r).map_err(|e| bad(format!("tensor {name}: {e}")))?;
        if shape != expect {
            return Err(bad(format!("tensor {name} has shape {shape:?}, header says {expect:?}")));
        }
        Ok(data)
    };
    let mut values = Vec::with_capacity(params.len());
    for (name, shape) in &params {
        let data = read(shape, name)?;
        values.push(Parameter::new(name.clone(), Tensor::new(shape.clone(), data)?));
    }
    let mut model = MctaModel::from_params(config, values).map_err(|e| bad(e.to_string()))?;
    let expected = buffer_names(&model);
    if expected != buffers {
        return Err(bad("batch-norm buffers do not match the model".into()));
    }
    for (i, pair) in expected.chunks(2).enumerate() {
        model.bn[i].running_mean = read(&[pair[0].1], &pair[0].0)?;
        model.bn[i].running_var = read(&[pair[1].1], &pair[1].0)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(origin, e))? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<MctaModel<f32>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f), path)
}
