//! Model checkpoints as a stream of GRD1 records.
//!
//! The first record is a header with names
//! `["dfno-checkpoint", "1", <spec json>, <adam step>, key=value...]`,
//! followed by `param:`, `adam_m:`, `adam_v:` and `buffer:` records.

use std::collections::BTreeMap;
use std::path::Path;

use super::grd1::{read_records, write_records, Dtype, Record};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};

const KIND: &str = "dfno-checkpoint";
const FORMAT: &str = "1";

pub fn save_checkpoint(path: &Path, model: &Model, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut header = vec![KIND.to_string(), FORMAT.to_string(), model.spec.to_json()?, model.params.step().to_string()];
    for (k, v) in meta {
        if k.contains('=') {
            return Err(Error::invalid(format!("metadata key `{k}` contains '='")));
        }
        header.push(format!("{k}={v}"));
    }
    let mut records = vec![Record::header(header)];
    for (name, p) in model.params.iter() {
        for (prefix, t) in [("param", &p.value), ("adam_m", &p.m), ("adam_v", &p.v)] {
            records.push(Record::from_array(t, vec![format!("{prefix}:{name}")], Dtype::F64));
        }
    }
    for (name, t) in model.params.buffers() {
        records.push(Record::from_array(t, vec![format!("buffer:{name}")], Dtype::F64));
    }
    write_records(path, &records)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, BTreeMap<String, String>)> {
    let records = read_records(path)?;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let header = records.first().ok_or_else(|| bad("empty checkpoint".into()))?;
    let h = &header.names;
    if h.len() < 4 || h[0] != KIND {
        return Err(bad("not a model checkpoint".into()));
    }
    if h[1] != FORMAT {
        return Err(bad(format!("unsupported checkpoint format {}", h[1])));
    }
    let spec = ModelSpec::from_json(&h[2])?;
    let step: u64 = h[3].parse().map_err(|_| bad(format!("bad step `{}`", h[3])))?;
    let mut meta = BTreeMap::new();
    for kv in &h[4..] {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad metadata entry `{kv}`")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let mut groups: BTreeMap<String, [Option<ndarray::ArrayD<f64>>; 3]> = BTreeMap::new();
    let mut params = ParamStore::new();
    for rec in &records[1..] {
        let tag = rec.names.first().ok_or_else(|| bad("unnamed record".into()))?;
        let (kind, name) = tag.split_once(':').ok_or_else(|| bad(format!("bad record name `{tag}`")))?;
        let slot = match kind {
            "param" => 0,
            "adam_m" => 1,
            "adam_v" => 2,
            "buffer" => {
                params.set_buffer(name, rec.to_array()?);
                continue;
            }
            other => return Err(bad(format!("unknown record kind `{other}`"))),
        };
        groups.entry(name.to_string()).or_default()[slot] = Some(rec.to_array()?);
    }
    for (name, [value, m, v]) in groups {
        match (value, m, v) {
            (Some(value), Some(m), Some(v)) => params.insert_with_state(name, value, m, v)?,
            _ => return Err(bad(format!("parameter `{name}` is incomplete"))),
        }
    }
    params.set_step(step);

    // The stored tensors must match exactly what the spec builds.
    let fresh = Model::init(spec.clone(), 0)?;
    for (name, p) in fresh.params.iter() {
        let got = params.value(name).map_err(|_| bad(format!("missing parameter `{name}`")))?;
        if got.shape() != p.value.shape() {
            return Err(bad(format!("parameter `{name}` has shape {:?}, expected {:?}", got.shape(), p.value.shape())));
        }
    }
    if params.len() != fresh.params.len() {
        return Err(bad(format!("{} parameters stored, spec defines {}", params.len(), fresh.params.len())));
    }
    Ok((Model { spec, params }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for v in [Variant::Specdfno, Variant::Cnn2, Variant::TempDfno] {
            let mut m = Model::init(ModelSpec::toy(v, 1), 7).unwrap();
            m.params.set_step(12);
            let mut meta = BTreeMap::new();
            meta.insert("epoch".to_string(), "3".to_string());
            let p = dir.path().join(format!("{v}.ckpt"));
            save_checkpoint(&p, &m, &meta).unwrap();
            let (back, meta2) = load_checkpoint(&p).unwrap();
            assert_eq!(back, m);
            assert_eq!(meta2, meta);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.grd1");
        write_records(&p, &[Record::header(vec!["something".into()])]).unwrap();
        assert!(load_checkpoint(&p).is_err());
        let m = Model::init(ModelSpec::toy(Variant::Dfno, 1), 7).unwrap();
        save_checkpoint(&p, &m, &BTreeMap::new()).unwrap();
        let mut recs = read_records(&p).unwrap();
        recs.pop();
        write_records(&p, &recs).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
