//! Plain-text checkpoints. Floats are written with their shortest exact
//! decimal form, so a save/load round trip is bitwise.
//!
//! ```text
//! mgr-checkpoint 1
//! config <key> <value>
//! meta <key> <value>
//! vocab <count> <class_count>
//! <token>            (count lines)
//! tensor <name> <trainable> <dim>...
//! <values>
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::mgr::{MgrModel, ModelConfig};
use super::ModelError;
use crate::data::Vocabulary;
use crate::numeric::Tensor;

const MAGIC: &str = "mgr-checkpoint 1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MgrModel,
    pub vocab: Vocabulary,
    /// Free-form metadata such as the training configuration.
    pub meta: BTreeMap<String, String>,
}

fn err(line: usize, msg: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(format!("line {line}: {msg}"))
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> String {
    let c = &ckpt.model.config;
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    let fields: [(&str, String); 8] = [
        ("vocab_size", c.vocab_size.to_string()),
        ("embed_dim", c.embed_dim.to_string()),
        ("hidden_size", c.hidden_size.to_string()),
        ("class_count", c.class_count.to_string()),
        ("generators", c.generators.to_string()),
        ("share_encoder", c.share_encoder.to_string()),
        ("pooling", c.pooling.to_string()),
        ("train_embeddings", c.train_embeddings.to_string()),
    ];
    for (k, v) in fields {
        let _ = writeln!(s, "config {k} {v}");
    }
    for (k, v) in &ckpt.meta {
        let _ = writeln!(s, "meta {k} {v}");
    }
    let _ = writeln!(s, "vocab {} {}", ckpt.vocab.len(), ckpt.vocab.class_count());
    for t in ckpt.vocab.tokens() {
        s.push_str(t);
        s.push('\n');
    }
    let store = &ckpt.model.store;
    for id in store.ids() {
        let value = store.value(id);
        let dims: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            s,
            "tensor {} {} {}",
            store.name(id),
            u8::from(store.is_trainable(id)),
            dims.join(" ")
        );
        let vals: Vec<String> = value.data().iter().map(|x| x.to_string()).collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

fn parse_field<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ModelError> {
    v.parse()
        .map_err(|_| err(line, format!("bad value `{v}` for {key}")))
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint, ModelError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(1, "missing checkpoint header")),
    }
    let mut config = ModelConfig::default();
    let mut meta = BTreeMap::new();
    let mut vocab = None;
    let mut tensors: Vec<(usize, String, bool, Tensor)> = Vec::new();
    let mut ended = false;

    while let Some((ln, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("config") => {
                let key = parts.next().ok_or_else(|| err(ln, "config without key"))?;
                let v = parts
                    .next()
                    .ok_or_else(|| err(ln, "config without value"))?;
                match key {
                    "vocab_size" => config.vocab_size = parse_field(ln, key, v)?,
                    "embed_dim" => config.embed_dim = parse_field(ln, key, v)?,
                    "hidden_size" => config.hidden_size = parse_field(ln, key, v)?,
                    "class_count" => config.class_count = parse_field(ln, key, v)?,
                    "generators" => config.generators = parse_field(ln, key, v)?,
                    "share_encoder" => config.share_encoder = parse_field(ln, key, v)?,
                    "pooling" => config.pooling = v.parse().map_err(|e| err(ln, e))?,
                    "train_embeddings" => config.train_embeddings = parse_field(ln, key, v)?,
                    other => return Err(err(ln, format!("unknown config key `{other}`"))),
                }
            }
            Some("meta") => {
                let key = parts.next().ok_or_else(|| err(ln, "meta without key"))?;
                let rest: Vec<&str> = parts.collect();
                meta.insert(key.to_string(), rest.join(" "));
            }
            Some("vocab") => {
                let count: usize = parse_field(ln, "vocab count", parts.next().unwrap_or(""))?;
                let classes: usize = parse_field(ln, "class count", parts.next().unwrap_or(""))?;
                let mut tokens = Vec::with_capacity(count);
                for _ in 0..count {
                    let (_, t) = lines
                        .next()
                        .ok_or_else(|| err(ln, "vocabulary truncated"))?;
                    tokens.push(t.to_string());
                }
                vocab = Some(Vocabulary::from_tokens(tokens, classes)?);
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| err(ln, "tensor without name"))?;
                let trainable = match parts.next() {
                    Some("1") => true,
                    Some("0") => false,
                    _ => return Err(err(ln, "trainable flag must be 0 or 1")),
                };
                let dims: Vec<usize> = parts
                    .map(|d| parse_field(ln, "dimension", d))
                    .collect::<Result<_, _>>()?;
                let (vln, vline) = lines
                    .next()
                    .ok_or_else(|| err(ln, "tensor values missing"))?;
                let data: Vec<f64> = vline
                    .split_whitespace()
                    .map(|x| parse_field(vln, name, x))
                    .collect::<Result<_, _>>()?;
                let t = Tensor::new(dims, data).map_err(|e| err(vln, e))?;
                tensors.push((ln, name.to_string(), trainable, t));
            }
            Some("end") => {
                ended = true;
                break;
            }
            None => {}
            Some(other) => return Err(err(ln, format!("unexpected record `{other}`"))),
        }
    }
    if !ended {
        return Err(ModelError::Checkpoint("missing end marker".into()));
    }
    let vocab = vocab.ok_or_else(|| ModelError::Checkpoint("missing vocabulary".into()))?;

    let mut model = MgrModel::new(config, 0, None)?;
    if tensors.len() != model.store.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors for a model with {} parameters",
            tensors.len(),
            model.store.len()
        )));
    }
    for (ln, name, trainable, t) in tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| err(ln, format!("unknown parameter `{name}`")))?;
        if model.store.value(id).shape() != t.shape() {
            return Err(err(
                ln,
                format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.store.value(id).shape()
                ),
            ));
        }
        model
            .store
            .value_mut(id)
            .data_mut()
            .copy_from_slice(t.data());
        model.store.set_trainable(id, trainable);
    }
    Ok(Checkpoint { model, vocab, meta })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    std::fs::write(path, write_checkpoint(ckpt))
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    parse_checkpoint(&text)
}
