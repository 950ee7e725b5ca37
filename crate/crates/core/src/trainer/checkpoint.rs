//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SANNEv1\0"
//! config     u32 length + UTF-8 `key=value` lines
//! count      u32 number of tensors
//! entries    per tensor: u16 name length, name, u8 dtype (0 = f32), u8 rank,
//!            rank × u64 dims, u64 byte offset from the start of the payload
//! payload    raw tensor data
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::{EncoderConfig, ModelParams};
use crate::graph::Graph;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SANNEv1\0";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Fingerprint of the graph the model was trained on.
    pub graph_fingerprint: String,
    /// Nodes held out of training (inductive runs); empty otherwise.
    pub removed_nodes: Vec<usize>,
    /// Original node ids by dense index, when known.
    pub id_map: Option<Vec<String>>,
    /// Free-form annotations (training settings, best epoch, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, training_graph: &Graph, removed_nodes: Vec<usize>) -> Self {
        Checkpoint {
            params,
            graph_fingerprint: training_graph.fingerprint(),
            removed_nodes,
            id_map: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Checks that `full_graph`, after removing the held-out nodes, is the graph the model was
    /// trained on.
    pub fn verify_graph(&self, full_graph: &Graph) -> Result<()> {
        if full_graph.num_nodes() != self.params.num_nodes() {
            return Err(Error::Checkpoint(format!(
                "graph has {} nodes but the checkpoint was trained with {}",
                full_graph.num_nodes(),
                self.params.num_nodes()
            )));
        }
        let found = full_graph.remove_nodes(&self.removed_nodes)?.fingerprint();
        if found != self.graph_fingerprint {
            return Err(Error::Checkpoint(format!(
                "graph fingerprint mismatch: checkpoint {}, graph {found}",
                self.graph_fingerprint
            )));
        }
        Ok(())
    }

    fn config_block(&self) -> Result<String> {
        let c = self.params.config();
        let mut s = String::new();
        let _ = writeln!(s, "format_version={FORMAT_VERSION}");
        let _ = writeln!(s, "dim={}", c.dim);
        let _ = writeln!(s, "layers={}", c.layers);
        let _ = writeln!(s, "heads={}", c.heads);
        let _ = writeln!(s, "ff_hidden={}", c.ff_hidden);
        let _ = writeln!(s, "walk_length={}", c.walk_length);
        let _ = writeln!(s, "use_positional={}", c.use_positional);
        let _ = writeln!(s, "use_ff={}", c.use_ff);
        let _ = writeln!(s, "use_att={}", c.use_att);
        match c.attn_scale {
            Some(v) => {
                let _ = writeln!(s, "attn_scale={v:?}");
            }
            None => s.push_str("attn_scale=none\n"),
        }
        let _ = writeln!(s, "ln_eps={:?}", c.ln_eps);
        let _ = writeln!(s, "num_nodes={}", self.params.num_nodes());
        let _ = writeln!(s, "graph_fingerprint={}", self.graph_fingerprint);
        let removed: Vec<String> = self.removed_nodes.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "removed_nodes={}", removed.join(","));
        if let Some(ids) = &self.id_map {
            if ids.iter().any(|i| i.contains(['\t', '\n'])) {
                return Err(Error::Checkpoint("node ids may not contain tabs or newlines".into()));
            }
            let _ = writeln!(s, "id_map={}", ids.join("\t"));
        }
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata entry {k:?} is not a single key=value line")));
            }
            let _ = writeln!(s, "meta.{k}={v}");
        }
        Ok(s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = self.config_block()?;
        let tensors = self.params.tensors();
        let names = self.params.names();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in names.iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.numel() as u64;
        }
        for t in tensors {
            for &x in t.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let config_len = r.u32()? as usize;
        let config = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in config.lines() {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let version: u32 = parse_key(&kv, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
        }
        let attn_scale = match get_key(&kv, "attn_scale")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::Checkpoint(format!("bad attn_scale {v:?}")))?),
        };
        let encoder = EncoderConfig {
            dim: parse_key(&kv, "dim")?,
            layers: parse_key(&kv, "layers")?,
            heads: parse_key(&kv, "heads")?,
            ff_hidden: parse_key(&kv, "ff_hidden")?,
            walk_length: parse_key(&kv, "walk_length")?,
            use_positional: parse_key(&kv, "use_positional")?,
            use_ff: parse_key(&kv, "use_ff")?,
            use_att: parse_key(&kv, "use_att")?,
            attn_scale,
            ln_eps: parse_key(&kv, "ln_eps")?,
        };
        let num_nodes: usize = parse_key(&kv, "num_nodes")?;
        let graph_fingerprint = get_key(&kv, "graph_fingerprint")?.to_string();
        let removed_nodes = match get_key(&kv, "removed_nodes")? {
            "" => Vec::new(),
            s => s
                .split(',')
                .map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("bad removed node {v:?}"))))
                .collect::<Result<_>>()?,
        };
        let id_map = kv.get("id_map").map(|s| s.split('\t').map(str::to_string).collect());
        let metadata =
            kv.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect();

        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            entries.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut named = Vec::with_capacity(count);
        for (name, shape, offset) in entries {
            let numel: usize = shape.iter().product();
            let end = offset
                .checked_add(numel * 4)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint: tensor {name} runs past the end")))?;
            let data =
                payload[offset..end].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            named.push((name, Tensor::new(shape, data)?));
        }
        let params = ModelParams::from_named(&encoder, num_nodes, named)?;
        Ok(Checkpoint { params, graph_fingerprint, removed_nodes, id_map, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn get_key<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("config block lacks {key}")))
}

fn parse_key<V: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<V> {
    let v = get_key(kv, key)?;
    v.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}: {v:?}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Checkpoint, Graph) {
        let config = EncoderConfig {
            dim: 4,
            layers: 1,
            heads: 2,
            ff_hidden: 3,
            walk_length: 3,
            attn_scale: Some(1.5),
            ..EncoderConfig::default()
        };
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let train = g.remove_nodes(&[4]).unwrap();
        let params = ModelParams::init(&config, 5, 9).unwrap();
        let mut c = Checkpoint::new(params, &train, vec![4]);
        c.id_map = Some(vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()]);
        c.metadata.insert("best_epoch".into(), "3".into());
        (c, g)
    }

    #[test]
    fn round_trip_is_exact() {
        let (c, g) = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        back.verify_graph(&g).unwrap();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let (c, _) = sample();
        let bytes = c.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        for cut in [4, 20, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("truncated"), "{cut}: {err}");
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (c, _) = sample();
        let bytes = c.to_bytes().unwrap();
        let pos = bytes.windows(16).position(|w| w == b"format_version=1").unwrap();
        let mut bad = bytes.clone();
        bad[pos + 15] = b'2';
        let err = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("format version 2"), "{err}");
    }

    #[test]
    fn fingerprint_mismatch() {
        let (c, _) = sample();
        let other = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (0, 4)]).unwrap();
        let other = Graph::from_edges(5, other.edges().chain([(0, 3)])).unwrap();
        let err = c.verify_graph(&other).unwrap_err().to_string();
        assert!(err.contains("fingerprint"), "{err}");
        let small = Graph::from_edges(4, [(0, 1)]).unwrap();
        assert!(c.verify_graph(&small).is_err());
    }
}
