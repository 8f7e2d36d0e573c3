//! `qdm1` model files.
//!
//! A UTF-8 manifest of one record per line, terminated by `data <bytes>`,
//! followed by exactly that many bytes of little-endian weight data:
//!
//! ```text
//! qdm1
//! alpha 1
//! strategy A
//! input_hw 224 224
//! frozen_until 98
//! head_stride 16
//! input_multiple 1
//! storage Q5.10
//! activation Q8.7
//! anchor 16 16
//! node Conv1 conv 0 32 weight=Conv1/kernel bias=- stride=2 pad=same:3:2
//! tag breakpoint_A 150
//! blob Conv1/kernel 3 3 3 32 0 1728
//! data 1234
//! ```
//!
//! `node` lines list `name kind inputs channels` with inputs comma separated
//! (`-` for none) and op parameters as `key=value`. `blob` lines give the
//! shape, then byte offset and length within the data section. Values are
//! fp32 bits, fp16 bits, or Q codes in `ceil(word_bits / 8)` bytes, two's
//! complement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use half::f16;

use crate::detection::AnchorSet;
use crate::error::{Error, Result};
use crate::fixedpoint::QFormat;

use super::graph::{GraphMeta, ModelGraph, Node, Op, StorageFormat, WeightBlob, WeightData};

pub const MAGIC: &str = "qdm1";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn encode_node(node: &Node) -> String {
    let inputs = if node.inputs.is_empty() {
        "-".to_string()
    } else {
        node.inputs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
    };
    let mut s = format!("node {} {} {} {}", node.name, node.op.kind(), inputs, node.channels);
    match &node.op {
        Op::Conv {
            weight,
            bias,
            stride,
            pad,
        } => {
            let _ = write!(s, " weight={weight} bias={} stride={stride} pad={pad}", opt(bias.as_ref()));
        }
        Op::Depthwise { weight, stride, pad } => {
            let _ = write!(s, " weight={weight} stride={stride} pad={pad}");
        }
        Op::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps,
        } => {
            let _ = write!(s, " gamma={gamma} beta={beta} mean={mean} var={var} eps={eps}");
        }
        Op::Head { weight, bias } => {
            let _ = write!(s, " weight={weight} bias={bias}");
        }
        Op::Input | Op::Relu6 | Op::Add | Op::Upsample2x | Op::Concat => {}
    }
    s
}

fn encode_values(data: &WeightData, out: &mut Vec<u8>) {
    match data {
        WeightData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
        WeightData::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
        WeightData::Q { fmt, raw } => {
            let n = fmt.word_bits().div_ceil(8) as usize;
            raw.iter().for_each(|r| out.extend_from_slice(&r.to_le_bytes()[..n]));
        }
    }
}

/// Serializes a graph to bytes.
pub fn encode_model(g: &ModelGraph) -> Vec<u8> {
    let m = &g.meta;
    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}");
    let _ = writeln!(head, "alpha {}", m.alpha);
    let _ = writeln!(head, "strategy {}", opt(m.strategy));
    let _ = writeln!(head, "input_hw {} {}", m.input_hw.0, m.input_hw.1);
    let _ = writeln!(head, "frozen_until {}", opt(m.frozen_until));
    let _ = writeln!(head, "head_stride {}", m.head_stride);
    let _ = writeln!(head, "input_multiple {}", m.input_multiple);
    let _ = writeln!(head, "storage {}", g.storage);
    let _ = writeln!(head, "activation {}", opt(g.activation_fmt));
    for a in g.anchors.iter() {
        let _ = writeln!(head, "anchor {} {}", a.w, a.h);
    }
    for n in &g.nodes {
        let _ = writeln!(head, "{}", encode_node(n));
    }
    for (t, i) in &g.tags {
        let _ = writeln!(head, "tag {t} {i}");
    }
    let mut data = Vec::new();
    for (name, b) in &g.weights {
        let start = data.len();
        encode_values(&b.data, &mut data);
        let [s0, s1, s2, s3] = b.shape;
        let _ = writeln!(head, "blob {name} {s0} {s1} {s2} {s3} {start} {}", data.len() - start);
    }
    let _ = writeln!(head, "data {}", data.len());
    let mut out = head.into_bytes();
    out.extend_from_slice(&data);
    out
}

pub fn save_model(g: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(g))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    decode_model(&std::fs::read(path)?)
}

struct Line<'a> {
    offset: u64,
    tokens: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Malformed {
            offset: self.offset,
            msg: msg.into(),
        }
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.tokens.len() != n {
            return Err(self.err(format!(
                "`{}` record needs {} fields, found {}",
                self.tokens[0],
                n - 1,
                self.tokens.len() - 1
            )));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, i: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let t = self.tokens.get(i).ok_or_else(|| self.err("missing field"))?;
        t.parse().map_err(|e| self.err(format!("bad field {t:?}: {e}")))
    }

    fn parse_opt<T: std::str::FromStr>(&self, i: usize) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.tokens.get(i) == Some(&"-") {
            Ok(None)
        } else {
            self.parse(i).map(Some)
        }
    }
}

struct Params<'a> {
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Params<'a> {
    fn new(line: &Line<'a>, from: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in &line.tokens[from..] {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| line.err(format!("expected key=value, got {t:?}")))?;
            map.insert(k, v);
        }
        Ok(Self { map })
    }

    fn get(&self, line: &Line, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| line.err(format!("missing parameter {key}")))
    }

    fn string(&self, line: &Line, key: &str) -> Result<String> {
        self.get(line, key).map(str::to_string)
    }

    fn parse<T: std::str::FromStr>(&self, line: &Line, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(line, key)?;
        v.parse().map_err(|e| line.err(format!("bad {key} {v:?}: {e}")))
    }
}

fn decode_node(line: &Line) -> Result<Node> {
    if line.tokens.len() < 5 {
        return Err(line.err("node record needs name, kind, inputs and channels"));
    }
    let name = line.tokens[1].to_string();
    let inputs = if line.tokens[3] == "-" {
        vec![]
    } else {
        line.tokens[3]
            .split(',')
            .map(|t| t.parse::<usize>().map_err(|e| line.err(format!("bad input index {t:?}: {e}"))))
            .collect::<Result<_>>()?
    };
    let channels = line.parse(4)?;
    let p = Params::new(line, 5)?;
    let op = match line.tokens[2] {
        "input" => Op::Input,
        "conv" => Op::Conv {
            weight: p.string(line, "weight")?,
            bias: match p.get(line, "bias")? {
                "-" => None,
                b => Some(b.to_string()),
            },
            stride: p.parse(line, "stride")?,
            pad: p.parse(line, "pad")?,
        },
        "depthwise" => Op::Depthwise {
            weight: p.string(line, "weight")?,
            stride: p.parse(line, "stride")?,
            pad: p.parse(line, "pad")?,
        },
        "bn" => Op::BatchNorm {
            gamma: p.string(line, "gamma")?,
            beta: p.string(line, "beta")?,
            mean: p.string(line, "mean")?,
            var: p.string(line, "var")?,
            eps: p.parse(line, "eps")?,
        },
        "relu6" => Op::Relu6,
        "add" => Op::Add,
        "upsample2x" => Op::Upsample2x,
        "concat" => Op::Concat,
        "head" => Op::Head {
            weight: p.string(line, "weight")?,
            bias: p.string(line, "bias")?,
        },
        other => return Err(line.err(format!("unknown node kind {other:?}"))),
    };
    Ok(Node {
        name,
        op,
        inputs,
        channels,
    })
}

fn decode_values(
    bytes: &[u8],
    storage: StorageFormat,
    count: usize,
    offset: u64,
) -> Result<WeightData> {
    let malformed = |msg: String| Error::Malformed { offset, msg };
    Ok(match storage {
        StorageFormat::Fp32 => WeightData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect(),
        ),
        StorageFormat::Fp16 => WeightData::F16(
            bytes
                .chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        ),
        StorageFormat::Q(fmt) => {
            let n = storage.bytes_per_weight();
            let mut raw = Vec::with_capacity(count);
            for (i, c) in bytes.chunks_exact(n).enumerate() {
                let mut w = [0u8; 4];
                w[..n].copy_from_slice(c);
                let shift = 32 - 8 * n as u32;
                let r = (i32::from_le_bytes(w) << shift) >> shift;
                if (r as i64) < fmt.raw_min() || (r as i64) > fmt.raw_max() {
                    return Err(malformed(format!("code {r} at element {i} outside {fmt}")));
                }
                raw.push(r);
            }
            WeightData::Q { fmt, raw }
        }
    })
}

/// Parses a serialized graph. Every failure reports the byte offset of the
/// offending record; no partial graph is ever returned.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<Line<'_>> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or(Error::Malformed {
            offset: start as u64,
            msg: "unexpected end of manifest".into(),
        })?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| Error::Malformed {
            offset: start as u64,
            msg: "manifest is not UTF-8".into(),
        })?;
        *pos = start + end + 1;
        Ok(Line {
            offset: start as u64,
            tokens: text.split(' ').filter(|t| !t.is_empty()).collect(),
        })
    };

    let first = next_line(&mut pos).map_err(|_| Error::VersionMismatch {
        expected: MAGIC.into(),
        found: String::from_utf8_lossy(&bytes[..bytes.len().min(16)]).into_owned(),
    })?;
    if first.tokens != [MAGIC] {
        return Err(Error::VersionMismatch {
            expected: MAGIC.into(),
            found: first.tokens.join(" "),
        });
    }

    let mut meta = GraphMeta::default();
    let mut storage = None;
    let mut activation = None;
    let mut anchors = Vec::new();
    let mut nodes = Vec::new();
    let mut tags = BTreeMap::new();
    let mut blobs: Vec<(String, [usize; 4], usize, usize, u64)> = Vec::new();
    let data_len: usize;
    let data_offset: u64;
    loop {
        let line = next_line(&mut pos)?;
        let Some(&key) = line.tokens.first() else {
            return Err(line.err("empty record"));
        };
        match key {
            "alpha" => {
                line.expect_len(2)?;
                meta.alpha = line.parse(1)?;
            }
            "strategy" => {
                line.expect_len(2)?;
                meta.strategy = line.parse_opt(1)?;
            }
            "input_hw" => {
                line.expect_len(3)?;
                meta.input_hw = (line.parse(1)?, line.parse(2)?);
            }
            "frozen_until" => {
                line.expect_len(2)?;
                meta.frozen_until = line.parse_opt(1)?;
            }
            "head_stride" => {
                line.expect_len(2)?;
                meta.head_stride = line.parse(1)?;
            }
            "input_multiple" => {
                line.expect_len(2)?;
                meta.input_multiple = line.parse(1)?;
            }
            "storage" => {
                line.expect_len(2)?;
                storage = Some(line.parse::<StorageFormat>(1)?);
            }
            "activation" => {
                line.expect_len(2)?;
                activation = line.parse_opt::<QFormat>(1)?;
            }
            "anchor" => {
                line.expect_len(3)?;
                anchors.push((line.parse::<f64>(1)?, line.parse::<f64>(2)?));
            }
            "node" => nodes.push(decode_node(&line)?),
            "tag" => {
                line.expect_len(3)?;
                tags.insert(line.tokens[1].to_string(), line.parse::<usize>(2)?);
            }
            "blob" => {
                line.expect_len(8)?;
                let shape = [line.parse(2)?, line.parse(3)?, line.parse(4)?, line.parse(5)?];
                blobs.push((line.tokens[1].to_string(), shape, line.parse(6)?, line.parse(7)?, line.offset));
            }
            "data" => {
                line.expect_len(2)?;
                data_len = line.parse(1)?;
                data_offset = pos as u64;
                break;
            }
            other => return Err(line.err(format!("unknown record {other:?}"))),
        }
    }

    let data = &bytes[pos..];
    if data.len() != data_len {
        return Err(Error::Malformed {
            offset: data_offset + data.len().min(data_len) as u64,
            msg: format!("data section holds {} bytes, manifest declares {data_len}", data.len()),
        });
    }
    let storage = storage.ok_or(Error::Malformed {
        offset: data_offset,
        msg: "manifest has no storage record".into(),
    })?;

    let mut weights = BTreeMap::new();
    for (name, shape, start, len, rec) in blobs {
        let count: usize = shape.iter().product();
        if len != count * storage.bytes_per_weight() {
            return Err(Error::Malformed {
                offset: rec,
                msg: format!("blob {name} is {len} bytes, shape {shape:?} needs {}", count * storage.bytes_per_weight()),
            });
        }
        let end = start.checked_add(len).filter(|&e| e <= data.len()).ok_or(Error::Malformed {
            offset: rec,
            msg: format!("blob {name} extends past the data section"),
        })?;
        let values = decode_values(&data[start..end], storage, count, data_offset + start as u64)?;
        if weights.insert(name.clone(), WeightBlob { shape, data: values }).is_some() {
            return Err(Error::Malformed {
                offset: rec,
                msg: format!("duplicate blob {name}"),
            });
        }
    }

    let malformed = |e: Error| Error::Malformed {
        offset: data_offset,
        msg: e.to_string(),
    };
    let anchors = AnchorSet::new(&anchors).map_err(malformed)?;
    let mut g = ModelGraph::from_parts(meta, anchors, nodes, weights, tags, activation).map_err(malformed)?;
    // an empty weight table would otherwise default the storage tag
    g.storage = storage;
    g.validate().map_err(malformed)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_detector, ModelConfig, OutStrategy};

    fn small() -> ModelGraph {
        let cfg = ModelConfig {
            alpha: 0.35,
            out_strategy: OutStrategy::C,
            ..Default::default()
        };
        build_detector(&cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = small();
        let back = decode_model(&encode_model(&g)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn file_round_trip() {
        let g = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.qdm");
        save_model(&g, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), g);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_model(&small());
        for cut in [bytes.len() - 1, bytes.len() / 2, 10, 0] {
            match decode_model(&bytes[..cut]) {
                Err(Error::Malformed { .. }) | Err(Error::VersionMismatch { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn truncation_reports_offset_in_data() {
        let bytes = encode_model(&small());
        match decode_model(&bytes[..bytes.len() - 7]) {
            Err(Error::Malformed { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_model(&small());
        bytes[3] = b'9';
        assert!(matches!(decode_model(&bytes), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn bad_record_reports_its_offset() {
        let bytes = encode_model(&small());
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("head_stride").unwrap();
        let mut broken = bytes.clone();
        broken[at + "head_stride ".len()] = b'x';
        match decode_model(&broken) {
            Err(Error::Malformed { offset, .. }) => assert_eq!(offset as usize, at),
            other => panic!("{other:?}"),
        }
    }
}
