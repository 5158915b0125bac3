//! Binary weights file, little-endian.
//!
//! ```text
//! magic "DGNW" | version u16 | activation u8 | aggregation u8
//! cardinality_0 u16 | cardinality_1 u16 | cat_dim u16 | tensor count u32
//! per tensor: name_len u16 | name (utf-8) | rank u8 | dims u32 x rank | f32 x prod(dims)
//! ```
//!
//! Tensors appear in this fixed order (`<mlp>.<i>` repeats for each dense
//! layer, `weight` is `[out, in]`, `bias` is `[out]`):
//!
//! ```text
//! norm.mean [6]            norm.scale [6]
//! cat_embed.0 [c0, d]      cat_embed.1 [c1, d]
//! stage1.mlp.<i>.weight    stage1.mlp.<i>.bias
//! stage1.bn.{gamma,beta,running_mean,running_var} [32]   stage1.bn.eps [1]
//! conv1.phi.<i>.weight     conv1.phi.<i>.bias      conv1.bn.*
//! conv2.phi.<i>.weight     conv2.phi.<i>.bias      conv2.bn.*
//! readout.mlp.<i>.weight   readout.mlp.<i>.bias
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, Aggregation, BatchNorm, Dense, EdgeConvWeights, Mlp, ModelError, ModelWeights};
use crate::event::{NUM_CATEGORICAL, NUM_CONTINUOUS};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DGNW";
pub const WEIGHTS_FORMAT_VERSION: u16 = 1;

struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
    offset: usize,
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn tensor(&mut self, name: &str, dims: &[usize], data: &[f32]) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in data {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self.count += 1;
    }

    fn mlp(&mut self, prefix: &str, mlp: &Mlp) {
        for (i, l) in mlp.layers.iter().enumerate() {
            self.tensor(&format!("{prefix}.{i}.weight"), &[l.out_dim, l.in_dim], &l.weight);
            self.tensor(&format!("{prefix}.{i}.bias"), &[l.out_dim], &l.bias);
        }
    }

    fn bn(&mut self, prefix: &str, bn: &BatchNorm) {
        let w = bn.width();
        self.tensor(&format!("{prefix}.gamma"), &[w], &bn.gamma);
        self.tensor(&format!("{prefix}.beta"), &[w], &bn.beta);
        self.tensor(&format!("{prefix}.running_mean"), &[w], &bn.running_mean);
        self.tensor(&format!("{prefix}.running_var"), &[w], &bn.running_var);
        self.tensor(&format!("{prefix}.eps"), &[1], &[bn.eps]);
    }
}

pub fn encode_weights(w: &ModelWeights) -> Result<Vec<u8>, ModelError> {
    w.validate()?;
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(WEIGHTS_MAGIC);
    header.extend_from_slice(&WEIGHTS_FORMAT_VERSION.to_le_bytes());
    header.push(w.activation.code());
    header.push(w.aggregation.code());
    for c in w.cardinalities {
        header.extend_from_slice(&c.to_le_bytes());
    }
    let cat_dim =
        u16::try_from(w.cat_dim).map_err(|_| ModelError::Shape(format!("cat_dim {} too large", w.cat_dim)))?;
    header.extend_from_slice(&cat_dim.to_le_bytes());

    let mut out = Writer { buf: Vec::new(), count: 0 };
    out.tensor("norm.mean", &[NUM_CONTINUOUS], &w.norm_mean);
    out.tensor("norm.scale", &[NUM_CONTINUOUS], &w.norm_scale);
    for (k, table) in w.cat_embed.iter().enumerate() {
        out.tensor(&format!("cat_embed.{k}"), &[w.cardinalities[k] as usize, w.cat_dim], table);
    }
    out.mlp("stage1.mlp", &w.stage1_mlp);
    out.bn("stage1.bn", &w.stage1_bn);
    for (l, conv) in w.conv.iter().enumerate() {
        out.mlp(&format!("conv{}.phi", l + 1), &conv.phi);
        out.bn(&format!("conv{}.bn", l + 1), &conv.bn);
    }
    out.mlp("readout.mlp", &w.readout_mlp);

    header.extend_from_slice(&out.count.to_le_bytes());
    header.extend_from_slice(&out.buf);
    Ok(header)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> ModelError {
        ModelError::Format { offset, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], ModelError> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.err(self.pos, format!("truncated: expected {n} bytes for {what}")))?;
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor, ModelError> {
        let offset = self.pos;
        let len = self.u16("tensor name length")? as usize;
        let raw = self.take(len, "tensor name")?.to_vec();
        let name = String::from_utf8(raw).map_err(|_| self.err(offset, "tensor name is not utf-8"))?;
        let rank = self.u8("tensor rank")? as usize;
        let dims = (0..rank).map(|_| self.u32("tensor dim").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count: usize = dims.iter().product();
        let payload = self.take(count * 4, &format!("payload of {name}"))?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor { name, dims, data, offset })
    }
}

/// Consumes tensors in the documented order.
struct Tensors {
    items: std::vec::IntoIter<Tensor>,
    peeked: Option<Tensor>,
    end: usize,
}

impl Tensors {
    fn peek_name(&mut self) -> Option<&str> {
        if self.peeked.is_none() {
            self.peeked = self.items.next();
        }
        self.peeked.as_ref().map(|t| t.name.as_str())
    }

    fn expect(&mut self, name: &str, dims: &[usize]) -> Result<Vec<f32>, ModelError> {
        self.peek_name();
        let t = self
            .peeked
            .take()
            .ok_or_else(|| ModelError::Format { offset: self.end, reason: format!("missing tensor {name}") })?;
        if t.name != name {
            return Err(ModelError::Format {
                offset: t.offset,
                reason: format!("expected tensor {name}, found {}", t.name),
            });
        }
        if t.dims != dims {
            return Err(ModelError::Format {
                offset: t.offset,
                reason: format!("tensor {name} has shape {:?}, expected {dims:?}", t.dims),
            });
        }
        Ok(t.data)
    }

    fn mlp(&mut self, prefix: &str, activation: Activation) -> Result<Mlp, ModelError> {
        let mut layers = Vec::new();
        loop {
            let weight_name = format!("{prefix}.{}.weight", layers.len());
            if self.peek_name() != Some(weight_name.as_str()) {
                break;
            }
            let t = self.peeked.as_ref().unwrap();
            if t.dims.len() != 2 {
                return Err(ModelError::Format { offset: t.offset, reason: format!("{weight_name} must have rank 2") });
            }
            let (out_dim, in_dim) = (t.dims[0], t.dims[1]);
            let weight = self.expect(&weight_name, &[out_dim, in_dim])?;
            let bias = self.expect(&format!("{prefix}.{}.bias", layers.len()), &[out_dim])?;
            layers.push(Dense { in_dim, out_dim, weight, bias });
        }
        Ok(Mlp { layers, activation })
    }

    fn bn(&mut self, prefix: &str, width: usize) -> Result<BatchNorm, ModelError> {
        Ok(BatchNorm {
            gamma: self.expect(&format!("{prefix}.gamma"), &[width])?,
            beta: self.expect(&format!("{prefix}.beta"), &[width])?,
            running_mean: self.expect(&format!("{prefix}.running_mean"), &[width])?,
            running_var: self.expect(&format!("{prefix}.running_var"), &[width])?,
            eps: self.expect(&format!("{prefix}.eps"), &[1])?[0],
        })
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(r.err(0, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(r.err(4, format!("unsupported weights version {version}")));
    }
    let activation_code = r.u8("activation")?;
    let activation = Activation::from_code(activation_code)
        .ok_or_else(|| r.err(6, format!("unknown activation code {activation_code}")))?;
    let aggregation_code = r.u8("aggregation")?;
    let aggregation = Aggregation::from_code(aggregation_code)
        .ok_or_else(|| r.err(7, format!("unknown aggregation code {aggregation_code}")))?;
    let cardinalities = [r.u16("cardinality 0")?, r.u16("cardinality 1")?];
    let cat_dim = r.u16("cat_dim")? as usize;
    let count = r.u32("tensor count")? as usize;
    let mut items = Vec::with_capacity(count.min(256));
    for _ in 0..count {
        items.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let width = crate::EMBED_DIM;
    let mut t = Tensors { items: items.into_iter(), peeked: None, end: bytes.len() };
    let norm_mean = t.expect("norm.mean", &[NUM_CONTINUOUS])?.try_into().unwrap();
    let norm_scale = t.expect("norm.scale", &[NUM_CONTINUOUS])?.try_into().unwrap();
    let mut cat_embed: [Vec<f32>; NUM_CATEGORICAL] = Default::default();
    for (k, table) in cat_embed.iter_mut().enumerate() {
        *table = t.expect(&format!("cat_embed.{k}"), &[cardinalities[k] as usize, cat_dim])?;
    }
    let stage1_mlp = t.mlp("stage1.mlp", activation)?;
    let stage1_bn = t.bn("stage1.bn", width)?;
    let conv1 = EdgeConvWeights { phi: t.mlp("conv1.phi", activation)?, bn: t.bn("conv1.bn", width)? };
    let conv2 = EdgeConvWeights { phi: t.mlp("conv2.phi", activation)?, bn: t.bn("conv2.bn", width)? };
    let readout_mlp = t.mlp("readout.mlp", activation)?;
    if let Some(extra) = t.peek_name().map(str::to_owned) {
        let offset = t.peeked.as_ref().unwrap().offset;
        return Err(ModelError::Format { offset, reason: format!("unexpected tensor {extra}") });
    }

    let w = ModelWeights {
        activation,
        aggregation,
        cardinalities,
        cat_dim,
        norm_mean,
        norm_scale,
        cat_embed,
        stage1_mlp,
        stage1_bn,
        conv: [conv1, conv2],
        readout_mlp,
    };
    w.validate()?;
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, encode_weights(w)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, ModelError> {
    decode_weights(&fs::read(path)?)
}
