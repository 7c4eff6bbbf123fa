//! Two-stage parameter set, detector settings, and the params file format.
//!
//! Params files start with the magic `BEVUNCP1`, a little-endian `u32`
//! version and tensor count, then one shape-table entry per tensor
//! (`u32` name length, name bytes, `u32` rank, `u32` dims). The tensor data
//! follows as little-endian `f32` in table order.

use std::fs;
use std::path::Path;

use super::features::FeatureConfig;
use super::net::{Stage, StageShape};
use crate::codec::{LOC_DIM, ORIENT_DIM, RPN_DIM};
use crate::error::{Error, Result};

/// Output width of the second stage: corners and heights, then heading.
pub const FRH_OUT: usize = LOC_DIM + ORIENT_DIM;

/// Everything the detector needs besides learned weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub rpn_features: FeatureConfig,
    pub frh_features: FeatureConfig,
    pub anchor_stride: usize,
    pub anchor_clusters: usize,
    pub ground_z: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub frh_pos_iou: f64,
    pub frh_neg_iou: f64,
    /// Stage-1 negatives sampled per training scene.
    pub rpn_neg_per_scene: usize,
    /// Axis-aligned IoU threshold for proposal suppression.
    pub nms_iou: f64,
    /// Stage-2 training candidates drawn per scene.
    pub proposals_train: usize,
    /// Proposals passed to stage 2 at inference.
    pub proposals_test: usize,
    /// Rotated IoU threshold for suppressing final detections.
    pub final_nms_iou: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            rpn_features: FeatureConfig {
                pool_bins: 6,
                margin: 1.25,
            },
            frh_features: FeatureConfig {
                pool_bins: 8,
                margin: 1.5,
            },
            anchor_stride: 2,
            anchor_clusters: 2,
            ground_z: 0.0,
            rpn_pos_iou: 0.5,
            rpn_neg_iou: 0.3,
            frh_pos_iou: 0.65,
            frh_neg_iou: 0.55,
            rpn_neg_per_scene: 128,
            nms_iou: 0.8,
            proposals_train: 256,
            proposals_test: 64,
            final_nms_iou: 0.1,
            score_threshold: 0.05,
            max_detections: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub anchor_dims: Vec<[f64; 3]>,
    pub rpn: Stage,
    pub frh: Stage,
}

impl ModelParams {
    pub fn init(num_slices: usize, det: &DetectorConfig, hidden: (usize, usize), anchor_dims: Vec<[f64; 3]>, seed: u64) -> Self {
        let rpn = Stage::init(
            StageShape {
                input: det.rpn_features.dim(num_slices),
                hidden: hidden.0,
                output: RPN_DIM,
            },
            seed,
        );
        let frh = Stage::init(
            StageShape {
                input: det.frh_features.dim(num_slices),
                hidden: hidden.1,
                output: FRH_OUT,
            },
            seed ^ 0x5eed_f00d,
        );
        ModelParams { anchor_dims, rpn, frh }
    }

    pub fn is_finite(&self) -> bool {
        [&self.rpn, &self.frh].iter().all(|s| {
            s.params
                .iter()
                .chain(&s.feature_mean)
                .chain(&s.feature_scale)
                .chain(&s.target_scale)
                .all(|v| v.is_finite())
        }) && self.anchor_dims.iter().flatten().all(|v| v.is_finite())
    }
}

const MAGIC: &[u8; 8] = b"BEVUNCP1";
const VERSION: u32 = 1;

struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn stage_tensors(prefix: &str, st: &Stage, out: &mut Vec<Tensor>) {
    let s = st.shape;
    let mut push = |name: &str, dims: Vec<usize>, data: &[f64]| {
        out.push(Tensor {
            name: format!("{prefix}.{name}"),
            dims,
            data: data.to_vec(),
        })
    };
    push("feature_mean", vec![s.input], &st.feature_mean);
    push("feature_scale", vec![s.input], &st.feature_scale);
    push("target_scale", vec![s.output], &st.target_scale);
    push("w1", vec![s.hidden, s.input], &st.params[s.w1()]);
    push("b1", vec![s.hidden], &st.params[s.b1()]);
    push("wc", vec![2, s.hidden], &st.params[s.wc()]);
    push("bc", vec![2], &st.params[s.bc()]);
    push("wr", vec![s.output, s.hidden], &st.params[s.wr()]);
    push("br", vec![s.output], &st.params[s.br()]);
    push("wv", vec![s.output, s.hidden], &st.params[s.wv()]);
    push("bv", vec![s.output], &st.params[s.bv()]);
}

pub fn encode_params(p: &ModelParams) -> Vec<u8> {
    let mut tensors = vec![Tensor {
        name: "anchor_dims".into(),
        dims: vec![p.anchor_dims.len(), 3],
        data: p.anchor_dims.iter().flatten().copied().collect(),
    }];
    stage_tensors("rpn", &p.rpn, &mut tensors);
    stage_tensors("frh", &p.frh, &mut tensors);

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in &tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(None, "params file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn expect_dims(t: &Tensor, dims: &[usize]) -> Result<()> {
    if t.dims != dims {
        return Err(Error::Shape(format!(
            "tensor {} has shape {:?}, expected {:?}",
            t.name, t.dims, dims
        )));
    }
    Ok(())
}

fn read_stage(prefix: &str, it: &mut impl Iterator<Item = Tensor>) -> Result<Stage> {
    let mut next = |name: &str| -> Result<Tensor> {
        let t = it
            .next()
            .ok_or_else(|| Error::format(None, format!("missing tensor {prefix}.{name}")))?;
        if t.name != format!("{prefix}.{name}") {
            return Err(Error::format(
                None,
                format!("expected tensor {prefix}.{name}, found {}", t.name),
            ));
        }
        Ok(t)
    };
    let mean = next("feature_mean")?;
    let scale = next("feature_scale")?;
    let target_scale = next("target_scale")?;
    let w1 = next("w1")?;
    if w1.dims.len() != 2 || mean.dims.len() != 1 {
        return Err(Error::Shape(format!("bad rank for {prefix} tensors")));
    }
    let (hidden, input) = (w1.dims[0], w1.dims[1]);
    expect_dims(&mean, &[input])?;
    expect_dims(&scale, &[input])?;
    let b1 = next("b1")?;
    expect_dims(&b1, &[hidden])?;
    let wc = next("wc")?;
    expect_dims(&wc, &[2, hidden])?;
    let bc = next("bc")?;
    expect_dims(&bc, &[2])?;
    let wr = next("wr")?;
    let output = wr.dims.first().copied().unwrap_or(0);
    expect_dims(&wr, &[output, hidden])?;
    let rest = [next("br")?, next("wv")?, next("bv")?];
    expect_dims(&rest[0], &[output])?;
    expect_dims(&rest[1], &[output, hidden])?;
    expect_dims(&rest[2], &[output])?;
    expect_dims(&target_scale, &[output])?;
    let shape = StageShape { input, hidden, output };
    let mut params = Vec::with_capacity(shape.num_params());
    for t in [&w1, &b1, &wc, &bc, &wr, &rest[0], &rest[1], &rest[2]] {
        params.extend_from_slice(&t.data);
    }
    Ok(Stage {
        shape,
        feature_mean: mean.data,
        feature_scale: scale.data,
        target_scale: target_scale.data,
        params,
    })
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format(None, "not a params file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(None, format!("unsupported params version {version}")));
    }
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::format(None, "tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        table.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, dims) in table {
        let len: usize = dims.iter().product();
        let raw = r.take(len * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(None, format!("non-finite value in tensor {name}")));
        }
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(None, "trailing bytes after params data"));
    }
    let mut it = tensors.into_iter();
    let anchors = it
        .next()
        .filter(|t| t.name == "anchor_dims" && t.dims.len() == 2 && t.dims[1] == 3)
        .ok_or_else(|| Error::format(None, "missing anchor_dims tensor"))?;
    let anchor_dims = anchors.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let rpn = read_stage("rpn", &mut it)?;
    let frh = read_stage("frh", &mut it)?;
    if it.next().is_some() {
        return Err(Error::format(None, "unexpected extra tensors"));
    }
    Ok(ModelParams { anchor_dims, rpn, frh })
}

pub fn save_params(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(p)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

/// Rounds every stored value through `f32`, matching what a save/load cycle
/// produces.
pub fn quantize(p: &ModelParams) -> ModelParams {
    decode_params(&encode_params(p)).expect("encoded params decode")
}
