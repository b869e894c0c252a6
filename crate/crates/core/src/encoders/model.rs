//! Exported neural encoders stored as ONNX files.
//!
//! The file must take a float waveform at 16 kHz (`[samples]` or
//! `[1, samples]`) and expose every hidden state, either stacked in one output
//! shaped `[L+1, frames, dim]` (optionally with a leading batch axis of 1) or
//! as one output per layer whose name ends in the layer index, such as
//! `hidden_state_0 .. hidden_state_L`. Metadata properties describe the
//! layers:
//!
//! | key           | value                                             |
//! |---------------|---------------------------------------------------|
//! | `model_id`    | name used in the feature store (default: file stem) |
//! | `layer_count` | number of transformer blocks `L`                  |
//! | `dims`        | one width for all layers, or `L+1` comma-separated |
//!
//! Only the parts of the protobuf needed to validate that contract are
//! decoded here; running the graph needs the `onnx` feature.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prost::Message;

use super::{EncoderError, EncoderHandle};
use crate::framing::FrameSpec;

mod proto {
    //! Subset of `onnx.proto`; unknown fields (nodes, weights) are skipped.

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct ModelProto {
        #[prost(int64, tag = "1")]
        pub ir_version: i64,
        #[prost(string, tag = "2")]
        pub producer_name: String,
        #[prost(message, optional, tag = "7")]
        pub graph: Option<GraphProto>,
        #[prost(message, repeated, tag = "14")]
        pub metadata_props: Vec<StringStringEntryProto>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct StringStringEntryProto {
        #[prost(string, tag = "1")]
        pub key: String,
        #[prost(string, tag = "2")]
        pub value: String,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct GraphProto {
        #[prost(string, tag = "2")]
        pub name: String,
        #[prost(message, repeated, tag = "5")]
        pub initializer: Vec<TensorName>,
        #[prost(message, repeated, tag = "11")]
        pub input: Vec<ValueInfoProto>,
        #[prost(message, repeated, tag = "12")]
        pub output: Vec<ValueInfoProto>,
    }

    /// Only the name of an initializer tensor (field 8 of `TensorProto`).
    #[derive(Clone, PartialEq, prost::Message)]
    pub struct TensorName {
        #[prost(string, tag = "8")]
        pub name: String,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct ValueInfoProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(message, optional, tag = "2")]
        pub r#type: Option<TypeProto>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct TypeProto {
        #[prost(message, optional, tag = "1")]
        pub tensor_type: Option<TensorType>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct TensorType {
        #[prost(int32, tag = "1")]
        pub elem_type: i32,
        #[prost(message, optional, tag = "2")]
        pub shape: Option<TensorShapeProto>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct TensorShapeProto {
        #[prost(message, repeated, tag = "1")]
        pub dim: Vec<Dimension>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct Dimension {
        #[prost(int64, optional, tag = "1")]
        pub dim_value: Option<i64>,
        #[prost(string, optional, tag = "2")]
        pub dim_param: Option<String>,
    }
}

pub(crate) use proto::*;

/// ONNX `TensorProto.DataType.FLOAT`.
const ONNX_FLOAT: i32 = 1;

/// How hidden states leave the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HiddenStateLayout {
    /// One output `[(1,) L+1, frames, dim]`.
    Stacked { output: String, batch_axis: bool },
    /// Output name per layer index.
    PerLayer(BTreeMap<u16, String>),
}

/// What an ONNX export declares about itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub path: PathBuf,
    pub model_id: String,
    pub layer_count: u16,
    pub dims: BTreeMap<u16, usize>,
    pub input: String,
    /// Whether the waveform input has a leading batch axis.
    pub input_batch_axis: bool,
    pub layout: HiddenStateLayout,
}

impl ModelInfo {
    pub fn handle(&self) -> EncoderHandle {
        EncoderHandle {
            model_id: self.model_id.clone(),
            layer_count: self.layer_count,
            dims: self.dims.clone(),
            frame_spec: FrameSpec::default(),
        }
    }
}

fn shape_of(v: &ValueInfoProto) -> Option<Vec<Option<i64>>> {
    let shape = v.r#type.as_ref()?.tensor_type.as_ref()?.shape.as_ref()?;
    Some(shape.dim.iter().map(|d| d.dim_value).collect())
}

/// Layer index at the end of a hidden-state output name.
fn layer_suffix(name: &str) -> Option<u16> {
    let lower = name.to_ascii_lowercase();
    let cut = lower.rfind(|c: char| !c.is_ascii_digit())?;
    let (prefix, digits) = lower.split_at(cut + 1);
    if digits.is_empty() || !prefix.ends_with(['_', '.']) {
        return None;
    }
    let stem = prefix.trim_end_matches(['_', '.']);
    (stem.contains("hidden") || stem.ends_with("layer")).then(|| digits.parse().ok())?
}

fn parse_dims(text: &str, layer_count: u16) -> Result<BTreeMap<u16, usize>, String> {
    let values: Vec<usize> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad dims entry {s:?}"))
        })
        .collect::<Result<_, _>>()?;
    let layers = usize::from(layer_count) + 1;
    match values.len() {
        1 => Ok((0..=layer_count).map(|l| (l, values[0])).collect()),
        n if n == layers => Ok((0..=layer_count).zip(values).collect()),
        n => Err(format!("{n} dims for {layers} layers")),
    }
}

/// Validates an ONNX export against the hidden-state contract without running it.
pub fn inspect_model_bytes(bytes: &[u8], path: &Path) -> Result<ModelInfo, EncoderError> {
    let cap = |reason: String| EncoderError::Capability {
        path: path.display().to_string(),
        reason,
    };
    let model = ModelProto::decode(bytes).map_err(|e| cap(format!("not an ONNX model: {e}")))?;
    let graph = model
        .graph
        .ok_or_else(|| cap("model has no graph".into()))?;
    let meta: BTreeMap<&str, &str> = model
        .metadata_props
        .iter()
        .map(|p| (p.key.as_str(), p.value.as_str()))
        .collect();

    let weights: std::collections::HashSet<&str> =
        graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let input = graph
        .input
        .iter()
        .find(|i| !weights.contains(i.name.as_str()))
        .ok_or_else(|| cap("graph has no waveform input".into()))?;
    let input_batch_axis = match shape_of(input).map(|s| s.len()) {
        Some(1) => false,
        Some(2) | None => true,
        Some(r) => return Err(cap(format!("waveform input {} has rank {r}", input.name))),
    };

    let per_layer: BTreeMap<u16, String> = graph
        .output
        .iter()
        .filter_map(|o| layer_suffix(&o.name).map(|l| (l, o.name.clone())))
        .collect();
    let stacked = graph.output.iter().find(|o| {
        let lower = o.name.to_ascii_lowercase();
        lower == "hidden_states" || lower == "all_hidden_states"
    });

    let declared: Option<u16> = match meta.get("layer_count") {
        Some(v) => Some(
            v.trim()
                .parse()
                .map_err(|_| cap(format!("layer_count {v:?} is not an integer")))?,
        ),
        None => None,
    };

    let (layout, layer_count, inferred_dim) = if let Some(out) = stacked {
        let shape = shape_of(out).unwrap_or_default();
        let batch_axis = shape.len() == 4;
        if !(shape.is_empty() || shape.len() == 3 || batch_axis) {
            return Err(cap(format!(
                "{} has rank {}, expected 3 or 4",
                out.name,
                shape.len()
            )));
        }
        let layer_axis = shape.get(usize::from(batch_axis)).copied().flatten();
        let from_shape = layer_axis.and_then(|n| u16::try_from(n - 1).ok());
        let layer_count = match (declared, from_shape) {
            (Some(d), Some(s)) if d != s => {
                return Err(cap(format!(
                    "layer_count {d} but {} stacks {} layers",
                    out.name,
                    s + 1
                )))
            }
            (Some(d), _) => d,
            (None, Some(s)) => s,
            (None, None) => return Err(cap("layer_count missing and not inferable".into())),
        };
        let dim = shape.last().copied().flatten().map(|d| d as usize);
        (
            HiddenStateLayout::Stacked {
                output: out.name.clone(),
                batch_axis,
            },
            layer_count,
            dim,
        )
    } else if !per_layer.is_empty() {
        let top = *per_layer.keys().max().unwrap();
        let layer_count = declared.unwrap_or(top);
        let missing: Vec<String> = (0..=layer_count)
            .filter(|l| !per_layer.contains_key(l))
            .map(|l| l.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(cap(format!(
                "no hidden-state output for layers {}",
                missing.join(", ")
            )));
        }
        let dim = graph
            .output
            .iter()
            .find(|o| o.name == per_layer[&0])
            .and_then(shape_of)
            .and_then(|s| s.last().copied().flatten())
            .map(|d| d as usize);
        (HiddenStateLayout::PerLayer(per_layer), layer_count, dim)
    } else {
        return Err(cap("model exposes no hidden-state outputs".into()));
    };
    if layer_count == 0 {
        return Err(cap("layer_count must be at least 1".into()));
    }

    let dims = match meta.get("dims") {
        Some(text) => parse_dims(text, layer_count).map_err(cap)?,
        None => match inferred_dim {
            Some(d) if d > 0 => (0..=layer_count).map(|l| (l, d)).collect(),
            _ => {
                return Err(cap(
                    "dims missing and not inferable from output shapes".into()
                ))
            }
        },
    };
    let model_id = meta
        .get("model_id")
        .map(|s| s.to_string())
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "model".into());

    Ok(ModelInfo {
        path: path.to_owned(),
        model_id,
        layer_count,
        dims,
        input: input.name.clone(),
        input_batch_axis,
        layout,
    })
}

pub fn inspect_model(path: impl AsRef<Path>) -> Result<ModelInfo, EncoderError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(EncoderError::MissingModel {
            path: path.display().to_string(),
        });
    }
    let bytes = std::fs::read(path).map_err(|e| crate::store::io_err(path, e))?;
    inspect_model_bytes(&bytes, path)
}

/// Builders for small contract-conforming model descriptions, used by tests
/// and by the documentation.
pub mod fixture {
    use super::*;

    fn tensor(name: &str, dims: &[Option<i64>]) -> ValueInfoProto {
        ValueInfoProto {
            name: name.into(),
            r#type: Some(TypeProto {
                tensor_type: Some(TensorType {
                    elem_type: ONNX_FLOAT,
                    shape: Some(TensorShapeProto {
                        dim: dims
                            .iter()
                            .map(|d| Dimension {
                                dim_value: *d,
                                dim_param: d.is_none().then(|| "n".to_string()),
                            })
                            .collect(),
                    }),
                }),
            }),
        }
    }

    mod graph {
        //! Write-side messages for building runnable graphs.

        use super::{StringStringEntryProto, ValueInfoProto};

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct Model {
            #[prost(int64, tag = "1")]
            pub ir_version: i64,
            #[prost(string, tag = "2")]
            pub producer_name: String,
            #[prost(message, optional, tag = "7")]
            pub graph: Option<Graph>,
            #[prost(message, repeated, tag = "8")]
            pub opset_import: Vec<OpsetId>,
            #[prost(message, repeated, tag = "14")]
            pub metadata_props: Vec<StringStringEntryProto>,
        }

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct OpsetId {
            #[prost(string, tag = "1")]
            pub domain: String,
            #[prost(int64, tag = "2")]
            pub version: i64,
        }

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct Graph {
            #[prost(message, repeated, tag = "1")]
            pub node: Vec<Node>,
            #[prost(string, tag = "2")]
            pub name: String,
            #[prost(message, repeated, tag = "5")]
            pub initializer: Vec<Tensor>,
            #[prost(message, repeated, tag = "11")]
            pub input: Vec<ValueInfoProto>,
            #[prost(message, repeated, tag = "12")]
            pub output: Vec<ValueInfoProto>,
        }

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct Node {
            #[prost(string, repeated, tag = "1")]
            pub input: Vec<String>,
            #[prost(string, repeated, tag = "2")]
            pub output: Vec<String>,
            #[prost(string, tag = "3")]
            pub name: String,
            #[prost(string, tag = "4")]
            pub op_type: String,
            #[prost(message, repeated, tag = "5")]
            pub attribute: Vec<Attribute>,
        }

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct Attribute {
            #[prost(string, tag = "1")]
            pub name: String,
            #[prost(int64, tag = "3")]
            pub i: i64,
            #[prost(int64, repeated, tag = "8")]
            pub ints: Vec<i64>,
            #[prost(int32, tag = "20")]
            pub r#type: i32,
        }

        #[derive(Clone, PartialEq, prost::Message)]
        pub struct Tensor {
            #[prost(int64, repeated, tag = "1")]
            pub dims: Vec<i64>,
            #[prost(int32, tag = "2")]
            pub data_type: i32,
            #[prost(float, repeated, tag = "4")]
            pub float_data: Vec<f32>,
            #[prost(int64, repeated, tag = "7")]
            pub int64_data: Vec<i64>,
            #[prost(string, tag = "8")]
            pub name: String,
        }
    }

    const ATTR_INT: i32 = 2;
    const ATTR_INTS: i32 = 7;
    const ONNX_INT64: i32 = 7;

    fn node(op: &str, inputs: &[&str], output: &str, attrs: Vec<graph::Attribute>) -> graph::Node {
        graph::Node {
            input: inputs.iter().map(|s| s.to_string()).collect(),
            output: vec![output.into()],
            name: output.into(),
            op_type: op.into(),
            attribute: attrs,
        }
    }

    fn ints(name: &str, v: &[i64]) -> graph::Attribute {
        graph::Attribute {
            name: name.into(),
            ints: v.to_vec(),
            r#type: ATTR_INTS,
            ..Default::default()
        }
    }

    fn int(name: &str, v: i64) -> graph::Attribute {
        graph::Attribute {
            name: name.into(),
            i: v,
            r#type: ATTR_INT,
            ..Default::default()
        }
    }

    fn floats(name: &str, dims: &[i64], data: Vec<f32>) -> graph::Tensor {
        graph::Tensor {
            dims: dims.to_vec(),
            data_type: ONNX_FLOAT,
            float_data: data,
            name: name.into(),
            ..Default::default()
        }
    }

    /// Weights of [`tiny_encoder_bytes`]: a strided convolution producing
    /// layer 0 and `layer_count` blocks `h_k = tanh(h_{k-1} W_k)`.
    #[derive(Debug, Clone, PartialEq)]
    pub struct TinyEncoder {
        pub dim: usize,
        /// `dim x window`, row-major.
        pub conv: Vec<f32>,
        pub conv_bias: Vec<f32>,
        /// One `dim x dim` matrix per block, row-major `[in][out]`.
        pub blocks: Vec<Vec<f32>>,
    }

    impl TinyEncoder {
        /// Seeded weights.
        pub fn new(layer_count: usize, dim: usize, seed: u64) -> Self {
            let window = crate::framing::FrameSpec::default().window_samples;
            let mut rng = crate::rng::Xorshift64Star::new(seed);
            let mut draw = |n: usize, scale: f64| -> Vec<f32> {
                (0..n).map(|_| rng.uniform(-scale, scale) as f32).collect()
            };
            let conv = draw(dim * window, 0.1);
            let conv_bias = draw(dim, 0.1);
            let blocks = (0..layer_count)
                .map(|_| draw(dim * dim, 1.0 / (dim as f64).sqrt()))
                .collect();
            Self {
                dim,
                conv,
                conv_bias,
                blocks,
            }
        }
    }

    /// A runnable ONNX encoder with a `[1, n]` waveform input. `stacked`
    /// selects one `hidden_states` output `[1, L+1, frames, dim]` over
    /// per-layer outputs `hidden_state_k` `[1, frames, dim]`.
    pub fn tiny_encoder_bytes(enc: &TinyEncoder, model_id: &str, stacked: bool) -> Vec<u8> {
        let spec = crate::framing::FrameSpec::default();
        let (d, window) = (enc.dim as i64, spec.window_samples as i64);
        let layers = enc.blocks.len();
        let mut init = vec![
            graph::Tensor {
                dims: vec![1],
                data_type: ONNX_INT64,
                int64_data: vec![1],
                name: "axis1".into(),
                ..Default::default()
            },
            floats("conv_w", &[d, 1, window], enc.conv.clone()),
            floats("conv_b", &[d], enc.conv_bias.clone()),
        ];
        let mut nodes = vec![
            node("Unsqueeze", &["waveform", "axis1"], "x3", vec![]),
            node(
                "Conv",
                &["x3", "conv_w", "conv_b"],
                "conv",
                vec![
                    ints("kernel_shape", &[window]),
                    ints("strides", &[spec.stride_samples as i64]),
                ],
            ),
            node(
                "Transpose",
                &["conv"],
                "hidden_state_0",
                vec![ints("perm", &[0, 2, 1])],
            ),
        ];
        for (k, w) in enc.blocks.iter().enumerate() {
            let k = k + 1;
            init.push(floats(&format!("w{k}"), &[d, d], w.clone()));
            nodes.push(node(
                "MatMul",
                &[&format!("hidden_state_{}", k - 1), &format!("w{k}")],
                &format!("mm{k}"),
                vec![],
            ));
            nodes.push(node(
                "Tanh",
                &[&format!("mm{k}")],
                &format!("hidden_state_{k}"),
                vec![],
            ));
        }
        let outputs = if stacked {
            for k in 0..=layers {
                nodes.push(node(
                    "Unsqueeze",
                    &[&format!("hidden_state_{k}"), "axis1"],
                    &format!("s{k}"),
                    vec![],
                ));
            }
            let parts: Vec<String> = (0..=layers).map(|k| format!("s{k}")).collect();
            let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
            nodes.push(node(
                "Concat",
                &parts,
                "hidden_states",
                vec![int("axis", 1)],
            ));
            vec![tensor(
                "hidden_states",
                &[Some(1), Some(layers as i64 + 1), None, Some(d)],
            )]
        } else {
            (0..=layers)
                .map(|k| tensor(&format!("hidden_state_{k}"), &[Some(1), None, Some(d)]))
                .collect()
        };
        let meta = [
            ("model_id", model_id.to_string()),
            ("layer_count", layers.to_string()),
            ("dims", enc.dim.to_string()),
        ];
        graph::Model {
            ir_version: 8,
            producer_name: "fixture".into(),
            graph: Some(graph::Graph {
                node: nodes,
                name: "tiny".into(),
                initializer: init,
                input: vec![tensor("waveform", &[Some(1), None])],
                output: outputs,
            }),
            opset_import: vec![graph::OpsetId {
                domain: String::new(),
                version: 13,
            }],
            metadata_props: meta
                .iter()
                .map(|(k, v)| StringStringEntryProto {
                    key: (*k).into(),
                    value: v.clone(),
                })
                .collect(),
        }
        .encode_to_vec()
    }

    /// Header-only ONNX bytes: a `[1, n]` waveform input, the given outputs
    /// (name, shape; `None` = symbolic) and metadata entries. No graph nodes.
    pub fn onnx_bytes(outputs: &[(&str, Vec<Option<i64>>)], metadata: &[(&str, &str)]) -> Vec<u8> {
        ModelProto {
            ir_version: 8,
            producer_name: "fixture".into(),
            graph: Some(GraphProto {
                name: "encoder".into(),
                initializer: vec![],
                input: vec![tensor("waveform", &[Some(1), None])],
                output: outputs.iter().map(|(n, s)| tensor(n, s)).collect(),
            }),
            metadata_props: metadata
                .iter()
                .map(|(k, v)| StringStringEntryProto {
                    key: (*k).into(),
                    value: (*v).into(),
                })
                .collect(),
        }
        .encode_to_vec()
    }
}
