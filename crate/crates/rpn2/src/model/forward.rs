use super::params::{Init, Reader};
use super::{
    Component, HeadConfig, LayerConfig, ModelConfig, ParameterStore, Processor, Slot, StationSpec,
};
use crate::error::{Error, Result};
use crate::fusion::FusionSpec;
use crate::interdependence::{
    DispatchAxis, InterdependenceKind, InterdependenceMatrix, InterdependenceSpec,
};
use crate::numeric_core::{Axis, Tape, Var};
use crate::reconciliation::ReconciliationSpec;
use crate::Matrix;

/// Supplies the `1×len` parameter node of a slot.
pub(crate) trait ParamSource {
    fn take(&mut self, tape: &mut Tape, slot: Slot, len: usize, init: Init) -> Result<Var>;
}

/// Zero-length slots are not stored.
fn take(
    tape: &mut Tape,
    src: &mut dyn ParamSource,
    slot: Slot,
    len: usize,
    init: Init,
) -> Result<Var> {
    if len == 0 {
        Ok(tape.constant(Matrix::zeros(1, 0)))
    } else {
        src.take(tape, slot, len, init)
    }
}

/// A station matrix captured during a forward pass, with the batch it was
/// applied to.
#[derive(Clone, Debug)]
pub(crate) struct StationRecord {
    pub slot: Slot,
    pub matrix: InterdependenceMatrix,
    pub input: Matrix,
}

pub(crate) type Probe<'a> = Option<&'a mut Vec<StationRecord>>;

fn in_station(station: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Shape {
            context,
            expected,
            found,
        } => Error::Shape {
            context: format!("{station}: {context}"),
            expected,
            found,
        },
        other => other,
    }
}

fn apply_processors(tape: &mut Tape, mut x: Var, processors: &[Processor]) -> Result<Var> {
    for p in processors {
        x = match *p {
            Processor::Sigmoid => tape.sigmoid(x),
            Processor::Tanh => tape.tanh(x),
            Processor::Relu => tape.relu(x),
            Processor::Softmax => tape.softmax(x, Axis::Row, 1.0),
            Processor::Reshape { cols } => {
                let len = tape.value(x).len();
                if cols == 0 || !len.is_multiple_of(cols) {
                    return Err(crate::error::shape_err(
                        "reshape processor",
                        format!("divisor of {len}"),
                        cols,
                    ));
                }
                tape.reshape(x, len / cols, cols)?
            }
        };
    }
    Ok(x)
}

fn interdependence_fan_in(kind: &InterdependenceKind, (r, c): (usize, usize)) -> usize {
    match kind {
        InterdependenceKind::Bilinear | InterdependenceKind::LowRankBilinear { .. } => r,
        InterdependenceKind::RpnHead { .. } => r * c,
        _ => c,
    }
}

fn fusion_init(fusion: &FusionSpec, widths: &[usize]) -> Init {
    match fusion {
        FusionSpec::WeightedSum { weights, .. } => Init::Values(weights.clone()),
        _ => Init::Uniform {
            fan_in: widths.iter().sum(),
        },
    }
}

fn fuse(
    tape: &mut Tape,
    fusion: &FusionSpec,
    inputs: &[Var],
    slot: Slot,
    src: &mut dyn ParamSource,
) -> Result<Var> {
    let widths: Vec<usize> = inputs.iter().map(|&v| tape.value(v).cols()).collect();
    let len = fusion.param_length(&widths);
    let params = take(tape, src, slot, len, fusion_init(fusion, &widths))?;
    fusion.fuse_on_tape(tape, inputs, params)
}

struct Station<'a> {
    name: &'static str,
    spec: &'a StationSpec,
    axis: DispatchAxis,
    component: Component,
}

fn run_station(
    tape: &mut Tape,
    x: Var,
    station: &Station,
    slot: Slot,
    src: &mut dyn ParamSource,
    probe: &mut Probe,
) -> Result<Var> {
    let spec = InterdependenceSpec {
        kind: station.spec.kind.clone(),
        axis: station.axis,
        post_norm: station.spec.post_norm,
    };
    let slot = Slot {
        component: station.component,
        ..slot
    };
    let dims = spec.dispatched_dims(tape.value(x).shape());
    let len = spec
        .kind
        .param_length(dims)
        .map_err(in_station(station.name))?;
    let fan_in = interdependence_fan_in(&spec.kind, dims);
    let params = take(tape, src, slot, len, Init::Uniform { fan_in })?;
    let a = spec
        .build_on_tape(tape, x, params)
        .map_err(in_station(station.name))?;
    if let Some(records) = probe.as_deref_mut() {
        records.push(StationRecord {
            slot,
            matrix: a.value(tape),
            input: tape.value(x).clone(),
        });
    }
    match station.axis {
        DispatchAxis::Attribute => a.apply_attribute(tape, x),
        DispatchAxis::Instance => a.apply_instance(tape, x),
    }
    .map_err(in_station(station.name))
}

fn channel_forward(
    tape: &mut Tape,
    x: Var,
    processed: Var,
    head: &HeadConfig,
    slot: Slot,
    src: &mut dyn ParamSource,
    probe: &mut Probe,
) -> Result<Var> {
    let s = &head.interdependence;
    let prior = [
        (
            &s.attr_prior,
            "attr_prior",
            DispatchAxis::Attribute,
            Component::AttrPrior,
        ),
        (
            &s.inst_prior,
            "inst_prior",
            DispatchAxis::Instance,
            Component::InstPrior,
        ),
    ];
    let post = [
        (
            &s.attr_post,
            "attr_post",
            DispatchAxis::Attribute,
            Component::AttrPost,
        ),
        (
            &s.inst_post,
            "inst_post",
            DispatchAxis::Instance,
            Component::InstPost,
        ),
    ];
    let mut z = processed;
    for (spec, name, axis, component) in prior {
        if let Some(spec) = spec {
            let station = Station {
                name,
                spec,
                axis,
                component,
            };
            z = run_station(tape, z, &station, slot, src, probe)?;
        }
    }
    z = head
        .transform
        .apply_on_tape(tape, z)
        .map_err(in_station("transform"))?;
    z = apply_processors(tape, z, &head.processors.expansion)
        .map_err(in_station("expansion processors"))?;
    for (spec, name, axis, component) in post {
        if let Some(spec) = spec {
            let station = Station {
                name,
                spec,
                axis,
                component,
            };
            z = run_station(tape, z, &station, slot, src, probe)?;
        }
    }
    let dim = tape.value(z).cols();
    let recon = ReconciliationSpec::new(head.reconciliation.clone(), head.output_dim, dim);
    let len = recon.param_length();
    let w_slot = Slot {
        component: Component::Reconciliation,
        ..slot
    };
    let w = take(tape, src, w_slot, len, Init::Uniform { fan_in: dim })?;
    let psi = recon
        .reconcile_on_tape(tape, w)
        .map_err(in_station("reconciliation"))?;
    let psi_t = tape.transpose(psi);
    let inner = tape.matmul(z, psi_t).map_err(in_station("inner product"))?;
    let inner = apply_processors(tape, inner, &head.processors.inner)
        .map_err(in_station("inner processors"))?;
    let width = tape.value(inner).cols();
    let rest = head
        .remainder
        .apply_on_tape(tape, x, width)
        .map_err(in_station("remainder"))?;
    tape.add(inner, rest).map_err(in_station("remainder"))
}

pub(crate) fn head_forward_with(
    tape: &mut Tape,
    x: Var,
    head: &HeadConfig,
    channel_fusion: &FusionSpec,
    (layer, index): (usize, usize),
    src: &mut dyn ParamSource,
    probe: &mut Probe,
) -> Result<Var> {
    if head.channels == 0 {
        return Err(Error::InvalidParameter(
            "a head needs at least one channel".into(),
        ));
    }
    let processed = apply_processors(tape, x, &head.processors.input)
        .map_err(in_station("input processors"))?;
    let mut outputs = Vec::with_capacity(head.channels);
    for c in 0..head.channels {
        let slot = Slot {
            layer,
            head: Some(index),
            channel: Some(c),
            component: Component::Reconciliation,
        };
        outputs.push(channel_forward(tape, x, processed, head, slot, src, probe)?);
    }
    let fusion_slot = Slot {
        layer,
        head: Some(index),
        channel: None,
        component: Component::ChannelFusion,
    };
    let fused = fuse(tape, channel_fusion, &outputs, fusion_slot, src)
        .map_err(in_station("channel fusion"))?;
    apply_processors(tape, fused, &head.processors.output).map_err(in_station("output processors"))
}

pub(crate) fn layer_forward_with(
    tape: &mut Tape,
    x: Var,
    layer: &LayerConfig,
    index: usize,
    src: &mut dyn ParamSource,
    probe: &mut Probe,
) -> Result<Var> {
    if layer.heads.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "layer {index} has no heads"
        )));
    }
    let mut outputs = Vec::with_capacity(layer.heads.len());
    for (h, head) in layer.heads.iter().enumerate() {
        outputs.push(head_forward_with(
            tape,
            x,
            head,
            &layer.channel_fusion,
            (index, h),
            src,
            probe,
        )?);
    }
    let slot = Slot {
        layer: index,
        head: None,
        channel: None,
        component: Component::HeadFusion,
    };
    fuse(tape, &layer.head_fusion, &outputs, slot, src).map_err(in_station("head fusion"))
}

pub(crate) fn model_forward_with(
    tape: &mut Tape,
    model: &ModelConfig,
    x: Var,
    src: &mut dyn ParamSource,
    mut probe: Probe,
) -> Result<Var> {
    let mut h = x;
    for (k, layer) in model.layers.iter().enumerate() {
        h = layer_forward_with(tape, h, layer, k, src, &mut probe)?;
    }
    Ok(h)
}

/// Records the model on `tape`. `params` is the `1×L` node of the whole store.
pub fn model_forward_on_tape(
    tape: &mut Tape,
    model: &ModelConfig,
    store: &ParameterStore,
    x: Var,
    params: Var,
) -> Result<Var> {
    let mut reader = Reader::new(store, params);
    model_forward_with(tape, model, x, &mut reader, None)
}

pub(crate) fn model_forward_probed(
    model: &ModelConfig,
    store: &ParameterStore,
    x: &Matrix,
    records: &mut Vec<StationRecord>,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = tape.constant(Matrix::row_vector(store.values().to_vec()));
    let mut reader = Reader::new(store, pv);
    let out = model_forward_with(&mut tape, model, xv, &mut reader, Some(records))?;
    Ok(tape.value(out).clone())
}

fn with_reader(
    store: &ParameterStore,
    x: &Matrix,
    f: impl FnOnce(&mut Tape, Var, &mut Reader) -> Result<Var>,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = tape.constant(Matrix::row_vector(store.values().to_vec()));
    let mut reader = Reader::new(store, pv);
    let out = f(&mut tape, xv, &mut reader)?;
    Ok(tape.value(out).clone())
}

pub fn model_forward(model: &ModelConfig, store: &ParameterStore, x: &Matrix) -> Result<Matrix> {
    with_reader(store, x, |tape, xv, reader| {
        model_forward_with(tape, model, xv, reader, None)
    })
}

/// Layer `index` applied to its own input `x`.
pub fn layer_forward(
    model: &ModelConfig,
    store: &ParameterStore,
    index: usize,
    x: &Matrix,
) -> Result<Matrix> {
    let layer = model
        .layers
        .get(index)
        .ok_or_else(|| Error::OutOfRange(format!("layer {index}")))?;
    with_reader(store, x, |tape, xv, reader| {
        layer_forward_with(tape, xv, layer, index, reader, &mut None)
    })
}

/// Head `head` of layer `layer` applied to the layer input `x`.
pub fn head_forward(
    model: &ModelConfig,
    store: &ParameterStore,
    (layer, head): (usize, usize),
    x: &Matrix,
) -> Result<Matrix> {
    let config = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::OutOfRange(format!("layer {layer}")))?;
    let h = config
        .heads
        .get(head)
        .ok_or_else(|| Error::OutOfRange(format!("head {head} of layer {layer}")))?;
    with_reader(store, x, |tape, xv, reader| {
        head_forward_with(
            tape,
            xv,
            h,
            &config.channel_fusion,
            (layer, head),
            reader,
            &mut None,
        )
    })
}
