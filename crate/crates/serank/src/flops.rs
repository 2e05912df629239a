//! Static floating-point-operation accounting for one forward pass at a
//! given input shape. Convention: a multiply-add counts as 2 FLOPs
//! (`FC in -> out over R rows = 2*R*in*out + R*out bias adds`), elementwise
//! ops and activations count one per value, pooling one per pooled value,
//! batch norm 4 per value. Pure data movement (concat, gather) is free.
//! Reported ratios are insensitive to the global constant.

use crate::error::Result;
use crate::model::{plan, BlockKind, BlockPlan, ModelSpec, Variant};
use std::io::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub per_layer: Vec<(String, u64)>,
    pub total: u64,
    pub input_shape: (usize, usize),
}

impl FlopsReport {
    /// `layer<TAB>flops` lines plus a TOTAL line.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (name, count) in &self.per_layer {
            writeln!(w, "{name}\t{count}")?;
        }
        writeln!(w, "TOTAL\t{}", self.total)
    }
}

fn fc(rows: usize, fan_in: usize, fan_out: usize) -> u64 {
    (2 * rows * fan_in * fan_out + rows * fan_out) as u64
}

fn fc_nobias(rows: usize, fan_in: usize, fan_out: usize) -> u64 {
    (2 * rows * fan_in * fan_out) as u64
}

fn block_cost(b: &BlockPlan, l: usize) -> u64 {
    let (w, h) = (b.width, b.bottleneck);
    match b.kind {
        // pool L*w, two bottleneck products on one row with their
        // activations, rescale L*w
        BlockKind::Se => {
            (l * w) as u64 + fc_nobias(1, w, h) + h as u64 + fc_nobias(1, h, w) + w as u64
                + (l * w) as u64
        }
        // per-document reduction + relu, pool the bottleneck, expand on one
        // row, gate, rescale
        BlockKind::SeB => {
            fc_nobias(l, w, h)
                + (l * h) as u64
                + (l * h) as u64
                + fc_nobias(1, h, w)
                + w as u64
                + (l * w) as u64
        }
        // both products per document, per-document gate and rescale
        BlockKind::NoSqueeze => {
            fc_nobias(l, w, h) + (l * h) as u64 + fc_nobias(l, h, w) + (l * w) as u64
                + (l * w) as u64
        }
        // the SE-b gate path; the concatenation itself moves data only
        BlockKind::NoExcitation => {
            fc_nobias(l, w, h) + (l * h) as u64 + (l * h) as u64 + fc_nobias(1, h, w) + w as u64
        }
    }
}

/// Count a forward pass of `spec` on a `docs x channels` query.
pub fn count_flops(spec: &ModelSpec, docs: usize, channels: usize) -> Result<FlopsReport> {
    let mut spec = spec.clone();
    spec.input_width = channels;
    let plan = plan(&spec)?;
    let l = docs;
    let mut per_layer: Vec<(String, u64)> = Vec::new();

    if let Some(b) = &plan.input_block {
        per_layer.push((b.name.clone(), block_cost(b, l)));
    }
    let rows = l; // GSF builds L circular groups, one row each
    for layer in &plan.layers {
        let i = layer.index;
        per_layer.push((format!("fc{i}"), fc(rows, layer.fan_in, layer.width)));
        if layer.batch_norm {
            per_layer.push((format!("bn{i}"), (4 * rows * layer.width) as u64));
        }
        per_layer.push((format!("relu{i}"), (rows * layer.width) as u64));
        if let Some(b) = &layer.block {
            per_layer.push((b.name.clone(), block_cost(b, l)));
        }
    }
    per_layer.push(("out".into(), fc(rows, plan.out_in, plan.out_dim)));
    if spec.variant == Variant::Gsf && spec.group_size > 1 {
        per_layer.push(("aggregate".into(), (l * spec.group_size) as u64));
    }

    let total = per_layer.iter().map(|(_, c)| c).sum();
    Ok(FlopsReport {
        per_layer,
        total,
        input_shape: (docs, channels),
    })
}
