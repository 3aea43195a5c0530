//! Shape-resolved layer table with parameter and FLOP accounting.
//!
//! FLOP convention, per processed 300 ms window (one time step for the BGRU):
//! - multiply-accumulate = 2 FLOPs
//! - bias additions: 1 per output element, only when `FlopConvention::bias`
//! - activations (relu/sigmoid/tanh/softmax): 1 per element when `activations`
//! - other elementwise work (normalisation, rescale, pooling comparisons, GRU
//!   gate mixing) is always counted, 1 per operation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopConvention {
    pub bias: bool,
    pub activations: bool,
}

impl Default for FlopConvention {
    fn default() -> Self {
        Self { bias: false, activations: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub out_shape: Vec<usize>,
    pub params: usize,
    pub macs: u64,
    pub bias_adds: u64,
    pub activations: u64,
    pub other: u64,
}

impl LayerInfo {
    pub fn flops(&self, c: FlopConvention) -> u64 {
        2 * self.macs
            + if c.bias { self.bias_adds } else { 0 }
            + if c.activations { self.activations } else { 0 }
            + self.other
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub layers: Vec<LayerInfo>,
}

impl LayerGraph {
    fn push(&mut self, name: String, kind: &str, out: &[usize], params: usize, macs: u64, bias: u64, act: u64, other: u64) {
        self.layers.push(LayerInfo {
            name,
            kind: kind.into(),
            out_shape: out.to_vec(),
            params,
            macs,
            bias_adds: bias,
            activations: act,
            other,
        });
    }

    pub fn rescale(&mut self, name: String, c: usize, l: usize) {
        self.push(name, "rescale", &[c, l], 0, 0, 0, 0, (c * l) as u64);
    }

    pub fn norm(&mut self, name: String, c: usize, l: usize) {
        self.push(name, "normalization", &[c, l], 2 * c + 1, 0, 0, 0, 2 * (c * l) as u64);
    }

    pub fn conv(&mut self, name: String, c: usize, lo: usize, filters: usize, k: usize) {
        let out = (filters * lo) as u64;
        self.push(name, "conv1d+relu", &[filters, lo], filters * (c * k + 1), out * (c * k) as u64, out, out, 0);
    }

    pub fn pool(&mut self, name: String, c: usize, lo: usize, p: usize) {
        self.push(name, "maxpool1d", &[c, lo], 0, 0, 0, 0, (c * lo * (p - 1)) as u64);
    }

    pub fn global_pool(&mut self, name: String, c: usize, l: usize) {
        self.push(name, "global-maxpool", &[c], 0, 0, 0, 0, (c * l.saturating_sub(1)) as u64);
    }

    pub fn dropout(&mut self, name: String, shape: &[usize]) {
        self.push(name, "dropout", shape, 0, 0, 0, 0, 0);
    }

    pub fn flatten(&mut self, name: String, width: usize) {
        self.push(name, "flatten", &[width], 0, 0, 0, 0, 0);
    }

    pub fn concat(&mut self, name: String, width: usize, kind: &str, inputs: usize) {
        // elementwise merges (average/max/multiply) do work; concatenation doesn't
        let other = if kind == "concatenate" { 0 } else { (width * inputs.saturating_sub(1)) as u64 };
        self.push(name, kind, &[width], 0, 0, 0, 0, other);
    }

    pub fn bgru(&mut self, name: String, d: usize, h: usize) {
        let g = 3 * h;
        self.push(
            name,
            "bgru",
            &[2 * h],
            2 * g * (d + h + 2),
            2 * (g * (d + h)) as u64,
            2 * 2 * g as u64,
            2 * g as u64,
            2 * 8 * h as u64,
        );
    }

    pub fn dense(&mut self, name: String, i: usize, o: usize) {
        self.push(name, "dense", &[o], o * (i + 1), (i * o) as u64, o as u64, o as u64, 0);
    }

    pub fn meta(&mut self, name: String, params: usize, flops: u64) {
        self.push(name, "meta-classifier", &[5], params, 0, 0, 0, flops);
    }

    /// Human-readable layer table.
    pub fn summary(&self, c: FlopConvention) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:<16} {:<14} {:>12} {:>14}", "layer", "kind", "output", "params", "flops");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<28} {:<16} {:<14} {:>12} {:>14}",
                l.name,
                l.kind,
                alloc::format!("{:?}", l.out_shape),
                l.params,
                l.flops(c)
            );
        }
        let _ = writeln!(s, "{:<60} {:>12} {:>14}", "total", count_params(self), count_flops(self, c));
        s
    }
}

pub fn count_params(g: &LayerGraph) -> usize {
    g.layers.iter().map(|l| l.params).sum()
}

pub fn count_flops(g: &LayerGraph, c: FlopConvention) -> u64 {
    g.layers.iter().map(|l| l.flops(c)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let mut g = LayerGraph::default();
        g.dense("d".into(), 4, 3);
        assert_eq!(count_params(&g), 15);
        let mut g = LayerGraph::default();
        g.conv("c".into(), 1, 100, 8, 5);
        assert_eq!(count_params(&g), 48);
        let macs_only = FlopConvention { bias: false, activations: false };
        assert_eq!(count_flops(&g, macs_only), 8_000);
        assert_eq!(count_flops(&g, FlopConvention { bias: true, activations: false }), 8_800);
        assert_eq!(count_flops(&LayerGraph::default(), FlopConvention::default()), 0);
    }

    #[test]
    fn gru_param_formula() {
        let mut g = LayerGraph::default();
        g.bgru("b".into(), 7168, 256);
        assert_eq!(count_params(&g), 11_406_336);
    }
}
