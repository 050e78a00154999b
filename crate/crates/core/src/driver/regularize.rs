//! Pasch-Hausdorff regularization `Phi_k(x) = sup_y {Phi(y) - k |x - y|}`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::Modulus;
use crate::error::{Error, Result};

const MAX_TAIL_NODES: usize = 50_000_000;

/// Probe range `[0, hi]` sampled at `points` equispaced nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRange {
    pub hi: f64,
    pub points: usize,
}

impl Default for ProbeRange {
    fn default() -> Self {
        ProbeRange {
            hi: 4.0,
            points: 400_001,
        }
    }
}

impl ProbeRange {
    pub fn nodes(&self) -> Vec<f64> {
        let step = self.hi / (self.points - 1) as f64;
        (0..self.points).map(|i| i as f64 * step).collect()
    }
}

/// Sup over a finite node set, stored as prefix/suffix maxima so that
/// evaluation is a binary search. The result is exactly `k`-Lipschitz on
/// the whole half-line and dominates `Phi` at every node.
pub(crate) struct SupTable {
    k: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
    /// argmax over `i <= j` of `Phi(y_i) + k y_i`
    prefix: Vec<u32>,
    /// argmax over `i >= j` of `Phi(y_i) - k y_i`
    suffix: Vec<u32>,
    base: Modulus,
}

impl SupTable {
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        // first node >= x
        let j = self.nodes.partition_point(|&y| y < x);
        let mut v = f64::NEG_INFINITY;
        if j < n {
            let a = self.suffix[j] as usize;
            v = v.max(self.values[a] - self.k * (self.nodes[a] - x));
        }
        if j > 0 {
            let a = self.prefix[j - 1] as usize;
            v = v.max(self.values[a] - self.k * (x - self.nodes[a]));
        }
        if j == n {
            // past the tail bound the sup is attained at y = x
            v = v.max(self.base.eval(x));
        } else if self.nodes[j] == x {
            v = v.max(self.values[j]);
        }
        v
    }
}

/// Builds `Phi_k` by brute force over the probe nodes, a log-spaced layer
/// near the origin, and a tail on `(hi, y_max]` with
/// `y_max = max(hi, (K + k hi) / (k - K))`: for `y > y_max`,
/// `Phi(y) - k (y - x) <= 0 <= Phi(x)` whenever `x <= hi`.
pub fn lipschitz_regularize(phi: &Modulus, k: f64, probe: ProbeRange) -> Result<Modulus> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid("k", "must be positive and finite"));
    }
    if !(probe.hi > 0.0) || probe.points < 2 {
        return Err(Error::invalid("probe", "need hi > 0 and at least 2 points"));
    }
    let growth = phi.growth_k();
    if k <= growth {
        return Err(Error::DivergentEnvelope { k, growth });
    }
    let step = probe.hi / (probe.points - 1) as f64;
    let y_max = probe.hi.max((growth + k * probe.hi) / (k - growth));

    let mut nodes = probe.nodes();
    let mut x = 1e-12;
    while x < step {
        nodes.push(x);
        x *= 10f64.powf(1.0 / 64.0);
    }
    // tail nodes share the probe spacing so that node sets are nested in k
    let tail = ((y_max - probe.hi) / step).ceil();
    if tail > MAX_TAIL_NODES as f64 {
        return Err(Error::invalid(
            "k",
            format!("tail up to {y_max} needs more than {MAX_TAIL_NODES} nodes at this spacing"),
        ));
    }
    nodes.extend((1..=tail as usize).map(|i| (probe.points - 1 + i) as f64 * step));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let values: Vec<f64> = nodes.iter().map(|&y| phi.eval(y)).collect();
    if nodes.len() > u32::MAX as usize {
        return Err(Error::invalid("probe", "too many nodes"));
    }
    let mut prefix = Vec::with_capacity(nodes.len());
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0u32);
    for (i, (y, v)) in nodes.iter().zip(&values).enumerate() {
        if v + k * y > best {
            best = v + k * y;
            arg = i as u32;
        }
        prefix.push(arg);
    }
    let mut suffix = alloc::vec![0u32; nodes.len()];
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0u32);
    for i in (0..nodes.len()).rev() {
        let key = values[i] - k * nodes[i];
        if key > best {
            best = key;
            arg = i as u32;
        }
        suffix[i] = arg;
    }
    let table = SupTable {
        k,
        nodes,
        values,
        prefix,
        suffix,
        base: phi.clone(),
    };
    Ok(Modulus::from_table(format!("{}_k{k}", phi.name()), growth, table))
}
