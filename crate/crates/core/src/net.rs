//! Feed-forward networks over an explicit directed acyclic graph of units.
//!
//! Unit 0 is the bias unit: it has no incoming edges and its activity is
//! always 1, so biases are ordinary edges leaving unit 0. Each other unit `i`
//! computes `V_i = sum_j a_j w_ji` over its incoming edges and `a_i = s(V_i)`.
//! Input units carry the supplied sample and have no incoming edges.
//!
//! Weights live in one flat array in canonical edge order: edges sorted by
//! the topological position of their target, then by source index. Every
//! gradient vector in this crate uses the same order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BIAS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// `s'(v)`, always evaluated from the pre-activation.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Pre-activations and activities of every unit for one input sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub output: Vec<f64>,
}

/// Result of reverse-mode differentiation of a loss through the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// `dL/dw` in canonical edge order.
    pub weights: Vec<f64>,
    /// `dL/da` on the input units, in input order.
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    activations: Vec<Activation>,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    order: Vec<usize>,
    incoming: Vec<Range<usize>>,
    outgoing: Vec<Vec<usize>>,
    input_pos: Vec<Option<usize>>,
    output_pos: Vec<Option<usize>>,
}

impl Network {
    /// Builds a network from per-unit activations (index 0 is the bias unit),
    /// weighted edges `(src, dst, w)` in any order, and the input and output
    /// unit lists.
    pub fn new(
        activations: Vec<Activation>,
        edges: Vec<(usize, usize, f64)>,
        inputs: Vec<usize>,
        outputs: Vec<usize>,
    ) -> Result<Self> {
        let n = activations.len();
        let invalid = |msg: String| Err(Error::InvalidNetwork(msg));
        if n < 2 {
            return invalid("a network needs the bias unit and at least one more unit".into());
        }
        if inputs.is_empty() || outputs.is_empty() {
            return invalid("input and output unit lists must be non-empty".into());
        }

        let mut input_pos = vec![None; n];
        let mut output_pos = vec![None; n];
        for (k, &u) in inputs.iter().enumerate() {
            if u == BIAS || u >= n {
                return invalid(format!("input unit {u} out of range or is the bias unit"));
            }
            if input_pos[u].replace(k).is_some() {
                return invalid(format!("input unit {u} listed twice"));
            }
        }
        for (k, &u) in outputs.iter().enumerate() {
            if u == BIAS || u >= n {
                return invalid(format!("output unit {u} out of range or is the bias unit"));
            }
            if input_pos[u].is_some() {
                return invalid(format!("unit {u} is both an input and an output"));
            }
            if output_pos[u].replace(k).is_some() {
                return invalid(format!("output unit {u} listed twice"));
            }
        }
        for u in std::iter::once(BIAS).chain(inputs.iter().copied()) {
            if activations[u] != Activation::Identity {
                return invalid(format!("bias/input unit {u} must use the identity activation"));
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut in_degree = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(src, dst, w) in &edges {
            if src >= n || dst >= n {
                return invalid(format!("edge {src} -> {dst} references a missing unit"));
            }
            if src == dst {
                return invalid(format!("self-loop on unit {src}"));
            }
            if dst == BIAS {
                return invalid("the bias unit cannot have incoming edges".into());
            }
            if input_pos[dst].is_some() {
                return invalid(format!("input unit {dst} cannot have incoming edges"));
            }
            if output_pos[src].is_some() {
                return invalid(format!("output unit {src} cannot be the source of an edge"));
            }
            if !w.is_finite() {
                return invalid(format!("edge {src} -> {dst} has non-finite weight {w}"));
            }
            if !seen.insert((src, dst)) {
                return invalid(format!("duplicate edge {src} -> {dst}"));
            }
            in_degree[dst] += 1;
            succ[src].push(dst);
        }

        // Kahn's algorithm, smallest index first, for a deterministic order.
        let mut order = Vec::with_capacity(n);
        let mut heap: BinaryHeap<Reverse<usize>> = (0..n)
            .filter(|&u| in_degree[u] == 0)
            .map(Reverse)
            .collect();
        let mut remaining = in_degree.clone();
        while let Some(Reverse(u)) = heap.pop() {
            order.push(u);
            for &v in &succ[u] {
                remaining[v] -= 1;
                if remaining[v] == 0 {
                    heap.push(Reverse(v));
                }
            }
        }
        if order.len() != n {
            return invalid("the edge relation contains a cycle".into());
        }

        let mut reachable = vec![false; n];
        let mut stack: Vec<usize> = std::iter::once(BIAS).chain(inputs.iter().copied()).collect();
        while let Some(u) = stack.pop() {
            if !reachable[u] {
                reachable[u] = true;
                stack.extend(succ[u].iter().copied());
            }
        }
        if let Some(u) = (0..n).find(|&u| !reachable[u]) {
            return invalid(format!("unit {u} is not reachable from the inputs or the bias"));
        }

        let mut position = vec![0usize; n];
        for (p, &u) in order.iter().enumerate() {
            position[u] = p;
        }
        let mut sorted = edges;
        sorted.sort_by_key(|&(src, dst, _)| (position[dst], src));

        let mut incoming = vec![0..0; n];
        let mut outgoing = vec![Vec::new(); n];
        let mut start = 0;
        while start < sorted.len() {
            let dst = sorted[start].1;
            let mut end = start;
            while end < sorted.len() && sorted[end].1 == dst {
                outgoing[sorted[end].0].push(end);
                end += 1;
            }
            incoming[dst] = start..end;
            start = end;
        }

        Ok(Network {
            activations,
            edges: sorted.iter().map(|&(src, dst, _)| Edge { src, dst }).collect(),
            weights: sorted.iter().map(|&(_, _, w)| w).collect(),
            inputs,
            outputs,
            order,
            incoming,
            outgoing,
            input_pos,
            output_pos,
        })
    }

    /// Fully connected layered network with every non-input unit also fed
    /// by the bias unit. Weights start at zero.
    ///
    /// Units are numbered bias first, then layer by layer.
    pub fn layered(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "layered network needs at least two non-empty layers, got {sizes:?}"
            )));
        }
        let total: usize = sizes.iter().sum();
        let mut activations = vec![Activation::Identity; total + 1];
        let mut layers = Vec::with_capacity(sizes.len());
        let mut next = 1;
        for (l, &size) in sizes.iter().enumerate() {
            let units: Vec<usize> = (next..next + size).collect();
            next += size;
            if l > 0 {
                let act = if l + 1 == sizes.len() { output } else { hidden };
                for &u in &units {
                    activations[u] = act;
                }
            }
            layers.push(units);
        }
        let mut edges = Vec::new();
        for pair in layers.windows(2) {
            for &dst in &pair[1] {
                edges.push((BIAS, dst, 0.0));
                for &src in &pair[0] {
                    edges.push((src, dst, 0.0));
                }
            }
        }
        let inputs = layers[0].clone();
        let outputs = layers[layers.len() - 1].clone();
        Network::new(activations, edges, inputs, outputs)
    }

    /// Draws every non-bias weight from `N(0, scale^2 / fan_in)` and sets
    /// bias weights to zero.
    pub fn init_weights<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for u in 0..self.num_units() {
            let range = self.incoming[u].clone();
            let fan_in = range
                .clone()
                .filter(|&e| self.edges[e].src != BIAS)
                .count()
                .max(1) as f64;
            for e in range {
                self.weights[e] = if self.edges[e].src == BIAS {
                    0.0
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale / fan_in.sqrt()
                };
            }
        }
    }

    pub fn num_units(&self) -> usize {
        self.activations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::dim("set_weights", self.weights.len(), weights.len()));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn activation(&self, unit: usize) -> Activation {
        self.activations[unit]
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// Topological order of all units; the bias unit is always first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Edge ids entering `unit`, a contiguous block of the canonical order.
    pub fn incoming(&self, unit: usize) -> Range<usize> {
        self.incoming[unit].clone()
    }

    pub fn outgoing(&self, unit: usize) -> &[usize] {
        &self.outgoing[unit]
    }

    pub fn input_position(&self, unit: usize) -> Option<usize> {
        self.input_pos[unit]
    }

    pub fn output_position(&self, unit: usize) -> Option<usize> {
        self.output_pos[unit]
    }

    pub fn is_input(&self, unit: usize) -> bool {
        self.input_pos[unit].is_some()
    }

    pub fn is_output(&self, unit: usize) -> bool {
        self.output_pos[unit].is_some()
    }

    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        self.incoming[dst].clone().find(|&e| self.edges[e].src == src)
    }

    /// True when every computing unit is an identity unit, i.e. the output
    /// is an affine function of the input.
    pub fn is_affine(&self) -> bool {
        (0..self.num_units())
            .filter(|&u| u != BIAS && !self.is_input(u))
            .all(|u| self.activations[u] == Activation::Identity)
    }

    /// True when there are no hidden units: every edge leaves an input or
    /// the bias and enters an output.
    pub fn is_single_layer(&self) -> bool {
        (0..self.num_units())
            .filter(|&u| u != BIAS && !self.is_input(u))
            .all(|u| self.is_output(u))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ActivationRecord> {
        if input.len() != self.inputs.len() {
            return Err(Error::dim("forward input", self.inputs.len(), input.len()));
        }
        let n = self.num_units();
        let mut pre = vec![0.0; n];
        let mut act = vec![0.0; n];
        for &u in &self.order {
            if u == BIAS {
                pre[u] = 1.0;
                act[u] = 1.0;
            } else if let Some(k) = self.input_pos[u] {
                pre[u] = input[k];
                act[u] = input[k];
            } else {
                let v: f64 = self.incoming[u]
                    .clone()
                    .map(|e| act[self.edges[e].src] * self.weights[e])
                    .sum();
                pre[u] = v;
                act[u] = self.activations[u].apply(v);
            }
        }
        let output = self.outputs.iter().map(|&u| act[u]).collect();
        Ok(ActivationRecord { pre, act, output })
    }

    /// Reverse-mode gradient of any loss whose gradient with respect to the
    /// output activities is `output_grad`.
    pub fn backprop(&self, record: &ActivationRecord, output_grad: &[f64]) -> Result<Gradient> {
        if output_grad.len() != self.outputs.len() {
            return Err(Error::dim(
                "backprop output gradient",
                self.outputs.len(),
                output_grad.len(),
            ));
        }
        if record.act.len() != self.num_units() {
            return Err(Error::dim(
                "backprop activation record",
                self.num_units(),
                record.act.len(),
            ));
        }
        let mut delta = vec![0.0; self.num_units()];
        for (k, &u) in self.outputs.iter().enumerate() {
            delta[u] = output_grad[k];
        }
        let mut grad = vec![0.0; self.num_edges()];
        for &u in self.order.iter().rev() {
            if u == BIAS || self.is_input(u) {
                continue;
            }
            let dv = delta[u] * self.activations[u].derivative(record.pre[u]);
            for e in self.incoming[u].clone() {
                let src = self.edges[e].src;
                grad[e] = dv * record.act[src];
                delta[src] += dv * self.weights[e];
            }
        }
        let inputs = self.inputs.iter().map(|&u| delta[u]).collect();
        Ok(Gradient {
            weights: grad,
            inputs,
        })
    }

    /// Text form: `unit <id> <activation>` lines, `inputs`/`outputs` lines
    /// listing unit ids, then `edge <src> <dst> <weight>` lines in canonical
    /// order. Weights are printed in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (u, act) in self.activations.iter().enumerate() {
            let _ = writeln!(out, "unit {u} {}", act.name());
        }
        let join = |v: &[usize]| v.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "inputs {}", join(&self.inputs));
        let _ = writeln!(out, "outputs {}", join(&self.outputs));
        for (e, edge) in self.edges.iter().enumerate() {
            let _ = writeln!(out, "edge {} {} {:?}", edge.src, edge.dst, self.weights[e]);
        }
        out
    }
}

impl FromStr for Network {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut units: Vec<(usize, Activation)> = Vec::new();
        let mut edges = Vec::new();
        let mut inputs = None;
        let mut outputs = None;
        let parse_usize = |tok: &str, line: usize| {
            tok.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {line}: bad unit id `{tok}`")))
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "unit" if toks.len() == 3 => {
                    units.push((parse_usize(toks[1], lineno)?, toks[2].parse()?));
                }
                "edge" if toks.len() == 4 => {
                    let w: f64 = toks[3].parse().map_err(|_| {
                        Error::Parse(format!("line {lineno}: bad weight `{}`", toks[3]))
                    })?;
                    edges.push((parse_usize(toks[1], lineno)?, parse_usize(toks[2], lineno)?, w));
                }
                "inputs" => {
                    inputs = Some(
                        toks[1..]
                            .iter()
                            .map(|t| parse_usize(t, lineno))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                "outputs" => {
                    outputs = Some(
                        toks[1..]
                            .iter()
                            .map(|t| parse_usize(t, lineno))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                _ => return Err(Error::Parse(format!("line {lineno}: unrecognized `{line}`"))),
            }
        }
        units.sort_by_key(|&(u, _)| u);
        for (expected, &(u, _)) in units.iter().enumerate() {
            if u != expected {
                return Err(Error::Parse(format!(
                    "unit ids must be 0..n without gaps; expected {expected}, found {u}"
                )));
            }
        }
        let activations = units.into_iter().map(|(_, a)| a).collect();
        let inputs = inputs.ok_or_else(|| Error::Parse("missing `inputs` line".into()))?;
        let outputs = outputs.ok_or_else(|| Error::Parse("missing `outputs` line".into()))?;
        Network::new(activations, edges, inputs, outputs)
    }
}

/// A random feed-forward network with `units` units (bias included) and at
/// most `max_edges` edges. Every computing unit gets at least one incoming
/// edge from a lower-numbered unit; the remaining edges are drawn between
/// random ordered pairs. Weights are standard normal; computing units draw
/// their activation uniformly from identity, sigmoid and tanh.
pub fn random_dag<R: Rng + ?Sized>(
    rng: &mut R,
    inputs: usize,
    outputs: usize,
    units: usize,
    max_edges: usize,
) -> Result<Network> {
    if inputs == 0 || outputs == 0 || units < 1 + inputs + outputs {
        return Err(Error::InvalidNetwork(format!(
            "random_dag needs at least {} units, got {units}",
            1 + inputs + outputs
        )));
    }
    let first_output = units - outputs;
    let computing = units - 1 - inputs;
    if max_edges < computing {
        return Err(Error::InvalidNetwork(format!(
            "random_dag needs at least {computing} edges, got {max_edges}"
        )));
    }
    let mut activations = vec![Activation::Identity; units];
    let choices = [Activation::Identity, Activation::Sigmoid, Activation::Tanh];
    for a in activations.iter_mut().skip(1 + inputs) {
        *a = choices[rng.random_range(0..choices.len())];
    }
    let mut pairs = HashSet::new();
    for dst in 1 + inputs..units {
        let src = rng.random_range(0..dst.min(first_output));
        pairs.insert((src, dst));
    }
    let mut attempts = 0;
    while pairs.len() < max_edges && attempts < 50 * max_edges {
        attempts += 1;
        let dst = rng.random_range(1 + inputs..units);
        let src = rng.random_range(0..dst.min(first_output));
        pairs.insert((src, dst));
    }
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort_unstable();
    let edges = pairs
        .into_iter()
        .map(|(s, d)| (s, d, rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Network::new(
        activations,
        edges,
        (1..=inputs).collect(),
        (first_output..units).collect(),
    )
}

/// Central-difference estimate `(L(w + h) - L(w - h)) / 2h` of the gradient
/// of `loss(outputs)` with respect to every weight.
pub fn finite_diff_grad<F>(net: &Network, input: &[f64], loss: F, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = net.clone();
    let mut grad = Vec::with_capacity(net.num_edges());
    for e in 0..net.num_edges() {
        let w = net.weights[e];
        probe.weights[e] = w + step;
        let plus = loss(&probe.forward(input)?.output);
        probe.weights[e] = w - step;
        let minus = loss(&probe.forward(input)?.output);
        probe.weights[e] = w;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
