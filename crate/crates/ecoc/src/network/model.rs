//! 2-layer LSTM encoder with three interchangeable decoder heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::graph::{Graph, NodeId};
use crate::network::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Decoder head variants. The head owns only its output projection; the
/// encoder below is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Per-bit sigmoid over an `n_bits`-wide codeword.
    Ecoc { n_bits: usize },
    /// One softmax over the whole vocabulary.
    FullSoftmax,
    /// Two-level tree with branching ceil(sqrt(|V|)), leaves in vocabulary
    /// (frequency) order.
    Hierarchical,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Ecoc { .. } => "ecoc",
            HeadKind::FullSoftmax => "softmax",
            HeadKind::Hierarchical => "hierarchical",
        }
    }
}

/// Leaf layout of the 2-level hierarchical softmax.
#[derive(Debug, Clone, Copy)]
pub struct HsTree {
    vocab_size: usize,
    branching: usize,
}

impl HsTree {
    pub fn new(vocab_size: usize) -> Self {
        let branching = (vocab_size as f64).sqrt().ceil() as usize;
        HsTree {
            vocab_size,
            branching: branching.max(1),
        }
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn n_classes(&self) -> usize {
        self.vocab_size.div_ceil(self.branching)
    }

    /// (root class, within-class leaf position) of a token.
    pub fn class_of(&self, token: usize) -> (usize, usize) {
        (token / self.branching, token % self.branching)
    }

    /// Column range of one class's leaves in the child weight matrix.
    pub fn class_range(&self, class: usize) -> (usize, usize) {
        let start = class * self.branching;
        let len = self.branching.min(self.vocab_size - start);
        (start, len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding width; also the hidden width of every LSTM layer.
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub head: HeadKind,
}

#[derive(Debug, Clone, Copy)]
struct LstmLayerIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Detached per-lane hidden/cell values, carried across BPTT windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneState<S: Scalar> {
    pub h: Vec<Vec<S>>,
    pub c: Vec<Vec<S>>,
}

/// In-graph hidden/cell nodes for the current window.
#[derive(Debug, Clone)]
pub struct StateNodes {
    pub h: Vec<NodeId>,
    pub c: Vec<NodeId>,
}

/// Per-lane variational dropout masks, fixed for a whole BPTT window.
#[derive(Debug, Clone)]
pub struct DropoutMasks<S: Scalar> {
    pub input: Vec<S>,
    pub hidden: Vec<Vec<S>>,
    pub output: Vec<S>,
}

pub struct Model<S: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<S>,
    embedding: ParamId,
    lstm: Vec<LstmLayerIds>,
    head_w: ParamId,
    head_b: ParamId,
    root_w: Option<ParamId>,
    root_b: Option<ParamId>,
    tree: Option<HsTree>,
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let d = cfg.dim;
        let embedding = store.register_uniform("embedding", cfg.vocab_size, d, seed);
        let mut lstm = Vec::new();
        for l in 0..cfg.layers {
            lstm.push(LstmLayerIds {
                w_ih: store.register_uniform(&format!("lstm{l}.w_ih"), d, 4 * d, seed),
                w_hh: store.register_uniform(&format!("lstm{l}.w_hh"), d, 4 * d, seed),
                bias: store.register_zeros(&format!("lstm{l}.bias"), 1, 4 * d),
            });
        }
        let (head_w, head_b, root_w, root_b, tree) = match cfg.head {
            HeadKind::Ecoc { n_bits } => (
                store.register_uniform("head.w", d, n_bits, seed),
                store.register_zeros("head.b", 1, n_bits),
                None,
                None,
                None,
            ),
            HeadKind::FullSoftmax => (
                store.register_uniform("head.w", d, cfg.vocab_size, seed),
                store.register_zeros("head.b", 1, cfg.vocab_size),
                None,
                None,
                None,
            ),
            HeadKind::Hierarchical => {
                let tree = HsTree::new(cfg.vocab_size);
                let w = store.register_uniform("head.child_w", d, cfg.vocab_size, seed);
                let b = store.register_zeros("head.child_b", 1, cfg.vocab_size);
                let rw = store.register_uniform("head.root_w", d, tree.n_classes(), seed);
                let rb = store.register_zeros("head.root_b", 1, tree.n_classes());
                (w, b, Some(rw), Some(rb), Some(tree))
            }
        };
        Model {
            cfg,
            store,
            embedding,
            lstm,
            head_w,
            head_b,
            root_w,
            root_b,
            tree,
        }
    }

    pub fn tree(&self) -> Option<&HsTree> {
        self.tree.as_ref()
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    pub fn zero_state(&self) -> LaneState<S> {
        LaneState {
            h: vec![vec![S::zero(); self.cfg.dim]; self.cfg.layers],
            c: vec![vec![S::zero(); self.cfg.dim]; self.cfg.layers],
        }
    }

    /// Seed this window's state nodes from detached values.
    pub fn state_nodes(&self, g: &mut Graph<S>, state: &LaneState<S>) -> StateNodes {
        StateNodes {
            h: state
                .h
                .iter()
                .map(|v| g.constant(1, self.cfg.dim, v.clone()))
                .collect(),
            c: state
                .c
                .iter()
                .map(|v| g.constant(1, self.cfg.dim, v.clone()))
                .collect(),
        }
    }

    /// Detach the window-final state for the next window.
    pub fn read_state(&self, g: &Graph<S>, nodes: &StateNodes) -> LaneState<S> {
        LaneState {
            h: nodes.h.iter().map(|&n| g.value(n).to_vec()).collect(),
            c: nodes.c.iter().map(|&n| g.value(n).to_vec()).collect(),
        }
    }

    /// Gradient-carrying embedding row for one token.
    pub fn embed(&self, g: &mut Graph<S>, token: usize) -> NodeId {
        g.gather(&self.store, self.embedding, vec![token])
    }

    /// Inverted-dropout masks, one set per lane per BPTT window.
    pub fn sample_masks(&self, rng: &mut impl Rng) -> DropoutMasks<S> {
        let p = self.cfg.dropout;
        let keep = 1.0 - p;
        let mut draw = |n: usize| -> Vec<S> {
            (0..n)
                .map(|_| {
                    if p > 0.0 && rng.gen::<f64>() < p {
                        S::zero()
                    } else {
                        S::from_f64_lossy(1.0 / keep)
                    }
                })
                .collect()
        };
        DropoutMasks {
            input: draw(self.cfg.dim),
            hidden: (0..self.cfg.layers).map(|_| draw(self.cfg.dim)).collect(),
            output: draw(self.cfg.dim),
        }
    }

    /// One timestep: update all layers, return (new state, decoder input).
    /// `masks = None` disables dropout (evaluation).
    pub fn step(
        &self,
        g: &mut Graph<S>,
        input: NodeId,
        state: &StateNodes,
        masks: Option<&DropoutMasks<S>>,
    ) -> Result<(StateNodes, NodeId)> {
        let d = self.cfg.dim;
        if g.shape(input) != (1, d) {
            return Err(Error::ShapeMismatch(format!(
                "input shape {:?}, expected 1x{d}",
                g.shape(input)
            )));
        }
        let mut x = input;
        if let Some(m) = masks {
            let mask = g.constant(1, d, m.input.clone());
            x = g.mul(x, mask)?;
        }
        let mut new_h = Vec::with_capacity(self.cfg.layers);
        let mut new_c = Vec::with_capacity(self.cfg.layers);
        for (l, ids) in self.lstm.iter().enumerate() {
            let mut h_prev = state.h[l];
            if let Some(m) = masks {
                let mask = g.constant(1, d, m.hidden[l].clone());
                h_prev = g.mul(h_prev, mask)?;
            }
            let w_ih = g.param(&self.store, ids.w_ih);
            let w_hh = g.param(&self.store, ids.w_hh);
            let bias = g.param(&self.store, ids.bias);
            let xi = g.matmul(x, w_ih)?;
            let hh = g.matmul(h_prev, w_hh)?;
            let pre = g.add(xi, hh)?;
            let gates = g.add_row(pre, bias)?;
            let i_gate = g.slice_cols(gates, 0, d)?;
            let f_gate = g.slice_cols(gates, d, d)?;
            let g_gate = g.slice_cols(gates, 2 * d, d)?;
            let o_gate = g.slice_cols(gates, 3 * d, d)?;
            let i = g.sigmoid(i_gate);
            let f = g.sigmoid(f_gate);
            let g_ = g.tanh(g_gate);
            let o = g.sigmoid(o_gate);
            let fc = g.mul(f, state.c[l])?;
            let ig = g.mul(i, g_)?;
            let c_new = g.add(fc, ig)?;
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc)?;
            new_h.push(h_new);
            new_c.push(c_new);
            x = h_new;
        }
        let mut out = x;
        if let Some(m) = masks {
            let mask = g.constant(1, d, m.output.clone());
            out = g.mul(out, mask)?;
        }
        Ok((
            StateNodes {
                h: new_h,
                c: new_c,
            },
            out,
        ))
    }

    /// Pre-sigmoid bit logits (ECOC head) or pre-softmax logits (full
    /// softmax head).
    pub fn head_logits(&self, g: &mut Graph<S>, out: NodeId) -> Result<NodeId> {
        let w = g.param(&self.store, self.head_w);
        let b = g.param(&self.store, self.head_b);
        let z = g.matmul(out, w)?;
        g.add_row(z, b)
    }

    /// Root-level logits of the hierarchical head.
    pub fn root_logits(&self, g: &mut Graph<S>, out: NodeId) -> Result<NodeId> {
        let (rw, rb) = match (self.root_w, self.root_b) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::ShapeMismatch(
                    "root_logits on a non-hierarchical head".into(),
                ))
            }
        };
        let w = g.param(&self.store, rw);
        let b = g.param(&self.store, rb);
        let z = g.matmul(out, w)?;
        g.add_row(z, b)
    }

    /// Leaf logits for one root class (demand-evaluated path).
    pub fn child_logits(&self, g: &mut Graph<S>, out: NodeId, class: usize) -> Result<NodeId> {
        let tree = self
            .tree
            .ok_or_else(|| Error::ShapeMismatch("child_logits on a non-hierarchical head".into()))?;
        let (start, len) = tree.class_range(class);
        let w = g.param(&self.store, self.head_w);
        let b = g.param(&self.store, self.head_b);
        let ws = g.slice_cols(w, start, len)?;
        let bs = g.slice_cols(b, start, len)?;
        let z = g.matmul(out, ws)?;
        g.add_row(z, bs)
    }

    /// Full leaf distribution of the hierarchical head (evaluation only):
    /// p(token) = p(class) * p(leaf | class).
    pub fn hierarchical_distribution(&self, g: &mut Graph<S>, out: NodeId) -> Result<Vec<S>> {
        let tree = self
            .tree
            .ok_or_else(|| Error::ShapeMismatch("not a hierarchical head".into()))?;
        let rz = self.root_logits(g, out)?;
        let rp = g.softmax_row(rz);
        let root = g.value(rp).to_vec();
        let mut dist = Vec::with_capacity(self.cfg.vocab_size);
        for class in 0..tree.n_classes() {
            let cz = self.child_logits(g, out, class)?;
            let cp = g.softmax_row(cz);
            for &leaf in g.value(cp) {
                dist.push(root[class] * leaf);
            }
        }
        dist.truncate(self.cfg.vocab_size);
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(head: HeadKind) -> Model<f64> {
        Model::new(
            ModelConfig {
                vocab_size: 8,
                dim: 6,
                layers: 2,
                dropout: 0.0,
                head,
            },
            1,
        )
    }

    #[test]
    fn zero_weights_give_half_bits_and_uniform_softmax() {
        let mut m = tiny(HeadKind::Ecoc { n_bits: 5 });
        // Zero out every parameter; sigmoid(0) = 0.5 per bit.
        for p in m.store.iter_mut() {
            for v in p.value.iter_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let state = m.zero_state();
        let nodes = m.state_nodes(&mut g, &state);
        let x = m.embed(&mut g, 3);
        let (_, out) = m.step(&mut g, x, &nodes, None).unwrap();
        let z = m.head_logits(&mut g, out).unwrap();
        let probs = g.sigmoid(z);
        for &p in g.value(probs) {
            assert!((p - 0.5).abs() < 1e-12);
        }

        let mut m = tiny(HeadKind::FullSoftmax);
        for p in m.store.iter_mut() {
            for v in p.value.iter_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let nodes = m.state_nodes(&mut g, &m.zero_state());
        let x = m.embed(&mut g, 0);
        let (_, out) = m.step(&mut g, x, &nodes, None).unwrap();
        let z = m.head_logits(&mut g, out).unwrap();
        let probs = g.softmax_row(z);
        for &p in g.value(probs) {
            assert!((p - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let run = || {
            let m = tiny(HeadKind::FullSoftmax);
            let mut g = Graph::new();
            let nodes = m.state_nodes(&mut g, &m.zero_state());
            let x = m.embed(&mut g, 5);
            let (_, out) = m.step(&mut g, x, &nodes, None).unwrap();
            let z = m.head_logits(&mut g, out).unwrap();
            g.value(z).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hierarchical_tree_covers_tokens_exactly_once() {
        let tree = HsTree::new(10);
        assert_eq!(tree.branching(), 4);
        assert_eq!(tree.n_classes(), 3);
        let mut seen = vec![false; 10];
        for c in 0..tree.n_classes() {
            let (start, len) = tree.class_range(c);
            for t in start..start + len {
                assert!(!seen[t]);
                seen[t] = true;
                assert_eq!(tree.class_of(t), (c, t - start));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn hierarchical_distribution_sums_to_one() {
        let m = tiny(HeadKind::Hierarchical);
        let mut g = Graph::new();
        let nodes = m.state_nodes(&mut g, &m.zero_state());
        let x = m.embed(&mut g, 2);
        let (_, out) = m.step(&mut g, x, &nodes, None).unwrap();
        let dist = m.hierarchical_distribution(&mut g, out).unwrap();
        assert_eq!(dist.len(), 8);
        let total: f64 = dist.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn state_carries_between_windows() {
        let m = tiny(HeadKind::FullSoftmax);
        let mut g = Graph::new();
        let nodes = m.state_nodes(&mut g, &m.zero_state());
        let x = m.embed(&mut g, 1);
        let (next, _) = m.step(&mut g, x, &nodes, None).unwrap();
        let detached = m.read_state(&g, &next);
        assert!(detached.h[0].iter().any(|&v| v != 0.0));
        // Re-seeding a fresh graph from the detached state reproduces values.
        let mut g2 = Graph::new();
        let nodes2 = m.state_nodes(&mut g2, &detached);
        assert_eq!(g2.value(nodes2.h[0]), detached.h[0].as_slice());
    }

    #[test]
    fn dropout_masks_scale_by_keep_probability() {
        let m = Model::<f64>::new(
            ModelConfig {
                vocab_size: 8,
                dim: 200,
                layers: 2,
                dropout: 0.2,
                head: HeadKind::FullSoftmax,
            },
            1,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let masks = m.sample_masks(&mut rng);
        for &v in &masks.input {
            assert!(v == 0.0 || (v - 1.25).abs() < 1e-12);
        }
        let zeros = masks.input.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 10 && zeros < 90);
    }

    use rand::SeedableRng;
}
