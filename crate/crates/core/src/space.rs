//! Candidate architecture spaces.
//!
//! Two spaces are provided:
//!
//! * a cell space with 5 operations on the 6 edges of a 4-node DAG
//!   (5^6 = 15,625 networks), wired like NAS-Bench-201 cells;
//! * an activation space that swaps one of 11 activation functions into every
//!   activation slot of a fixed VGG-style backbone.
//!
//! Specs are identified by compact ASCII ids (`cell|3,1,0,1,2,4`, `act|GELU`)
//! that appear in every CSV and cache file. Macro parameters (channel counts,
//! input size) are not part of the id; they come from the [`SpaceConfig`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActKind, GraphBuilder, LayerKind, NetworkGraph};

/// Operation placed on a cell edge. The discriminant is its code in spec ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellOp {
    Zeroize = 0,
    Skip = 1,
    Conv1x1 = 2,
    Conv3x3 = 3,
    AvgPool3x3 = 4,
}

impl CellOp {
    pub const ALL: [CellOp; 5] = [
        CellOp::Zeroize,
        CellOp::Skip,
        CellOp::Conv1x1,
        CellOp::Conv3x3,
        CellOp::AvgPool3x3,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<CellOp> {
        CellOp::ALL.get(code).copied()
    }
}

/// Edges `(from, to)` of the 4-node cell DAG, in encoding order.
pub const CELL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

/// Number of networks in the full cell space.
pub const CELL_SPACE_SIZE: usize = 15_625;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub edges: [CellOp; 6],
    pub stem_channels: usize,
    pub num_cells: usize,
    pub num_classes: usize,
    pub input_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActBackboneSpec {
    pub activation: ActKind,
    /// `(channels, conv count)` per stage; each stage ends in 2x2 average pooling.
    pub conv_plan: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub input_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkSpec {
    Cell(CellSpec),
    Act(ActBackboneSpec),
}

impl NetworkSpec {
    /// Canonical ASCII identifier.
    pub fn spec_id(&self) -> String {
        match self {
            NetworkSpec::Cell(c) => {
                let codes: Vec<String> = c.edges.iter().map(|op| op.code().to_string()).collect();
                format!("cell|{}", codes.join(","))
            }
            NetworkSpec::Act(a) => format!("act|{}", a.activation),
        }
    }

    pub fn decode(&self) -> Result<NetworkGraph> {
        match self {
            NetworkSpec::Cell(c) => decode_cell(c),
            NetworkSpec::Act(a) => decode_act_backbone(a),
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec_id())
    }
}

fn conv(out_channels: usize, kernel: usize) -> LayerKind {
    LayerKind::Conv2d {
        out_channels,
        kernel,
        stride: 1,
        padding: kernel / 2,
    }
}

const RELU: LayerKind = LayerKind::Activation(ActKind::ReLU);

/// Stem conv+ReLU, `num_cells` stacked cells, global pooling, classifier.
///
/// Inside a cell each node is the sum of its transformed predecessors. Conv
/// edges are Conv followed by ReLU; all convs keep the stem width.
pub fn decode_cell(spec: &CellSpec) -> Result<NetworkGraph> {
    if spec.stem_channels == 0
        || spec.num_cells == 0
        || spec.num_classes == 0
        || spec.input_size == 0
    {
        return Err(Error::InvalidSpec(format!(
            "non-positive cell parameters in {spec:?}"
        )));
    }
    let c = spec.stem_channels;
    let mut b = GraphBuilder::new(vec![3, spec.input_size, spec.input_size]);
    let mut x = b.chain(GraphBuilder::INPUT, &[conv(c, 3), RELU])?;
    for _ in 0..spec.num_cells {
        let mut cell_nodes = [x, 0, 0, 0];
        for to in 1..4 {
            let mut terms = Vec::new();
            for (edge, &(from, _)) in CELL_EDGES.iter().enumerate().filter(|(_, e)| e.1 == to) {
                let src = cell_nodes[from];
                let out = match spec.edges[edge] {
                    CellOp::Zeroize => b.push(LayerKind::Zeroize, &[src])?,
                    CellOp::Skip => b.push(LayerKind::Identity, &[src])?,
                    CellOp::Conv1x1 => b.chain(src, &[conv(c, 1), RELU])?,
                    CellOp::Conv3x3 => b.chain(src, &[conv(c, 3), RELU])?,
                    CellOp::AvgPool3x3 => b.push(
                        LayerKind::AvgPool {
                            kernel: 3,
                            stride: 1,
                            padding: 1,
                        },
                        &[src],
                    )?,
                };
                terms.push(out);
            }
            cell_nodes[to] = b.push(LayerKind::Add, &terms)?;
        }
        x = cell_nodes[3];
    }
    let pooled = b.push(LayerKind::GlobalAvgPool, &[x])?;
    b.push(
        LayerKind::Linear {
            out_features: spec.num_classes,
        },
        &[pooled],
    )?;
    b.finish()
}

/// VGG-style stages of `conv3x3 -> activation`, each stage closed by 2x2
/// average pooling, then global pooling and the classifier.
pub fn decode_act_backbone(spec: &ActBackboneSpec) -> Result<NetworkGraph> {
    if spec.conv_plan.is_empty() || spec.num_classes == 0 {
        return Err(Error::InvalidSpec("empty backbone plan".into()));
    }
    let mut b = GraphBuilder::new(vec![3, spec.input_size, spec.input_size]);
    let mut x = GraphBuilder::INPUT;
    for &(channels, count) in &spec.conv_plan {
        if channels == 0 || count == 0 {
            return Err(Error::InvalidSpec(format!(
                "invalid stage ({channels}, {count})"
            )));
        }
        for _ in 0..count {
            x = b.chain(
                x,
                &[conv(channels, 3), LayerKind::Activation(spec.activation)],
            )?;
        }
        x = b.push(
            LayerKind::AvgPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            &[x],
        )?;
    }
    let pooled = b.push(LayerKind::GlobalAvgPool, &[x])?;
    b.push(
        LayerKind::Linear {
            out_features: spec.num_classes,
        },
        &[pooled],
    )?;
    b.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Cell,
    Act,
}

impl FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" => Ok(SpaceKind::Cell),
            "act" => Ok(SpaceKind::Act),
            _ => Err(Error::Config(format!(
                "unknown space {s:?} (expected cell or act)"
            ))),
        }
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::Cell => "cell",
            SpaceKind::Act => "act",
        })
    }
}

/// Macro parameters shared by every spec of a space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub kind: SpaceKind,
    pub input_size: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub num_cells: usize,
    pub conv_plan: Vec<(usize, usize)>,
}

/// VGG-19 stage layout at one eighth of the original width.
/// Cell-space width. The classifier input has this many features, and it
/// needs to be at least the largest minibatch scored or `Q` goes numerically
/// singular at the small bandwidths the detector picks.
pub const DEFAULT_STEM_CHANNELS: usize = 32;

pub const DEFAULT_CONV_PLAN: [(usize, usize); 5] = [(8, 2), (16, 2), (32, 4), (64, 4), (64, 4)];

impl SpaceConfig {
    /// Desk-scale defaults: 16x16 inputs for cells, 32x32 for the backbone.
    pub fn new(kind: SpaceKind) -> Self {
        SpaceConfig {
            kind,
            input_size: match kind {
                SpaceKind::Cell => 16,
                SpaceKind::Act => 32,
            },
            num_classes: 10,
            stem_channels: DEFAULT_STEM_CHANNELS,
            num_cells: 1,
            conv_plan: DEFAULT_CONV_PLAN.to_vec(),
        }
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn cardinality(&self) -> usize {
        match self.kind {
            SpaceKind::Cell => CELL_SPACE_SIZE,
            SpaceKind::Act => ActKind::ALL.len(),
        }
    }

    fn cell(&self, edges: [CellOp; 6]) -> NetworkSpec {
        NetworkSpec::Cell(CellSpec {
            edges,
            stem_channels: self.stem_channels,
            num_cells: self.num_cells,
            num_classes: self.num_classes,
            input_size: self.input_size,
        })
    }

    fn act(&self, activation: ActKind) -> NetworkSpec {
        NetworkSpec::Act(ActBackboneSpec {
            activation,
            conv_plan: self.conv_plan.clone(),
            num_classes: self.num_classes,
            input_size: self.input_size,
        })
    }

    /// Spec at position `index` of the canonical enumeration. Cell edges are
    /// read as base-5 digits, first edge most significant.
    pub fn spec_at(&self, index: usize) -> Option<NetworkSpec> {
        if index >= self.cardinality() {
            return None;
        }
        Some(match self.kind {
            SpaceKind::Cell => {
                let mut edges = [CellOp::Zeroize; 6];
                let mut rest = index;
                for slot in edges.iter_mut().rev() {
                    *slot = CellOp::from_code(rest % 5).expect("digit < 5");
                    rest /= 5;
                }
                self.cell(edges)
            }
            SpaceKind::Act => self.act(ActKind::ALL[index]),
        })
    }

    pub fn enumerate(&self) -> impl Iterator<Item = NetworkSpec> + '_ {
        (0..self.cardinality()).map(|i| self.spec_at(i).expect("in range"))
    }

    /// Uniform sample without replacement, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<NetworkSpec>> {
        let available = self.cardinality();
        if count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if count > available {
            return Err(Error::SpaceExhausted {
                requested: count,
                available,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(index::sample(&mut rng, available, count)
            .into_iter()
            .map(|i| self.spec_at(i).expect("in range"))
            .collect())
    }

    pub fn parse_id(&self, id: &str) -> Result<NetworkSpec> {
        let bad = || Error::InvalidSpec(format!("malformed spec id {id:?}"));
        let (prefix, body) = id.split_once('|').ok_or_else(bad)?;
        match (self.kind, prefix) {
            (SpaceKind::Cell, "cell") => {
                let codes: Vec<&str> = body.split(',').collect();
                if codes.len() != 6 {
                    return Err(bad());
                }
                let mut edges = [CellOp::Zeroize; 6];
                for (slot, code) in edges.iter_mut().zip(codes) {
                    if code.len() != 1 {
                        return Err(bad());
                    }
                    *slot = code
                        .parse()
                        .ok()
                        .and_then(CellOp::from_code)
                        .ok_or_else(bad)?;
                }
                Ok(self.cell(edges))
            }
            (SpaceKind::Act, "act") => Ok(self.act(body.parse()?)),
            _ => Err(Error::InvalidSpec(format!(
                "spec id {id:?} is not in the {} space",
                self.kind
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn cell(edges: [CellOp; 6]) -> CellSpec {
        CellSpec {
            edges,
            stem_channels: DEFAULT_STEM_CHANNELS,
            num_cells: 1,
            num_classes: 10,
            input_size: 16,
        }
    }

    fn count_kind(g: &NetworkGraph, pred: impl Fn(&LayerKind) -> bool) -> usize {
        g.nodes().iter().filter(|n| pred(&n.kind)).count()
    }

    #[test]
    fn all_skip_has_only_stem_activation() {
        let g = decode_cell(&cell([CellOp::Skip; 6])).unwrap();
        assert_eq!(g.activation_count(), 1);
        assert_eq!(g.output_shape(), &[10]);
    }

    #[test]
    fn mixed_cell_matches_hand_drawn_dag() {
        use CellOp::*;
        let g = decode_cell(&cell([Conv3x3, Skip, Zeroize, Skip, Conv1x1, AvgPool3x3])).unwrap();
        // input, stem conv+relu, conv3x3+relu on 0->1, identity 0->2, zero 1->2,
        // identity 0->3, conv1x1+relu 1->3, avgpool 2->3, three sums, pool, linear
        assert_eq!(g.nodes().len(), 16);
        assert_eq!(count_kind(&g, |k| matches!(k, LayerKind::Conv2d { .. })), 3);
        assert_eq!(g.activation_count(), 3);
        assert_eq!(count_kind(&g, |k| matches!(k, LayerKind::Identity)), 2);
        assert_eq!(count_kind(&g, |k| matches!(k, LayerKind::Zeroize)), 1);
        assert_eq!(
            count_kind(&g, |k| matches!(k, LayerKind::AvgPool { .. })),
            1
        );
        assert_eq!(count_kind(&g, |k| matches!(k, LayerKind::Add)), 3);
        let adds: Vec<usize> = g
            .nodes()
            .iter()
            .filter(|n| n.kind == LayerKind::Add)
            .map(|n| n.inputs.len())
            .collect();
        assert_eq!(adds, vec![1, 2, 3]);
    }

    #[test]
    fn act_backbone_counts() {
        let spec = ActBackboneSpec {
            activation: ActKind::ReLU,
            conv_plan: vec![(8, 1), (16, 1)],
            num_classes: 10,
            input_size: 16,
        };
        let g = decode_act_backbone(&spec).unwrap();
        assert_eq!(g.activation_count(), 2);
        let base = g.param_count();
        for act in ActKind::ALL {
            let other = decode_act_backbone(&ActBackboneSpec {
                activation: act,
                ..spec.clone()
            })
            .unwrap();
            assert_eq!(other.param_count(), base);
            for i in 0..g.nodes().len() {
                assert_eq!(other.shape_of(i), g.shape_of(i));
            }
        }
    }

    #[test]
    fn default_backbone_fits_32px() {
        let cfg = SpaceConfig::new(SpaceKind::Act);
        let g = cfg.spec_at(0).unwrap().decode().unwrap();
        assert_eq!(g.activation_count(), 16);
    }

    #[test]
    fn spec_ids() {
        use CellOp::*;
        let cfg = SpaceConfig::new(SpaceKind::Cell);
        let s = NetworkSpec::Cell(cell([Conv3x3, Skip, Zeroize, Skip, Conv1x1, AvgPool3x3]));
        assert_eq!(s.spec_id(), "cell|3,1,0,1,2,4");
        assert_eq!(cfg.parse_id("cell|3,1,0,1,2,4").unwrap(), s);
        for bad in [
            "cell|3,1,0,1,2",
            "cell|3,1,0,1,2,5",
            "act|ReLU",
            "cell|3,1,0,1,2,44",
            "nope",
        ] {
            assert!(cfg.parse_id(bad).is_err(), "{bad}");
        }
        let act = SpaceConfig::new(SpaceKind::Act);
        assert_eq!(act.parse_id("act|GELU").unwrap().spec_id(), "act|GELU");
        assert!(act.parse_id("act|Tanh").is_err());
    }

    #[test]
    fn full_cell_enumeration_is_unique_and_decodes() {
        let cfg = SpaceConfig::new(SpaceKind::Cell).with_input_size(4);
        let mut seen = HashSet::new();
        for spec in cfg.enumerate() {
            let id = spec.spec_id();
            assert!(id.is_ascii() && !id.contains(char::is_whitespace));
            let g = spec.decode().unwrap();
            assert_eq!(cfg.parse_id(&id).unwrap().decode().unwrap(), g);
            assert!(seen.insert(id));
        }
        assert_eq!(seen.len(), 15_625);
    }

    #[test]
    fn sampling() {
        let cfg = SpaceConfig::new(SpaceKind::Cell);
        let a = cfg.sample(10, 3).unwrap();
        assert_eq!(a, cfg.sample(10, 3).unwrap());
        assert_ne!(a, cfg.sample(10, 4).unwrap());
        let all: HashSet<String> = cfg
            .sample(CELL_SPACE_SIZE, 1)
            .unwrap()
            .iter()
            .map(|s| s.spec_id())
            .collect();
        assert_eq!(all.len(), CELL_SPACE_SIZE);
        assert!(matches!(
            cfg.sample(CELL_SPACE_SIZE + 1, 1),
            Err(Error::SpaceExhausted { .. })
        ));

        let act = SpaceConfig::new(SpaceKind::Act);
        let acts: HashSet<String> = act
            .sample(11, 9)
            .unwrap()
            .iter()
            .map(|s| s.spec_id())
            .collect();
        assert_eq!(acts.len(), 11);
        assert!(matches!(
            act.sample(12, 9),
            Err(Error::SpaceExhausted { .. })
        ));
    }
}
