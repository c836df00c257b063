//! Decodes genomes into stacked-cell networks and counts their parameters.
//!
//! Parameter model: every convolution with kernel `kh x kw` from `c_in` to
//! `c_out` channels holds `kh*kw*c_in*c_out` weights plus `2*c_out`
//! normalization parameters. The factorized codes 3 and 4 are two stacked
//! convolutions. Identity and pooling are parameter-free. Each cell projects
//! both of its inputs to its own width with a 1x1 convolution (stride 2 when
//! the input has twice the cell's resolution), the stem is a single 3x3
//! convolution and the classifier is global pooling followed by a linear
//! layer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{CellGenome, CellKind, Genome, OperationId};

/// Where a computation node reads from inside a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Input(u8),
    Node(usize),
}

impl Source {
    pub fn label(self) -> String {
        match self {
            Source::Input(i) => format!("in{i}"),
            Source::Node(k) => format!("n{k}"),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let parsed = if let Some(i) = s.strip_prefix("in") {
            i.parse().ok().filter(|&i: &u8| i < 2).map(Source::Input)
        } else if let Some(k) = s.strip_prefix('n') {
            k.parse().ok().map(Source::Node)
        } else {
            None
        };
        parsed.ok_or_else(|| serde::de::Error::custom(format!("bad source {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub op: OperationId,
    pub inputs: Vec<Source>,
}

/// Directed acyclic graph of one cell: two inputs, the computation nodes and a
/// concat vertex fed by every node whose output is otherwise unused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchGraph {
    pub kind: CellKind,
    pub nodes: Vec<GraphNode>,
    pub concat: Vec<usize>,
}

impl ArchGraph {
    /// All `(from, to)` edges between inputs and computation nodes.
    pub fn edges(&self) -> impl Iterator<Item = (Source, usize)> + '_ {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(move |&s| (s, n.id)))
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges()
            .filter(|&(s, _)| s == Source::Node(node))
            .count()
    }

    /// Number of nodes on the longest input-to-concat path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            depth[n.id] = 1 + n
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input(_) => 0,
                    Source::Node(k) => depth[k],
                })
                .max()
                .unwrap_or(0);
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

pub fn decode_cell(cell: &CellGenome) -> Result<ArchGraph> {
    cell.ensure_valid()?;
    let n = cell.nodes.len();
    let mut used = vec![false; n];
    let nodes = cell
        .nodes
        .iter()
        .enumerate()
        .map(|(k, gene)| {
            let inputs = gene
                .links
                .iter()
                .enumerate()
                .filter(|&(_, &on)| on)
                .map(|(bit, _)| match bit {
                    0 | 1 => Source::Input(bit as u8),
                    b => {
                        used[b - 2] = true;
                        Source::Node(b - 2)
                    }
                })
                .collect();
            GraphNode {
                id: k,
                op: gene.op,
                inputs,
            }
        })
        .collect();
    let concat = (0..n).filter(|&k| !used[k]).collect();
    Ok(ArchGraph {
        kind: cell.kind,
        nodes,
        concat,
    })
}

/// Parameter count of one operation applied from `c_in` to `c_out` channels.
pub fn op_parameters(op: OperationId, c_in: u64, c_out: u64) -> u64 {
    let conv = |kh: u64, kw: u64| kh * kw * c_in * c_out + 2 * c_out;
    match op.code() {
        1 => conv(1, 1),
        2 => conv(3, 3),
        // The second half of a factorized pair maps c_out to c_out.
        3 => conv(1, 3) + (3 * c_out * c_out + 2 * c_out),
        4 => conv(1, 7) + (7 * c_out * c_out + 2 * c_out),
        _ => 0,
    }
}

/// Network-level hyperparameters used when materializing a genome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSettings {
    pub n_repeat: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub image_channels: usize,
}

impl Default for ArchSettings {
    /// Search-scale network: five cells with 16 base channels, ten classes.
    fn default() -> Self {
        ArchSettings {
            n_repeat: 1,
            base_channels: 16,
            num_classes: 10,
            image_channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInput {
    /// `"stem"` or `"cell<k>"`.
    pub source: String,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub kind: CellKind,
    pub inputs: [CellInput; 2],
    /// Width every node works at (`F_out`).
    pub channels: usize,
    pub nodes: Vec<GraphNode>,
    pub concat: Vec<usize>,
    pub out_channels: usize,
}

impl CellSpec {
    pub fn projection_parameters(&self) -> u64 {
        let out = self.channels as u64;
        self.inputs
            .iter()
            .map(|i| op_parameters(OperationId::CONV_1X1, i.channels as u64, out))
            .sum()
    }

    pub fn body_parameters(&self) -> u64 {
        let c = self.channels as u64;
        self.nodes.iter().map(|n| op_parameters(n.op, c, c)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub in_channels: usize,
    pub num_classes: usize,
}

/// Stacked-cell network: `n_repeat` normal cells, a reduction cell, `n_repeat`
/// normal cells, a reduction cell and `n_repeat` normal cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n_repeat: usize,
    pub base_channels: usize,
    pub stem: StemSpec,
    pub cells: Vec<CellSpec>,
    pub classifier: ClassifierSpec,
}

pub fn assemble_network(genome: &Genome, settings: &ArchSettings) -> Result<NetworkSpec> {
    if settings.n_repeat == 0 {
        return Err(Error::Config("n_repeat must be at least 1".into()));
    }
    if settings.base_channels == 0 {
        return Err(Error::Config("base_channels must be at least 1".into()));
    }
    if settings.num_classes == 0 || settings.image_channels == 0 {
        return Err(Error::Config("num_classes and image_channels must be positive".into()));
    }
    let normal = decode_cell(genome.normal())?;
    let reduction = decode_cell(genome.reduction())?;

    let f = settings.base_channels;
    let stem = StemSpec {
        kernel: 3,
        in_channels: settings.image_channels,
        out_channels: f,
    };

    // (name, channels, resolution level) of the two most recent outputs
    let mut prev2 = ("stem".to_string(), f, 0u32);
    let mut prev1 = prev2.clone();
    let mut level = 0u32;
    let mut width = f;
    let n_cells = 3 * settings.n_repeat + 2;
    let mut cells = Vec::with_capacity(n_cells);

    for index in 0..n_cells {
        let is_reduction = (index + 1) % (settings.n_repeat + 1) == 0;
        let graph = if is_reduction {
            level += 1;
            width *= 2;
            &reduction
        } else {
            &normal
        };
        let input = |src: &(String, usize, u32)| CellInput {
            source: src.0.clone(),
            channels: src.1,
            stride: 1 << (level - src.2),
        };
        let spec = CellSpec {
            index,
            kind: graph.kind,
            inputs: [input(&prev2), input(&prev1)],
            channels: width,
            nodes: graph.nodes.clone(),
            concat: graph.concat.clone(),
            out_channels: graph.concat.len() * width,
        };
        prev2 = std::mem::replace(&mut prev1, (format!("cell{index}"), spec.out_channels, level));
        cells.push(spec);
    }

    Ok(NetworkSpec {
        n_repeat: settings.n_repeat,
        base_channels: f,
        stem,
        classifier: ClassifierSpec {
            in_channels: prev1.1,
            num_classes: settings.num_classes,
        },
        cells,
    })
}

pub fn count_parameters(spec: &NetworkSpec) -> u64 {
    let stem = 9 * (spec.stem.in_channels * spec.stem.out_channels) as u64
        + 2 * spec.stem.out_channels as u64;
    let cells: u64 = spec
        .cells
        .iter()
        .map(|c| c.projection_parameters() + c.body_parameters())
        .sum();
    let classifier = (spec.classifier.in_channels * spec.classifier.num_classes
        + spec.classifier.num_classes) as u64;
    stem + cells + classifier
}

/// Convenience: assemble and count in one step.
pub fn genome_parameters(genome: &Genome, settings: &ArchSettings) -> Result<u64> {
    assemble_network(genome, settings).map(|spec| count_parameters(&spec))
}

/// Renders both cells of a genome as DOT digraphs.
pub fn to_dot(genome: &Genome) -> Result<String> {
    let mut out = String::new();
    for cell in [genome.normal(), genome.reduction()] {
        let graph = decode_cell(cell)?;
        write_cell_dot(&mut out, &graph);
    }
    Ok(out)
}

fn write_cell_dot(out: &mut String, graph: &ArchGraph) {
    let _ = writeln!(out, "digraph {}_cell {{", graph.kind.as_str());
    let _ = writeln!(out, "  rankdir=LR;");
    let _ = writeln!(out, "  in0 [label=\"h[0]\", shape=box];");
    let _ = writeln!(out, "  in1 [label=\"h[1]\", shape=box];");
    for n in &graph.nodes {
        let _ = writeln!(out, "  n{} [label=\"{}: {}\"];", n.id, n.id, n.op.short_name());
    }
    let _ = writeln!(out, "  concat [label=\"Concat\", shape=box];");
    for (src, dst) in graph.edges() {
        let _ = writeln!(out, "  {} -> n{};", src.label(), dst);
    }
    for k in &graph.concat {
        let _ = writeln!(out, "  n{k} -> concat;");
    }
    out.push_str("}\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::tests::seven_node_cell;
    use crate::genome::NodeGene;

    fn cell(kind: CellKind, nodes: &[(&[u8], u8)]) -> CellGenome {
        CellGenome::new(
            kind,
            nodes
                .iter()
                .map(|(bits, op)| NodeGene::from_bits(bits, *op).unwrap())
                .collect(),
        )
    }

    fn identity_genome() -> Genome {
        Genome::new(
            cell(CellKind::Normal, &[(&[1, 0], 0)]),
            cell(CellKind::Reduction, &[(&[1, 0], 0)]),
        )
    }

    #[test]
    fn decode_worked_example_node_four() {
        let g = decode_cell(&seven_node_cell()).unwrap();
        assert_eq!(
            g.nodes[4].inputs,
            vec![Source::Input(1), Source::Node(0), Source::Node(1)]
        );
        assert_eq!(g.nodes[4].op, OperationId::CONV_1X3_3X1);
    }

    #[test]
    fn decode_single_node_feeds_concat() {
        let g = decode_cell(&cell(CellKind::Normal, &[(&[1, 0], 2)])).unwrap();
        assert_eq!(g.nodes[0].inputs, vec![Source::Input(0)]);
        assert_eq!(g.concat, vec![0]);
    }

    #[test]
    fn decode_chain_concat_is_last_node() {
        let chain = cell(
            CellKind::Normal,
            &[(&[1, 0], 1), (&[0, 0, 1], 2), (&[0, 0, 0, 1], 3)],
        );
        let g = decode_cell(&chain).unwrap();
        // oracle: out-degree from the explicit adjacency list
        let adjacency = [(0usize, 1usize), (1, 2)];
        let expected: Vec<usize> = (0..3)
            .filter(|k| !adjacency.iter().any(|&(from, _)| from == *k))
            .collect();
        assert_eq!(g.concat, expected);
        assert_eq!(g.concat, vec![2]);
        assert_eq!(g.depth(), 3);
    }

    #[test]
    fn decode_rejects_invalid_cell() {
        let orphan = cell(CellKind::Normal, &[(&[0, 0], 1)]);
        assert!(matches!(decode_cell(&orphan), Err(Error::InvalidCell(_))));
    }

    #[test]
    fn cell_counts_follow_repeat_factor() {
        let g = identity_genome();
        for (n_repeat, cells) in [(1, 5), (4, 14), (6, 20)] {
            let settings = ArchSettings {
                n_repeat,
                ..ArchSettings::default()
            };
            let spec = assemble_network(&g, &settings).unwrap();
            assert_eq!(spec.cells.len(), cells);
            let reductions: Vec<usize> = spec
                .cells
                .iter()
                .filter(|c| c.kind == CellKind::Reduction)
                .map(|c| c.index)
                .collect();
            assert_eq!(reductions, vec![n_repeat, 2 * n_repeat + 1]);
        }
    }

    #[test]
    fn channel_schedule_and_strides() {
        let spec = assemble_network(&identity_genome(), &ArchSettings::default()).unwrap();
        let widths: Vec<usize> = spec.cells.iter().map(|c| c.channels).collect();
        assert_eq!(widths, vec![16, 32, 32, 64, 64]);

        // cell 0 reads the stem twice; cell 1 reads stem and cell 0
        assert_eq!(spec.cells[0].inputs[0].source, "stem");
        assert_eq!(spec.cells[0].inputs[1].source, "stem");
        assert_eq!(spec.cells[1].inputs[0].source, "stem");
        assert_eq!(spec.cells[1].inputs[1].source, "cell0");

        let strides: Vec<[usize; 2]> = spec
            .cells
            .iter()
            .map(|c| [c.inputs[0].stride, c.inputs[1].stride])
            .collect();
        assert_eq!(strides, vec![[1, 1], [2, 2], [2, 1], [2, 2], [2, 1]]);
    }

    #[test]
    fn op_parameter_model() {
        assert_eq!(op_parameters(OperationId::IDENTITY, 16, 16), 0);
        for op in OperationId::all().filter(|o| o.is_pooling()) {
            assert_eq!(op_parameters(op, 16, 16), 0);
        }
        assert_eq!(op_parameters(OperationId::CONV_3X3, 16, 16), 2336);
        assert_eq!(op_parameters(OperationId::CONV_1X3_3X1, 16, 16), 1600);
        assert_eq!(op_parameters(OperationId::CONV_1X1, 16, 16), 288);
        // 1x7 then 7x1, both 16 -> 16
        assert_eq!(op_parameters(OperationId::CONV_1X7_7X1, 16, 16), 2 * (7 * 256 + 32));
        for op in OperationId::all().filter(|o| o.is_convolution()) {
            assert!(op_parameters(op, 1, 1) > 0);
        }
    }

    #[test]
    fn identity_cell_body_is_free() {
        let spec = assemble_network(&identity_genome(), &ArchSettings::default()).unwrap();
        assert!(spec.cells.iter().all(|c| c.body_parameters() == 0));
    }

    #[test]
    fn parameter_count_hand_total() {
        // One identity node per cell: every cell outputs exactly its width.
        let spec = assemble_network(&identity_genome(), &ArchSettings::default()).unwrap();
        let proj = |i: u64, o: u64| i * o + 2 * o;
        let stem = 9 * 3 * 16 + 2 * 16;
        let cells = proj(16, 16) * 2 // cell0: stem, stem
            + proj(16, 32) * 2       // cell1: stem, cell0
            + proj(16, 32) + proj(32, 32) // cell2: cell0, cell1
            + proj(32, 64) * 2       // cell3: cell1, cell2
            + proj(32, 64) + proj(64, 64); // cell4: cell2, cell3
        let classifier = 64 * 10 + 10;
        assert_eq!(count_parameters(&spec), stem + cells + classifier);
    }

    #[test]
    fn parameters_monotone_in_base_channels() {
        let g = Genome::new(seven_node_cell(), cell(CellKind::Reduction, &[(&[1, 1], 2)]));
        let mut last = 0;
        for f in 1..=40 {
            let settings = ArchSettings {
                base_channels: f,
                ..ArchSettings::default()
            };
            let p = genome_parameters(&g, &settings).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn dot_output() {
        let g = identity_genome();
        let dot = to_dot(&g).unwrap();
        assert_eq!(dot, to_dot(&g).unwrap());
        let normal_block = dot.split("digraph").nth(1).unwrap();
        let vertices = normal_block.lines().filter(|l| l.contains("[label=")).count();
        assert_eq!(vertices, 4);

        let conv = Genome::new(seven_node_cell(), cell(CellKind::Reduction, &[(&[1, 1], 6)]));
        let dot = to_dot(&conv).unwrap();
        assert!(dot.contains("Conv 3*3"));
        assert!(dot.contains("digraph normal_cell {"));
        assert!(dot.contains("digraph reduction_cell {"));
    }

    #[test]
    fn network_spec_json_shape() {
        let spec = assemble_network(&identity_genome(), &ArchSettings::default()).unwrap();
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["cells"][0]["kind"], "normal");
        assert_eq!(v["cells"][1]["inputs"][1]["source"], "cell0");
        assert_eq!(v["cells"][1]["inputs"][0]["stride"], 2);
        assert_eq!(v["cells"][0]["nodes"][0]["inputs"][0], "in0");
        assert_eq!(v["cells"][0]["nodes"][0]["op"], 0);
        let back: NetworkSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }
}
