//! Backbone diagrams and motif statistics over evolution logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::genome::{BackboneGenome, OptionPool, ShareKind};

/// One sharing connection drawn in a diagram. Positions are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arc {
    pub kind: ShareKind,
    pub label: u32,
    pub class: u32,
    pub positions: Vec<usize>,
    /// Shared feature groups (`"all"` for featurizer sharing).
    pub shared: Vec<String>,
}

impl Arc {
    pub fn first(&self) -> usize {
        self.positions[0]
    }

    pub fn last(&self) -> usize {
        *self.positions.last().expect("arcs have at least two members")
    }

    fn tag(&self, index: usize) -> String {
        match self.kind {
            ShareKind::Featurizer => format!("F{}", index + 1),
            ShareKind::FeatureGroup => format!("G{}", index + 1),
        }
    }
}

/// Arcs of both kinds, featurizer arcs first, each ordered by position.
pub fn arcs(genome: &BackboneGenome, pool: &OptionPool) -> Vec<Arc> {
    let mut out = Vec::new();
    for kind in ShareKind::ALL {
        for g in genome.sharing_groups(kind) {
            let shared = match kind {
                ShareKind::Featurizer => vec!["all".to_string()],
                ShareKind::FeatureGroup => match pool.get(g.class) {
                    Ok(c) => c
                        .family()
                        .strategy_roles(g.strategy)
                        .into_iter()
                        .map(|r| r.name().to_string())
                        .collect(),
                    Err(_) => Vec::new(),
                },
            };
            out.push(Arc {
                kind,
                label: g.label,
                class: g.class,
                positions: g.members.iter().map(|m| m + 1).collect(),
                shared,
            });
        }
    }
    out.sort_by_key(|a| (a.kind == ShareKind::FeatureGroup, a.first(), a.label));
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFormat {
    #[default]
    Text,
    Dot,
}

pub fn render(genome: &BackboneGenome, pool: &OptionPool, format: RenderFormat) -> String {
    match format {
        RenderFormat::Text => render_text(genome, pool),
        RenderFormat::Dot => render_dot(genome, pool),
    }
}

fn lane_glyph(arc: &Arc, pos: usize, span: char) -> char {
    if arc.positions.contains(&pos) {
        'o'
    } else if pos > arc.first() && pos < arc.last() {
        span
    } else {
        ' '
    }
}

/// Depth-ordered listing with feature-group arcs as dashed lanes on the
/// left and featurizer arcs as solid lanes on the right, followed by an
/// arc legend.
pub fn render_text(genome: &BackboneGenome, pool: &OptionPool) -> String {
    let all = arcs(genome, pool);
    let feat: Vec<&Arc> = all.iter().filter(|a| a.kind == ShareKind::Featurizer).collect();
    let group: Vec<&Arc> = all.iter().filter(|a| a.kind == ShareKind::FeatureGroup).collect();
    let names: Vec<String> = genome.classes().iter().map(|&c| pool.name(c)).collect();
    let name_w = names.iter().map(String::len).max().unwrap_or(0).max(3);
    let mut out = String::new();
    for (i, name) in names.iter().enumerate() {
        let pos = i + 1;
        let left: String = group.iter().rev().map(|a| lane_glyph(a, pos, ':')).collect();
        let right: String = feat.iter().map(|a| lane_glyph(a, pos, '|')).collect();
        let line = format!("{left} {pos:>3}  {name:<name_w$}  {right}");
        let _ = writeln!(out, "{}", line.trim_end());
    }
    if !all.is_empty() {
        out.push('\n');
    }
    for (i, a) in feat.iter().enumerate() {
        let _ = writeln!(out, "{} featurizer   {}", a.tag(i), legend(a, pool));
    }
    for (i, a) in group.iter().enumerate() {
        let _ = writeln!(out, "{} feature-group {}", a.tag(i), legend(a, pool));
    }
    out
}

fn legend(a: &Arc, pool: &OptionPool) -> String {
    let pos: Vec<String> = a.positions.iter().map(|p| p.to_string()).collect();
    format!("{} [{}] positions {}", pool.name(a.class), a.shared.join(","), pos.join(","))
}

/// Graphviz description. Backbone flow is a vertical chain; featurizer arcs
/// are solid edges on the east side, feature-group arcs dashed edges on the
/// west side, each from the producing layer to every consumer.
pub fn render_dot(genome: &BackboneGenome, pool: &OptionPool) -> String {
    let all = arcs(genome, pool);
    let mut out = String::from("digraph backbone {\n  rankdir=TB;\n  node [shape=box];\n");
    for (i, c) in genome.classes().iter().enumerate() {
        let _ = writeln!(out, "  n{} [label=\"{}: {}\"];", i + 1, i + 1, pool.name(*c));
    }
    for i in 1..genome.depth() {
        let _ = writeln!(out, "  n{} -> n{} [color=gray];", i, i + 1);
    }
    let (mut nf, mut ng) = (0, 0);
    for a in &all {
        let (tag, style, port) = match a.kind {
            ShareKind::Featurizer => {
                nf += 1;
                (format!("F{nf}"), "solid", "e")
            }
            ShareKind::FeatureGroup => {
                ng += 1;
                (format!("G{ng}"), "dashed", "w")
            }
        };
        for &c in &a.positions[1..] {
            let _ = writeln!(
                out,
                "  n{}:{port} -> n{c}:{port} [style={style}, constraint=false, label=\"{tag} {}\", comment=\"{tag}\"];",
                a.first(),
                a.shared.join(",")
            );
        }
    }
    out.push_str("}\n");
    out
}

/// Producer-to-consumer connections of one sharing kind as 0-based pairs.
pub fn connections(genome: &BackboneGenome, kind: ShareKind) -> Vec<(usize, usize)> {
    genome
        .sharing_groups(kind)
        .iter()
        .flat_map(|g| g.consumers().iter().map(move |&c| (g.producer(), c)))
        .collect()
}

/// Number of other LIVs strictly between two connected positions.
pub fn sharing_distance(a: usize, b: usize) -> usize {
    a.abs_diff(b).saturating_sub(1)
}

/// Per-generation motif aggregates over a population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifRow {
    pub generation: usize,
    pub population: usize,
    pub class_counts: BTreeMap<u32, u64>,
    /// LIVs that belong to an active featurizer-sharing group.
    pub featurizer_shared: u64,
    /// LIVs that belong to an active feature-group-sharing group.
    pub group_shared: u64,
    pub mean_featurizer_distance: Option<f64>,
    pub mean_group_distance: Option<f64>,
    /// Mean over connections of both kinds.
    pub mean_sharing_distance: Option<f64>,
}

fn mean(xs: &[usize]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
}

pub fn motif_row(generation: usize, genomes: &[BackboneGenome]) -> MotifRow {
    let mut class_counts = BTreeMap::new();
    let mut shared = [0u64; 2];
    let mut dists: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for g in genomes {
        for c in g.classes() {
            *class_counts.entry(c).or_insert(0) += 1;
        }
        for (k, kind) in ShareKind::ALL.into_iter().enumerate() {
            shared[k] += g.sharing_groups(kind).iter().map(|s| s.members.len() as u64).sum::<u64>();
            dists[k].extend(connections(g, kind).into_iter().map(|(a, b)| sharing_distance(a, b)));
        }
    }
    let both: Vec<usize> = dists.concat();
    MotifRow {
        generation,
        population: genomes.len(),
        class_counts,
        featurizer_shared: shared[0],
        group_shared: shared[1],
        mean_featurizer_distance: mean(&dists[0]),
        mean_group_distance: mean(&dists[1]),
        mean_sharing_distance: mean(&both),
    }
}

/// Motif rows for populations keyed by generation, in generation order.
pub fn motifs(populations: &BTreeMap<usize, Vec<BackboneGenome>>) -> Vec<MotifRow> {
    populations.iter().map(|(&g, pop)| motif_row(g, pop)).collect()
}

/// Tab-separated table with one column per class id in `pool`.
pub fn motif_table(rows: &[MotifRow], pool: &OptionPool) -> String {
    let ids: Vec<u32> = pool.class_ids().collect();
    let mut out = String::from("generation\tpopulation");
    for &id in &ids {
        let _ = write!(out, "\t{}", pool.name(id));
    }
    out.push_str("\tfeaturizer_shared\tgroup_shared\tmean_featurizer_distance\tmean_group_distance\tmean_sharing_distance\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    for r in rows {
        let _ = write!(out, "{}\t{}", r.generation, r.population);
        for id in &ids {
            let _ = write!(out, "\t{}", r.class_counts.get(id).copied().unwrap_or(0));
        }
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}",
            r.featurizer_shared,
            r.group_shared,
            opt(r.mean_featurizer_distance),
            opt(r.mean_group_distance),
            opt(r.mean_sharing_distance)
        );
    }
    out
}
