//! Backbone genomes: one integer segment per LIV, describing its class and
//! how it shares featurizer weights or feature groups with other LIVs.
//!
//! A gene is `[class, feat_label, feat_strategy, group_label, group_strategy]`
//! with an optional sixth residual label. Sharing labels are matched across
//! the whole backbone; a gene takes part in sharing only when its strategy
//! is above 1 ("active"). Active genes with the same label form a sharing
//! group, which is only legal when all of them have the same class. The
//! shallowest member produces, deeper members consume, and every member
//! uses the shallowest member's strategy.

mod pool;
mod text;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::GenomeRng;

pub use pool::{
    expand_liv_class, featurizer_genome, ChannelMixing, Expansion, FeatureGroupSpec,
    FeaturizerGenome, LivClass, LivFamily, Nonlinearity, OperatorGenome, OptionPool,
    Parametrization, PoolError, Role, ShareItem, Sparsity, TokenMixing, MAX_FEATURE_GROUPS,
    STANDARD_CLASS_COUNT,
};
pub use text::{format, format_compact, parse, ParseError};

/// Class ids of the baselines used for striped hybrid seeds.
pub const SA_1: u32 = 1;
pub const REC_1: u32 = 5;
pub const GCONV_1: u32 = 7;
pub const GMEMLESS: u32 = 9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LivGene {
    pub liv_class: u32,
    pub feat_share_group: u32,
    pub feat_share_strategy: u32,
    pub group_share_group: u32,
    pub group_share_strategy: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_group: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShareKind {
    Featurizer,
    FeatureGroup,
}

impl ShareKind {
    pub const ALL: [ShareKind; 2] = [ShareKind::Featurizer, ShareKind::FeatureGroup];
}

impl LivGene {
    pub fn new(liv_class: u32, feat_group: u32, feat_strategy: u32, group: u32, group_strategy: u32) -> Self {
        Self {
            liv_class,
            feat_share_group: feat_group,
            feat_share_strategy: feat_strategy,
            group_share_group: group,
            group_share_strategy: group_strategy,
            residual_group: None,
        }
    }

    pub fn values(&self) -> Vec<u32> {
        let mut v = vec![
            self.liv_class,
            self.feat_share_group,
            self.feat_share_strategy,
            self.group_share_group,
            self.group_share_strategy,
        ];
        v.extend(self.residual_group);
        v
    }

    pub fn label(&self, kind: ShareKind) -> u32 {
        match kind {
            ShareKind::Featurizer => self.feat_share_group,
            ShareKind::FeatureGroup => self.group_share_group,
        }
    }

    pub fn strategy(&self, kind: ShareKind) -> u32 {
        match kind {
            ShareKind::Featurizer => self.feat_share_strategy,
            ShareKind::FeatureGroup => self.group_share_strategy,
        }
    }

    fn label_mut(&mut self, kind: ShareKind) -> &mut u32 {
        match kind {
            ShareKind::Featurizer => &mut self.feat_share_group,
            ShareKind::FeatureGroup => &mut self.group_share_group,
        }
    }

    fn strategy_mut(&mut self, kind: ShareKind) -> &mut u32 {
        match kind {
            ShareKind::Featurizer => &mut self.feat_share_strategy,
            ShareKind::FeatureGroup => &mut self.group_share_strategy,
        }
    }

    /// Whether this gene asks to share (strategy above "none").
    pub fn is_active(&self, kind: ShareKind) -> bool {
        self.strategy(kind) > 1
    }
}

/// Ordered LIV genes; the unit of evolution. Depth is fixed per run and
/// width is a run-level dimension, not part of the genome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneGenome {
    genes: Vec<LivGene>,
}

/// Active members of one sharing label (0-based gene indices, ascending).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharingGroup {
    pub kind: ShareKind,
    pub label: u32,
    pub class: u32,
    pub members: Vec<usize>,
    /// Strategy of the shallowest member, applied to the whole group.
    pub strategy: u32,
}

impl SharingGroup {
    pub fn producer(&self) -> usize {
        self.members[0]
    }

    pub fn consumers(&self) -> &[usize] {
        &self.members[1..]
    }
}

impl BackboneGenome {
    pub fn new(genes: Vec<LivGene>) -> Self {
        Self { genes }
    }

    /// A backbone without any sharing: the k-th occurrence of a class gets
    /// labels `k` and both strategies are 1.
    pub fn unshared(classes: &[u32]) -> Self {
        let mut seen: HashMap<u32, u32> = HashMap::new();
        let genes = classes
            .iter()
            .map(|&c| {
                let k = seen.entry(c).or_insert(0);
                *k += 1;
                LivGene::new(c, *k, 1, *k, 1)
            })
            .collect();
        Self { genes }
    }

    /// Alternates `baseline` (even positions) with `memoryless` (odd positions).
    pub fn striped_hybrid(depth: usize, baseline: u32, memoryless: u32) -> Self {
        let classes: Vec<u32> =
            (0..depth).map(|i| if i % 2 == 0 { baseline } else { memoryless }).collect();
        Self::unshared(&classes)
    }

    pub fn genes(&self) -> &[LivGene] {
        &self.genes
    }

    pub fn genes_mut(&mut self) -> &mut [LivGene] {
        &mut self.genes
    }

    pub fn depth(&self) -> usize {
        self.genes.len()
    }

    pub fn classes(&self) -> Vec<u32> {
        self.genes.iter().map(|g| g.liv_class).collect()
    }

    pub fn has_residual_extension(&self) -> bool {
        self.genes.iter().any(|g| g.residual_group.is_some())
    }

    /// Number of genes of each class.
    pub fn class_counts(&self) -> HashMap<u32, u32> {
        let mut counts = HashMap::new();
        for g in &self.genes {
            *counts.entry(g.liv_class).or_insert(0) += 1;
        }
        counts
    }

    /// Sharing groups with at least two active same-class members.
    pub fn sharing_groups(&self, kind: ShareKind) -> Vec<SharingGroup> {
        let mut by_key: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, g) in self.genes.iter().enumerate() {
            if g.is_active(kind) {
                by_key.entry((g.label(kind), g.liv_class)).or_default().push(i);
            }
        }
        let mut groups: Vec<SharingGroup> = by_key
            .into_iter()
            .filter(|(_, members)| members.len() >= 2)
            .map(|((label, class), members)| SharingGroup {
                kind,
                label,
                class,
                strategy: self.genes[members[0]].strategy(kind),
                members,
            })
            .collect();
        groups.sort_by_key(|g| g.members[0]);
        groups
    }

    /// For each gene, the nearest shallower gene with the same residual label.
    pub fn residual_sources(&self) -> Vec<Option<usize>> {
        let mut last: HashMap<u32, usize> = HashMap::new();
        self.genes
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let label = g.residual_group?;
                last.insert(label, i)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneField {
    LivClass,
    FeatShareGroup,
    FeatShareStrategy,
    GroupShareGroup,
    GroupShareStrategy,
    ResidualGroup,
}

impl GeneField {
    fn label_of(kind: ShareKind) -> Self {
        match kind {
            ShareKind::Featurizer => GeneField::FeatShareGroup,
            ShareKind::FeatureGroup => GeneField::GroupShareGroup,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    NotInPool,
    OutOfRange { min: u32, max: u32 },
    /// Active sharing with a gene of a different class.
    CrossClassSharing { other: usize },
    /// Some genes carry a residual label and others do not.
    ResidualMixed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub gene: usize,
    pub field: GeneField,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gene {} {:?}: ", self.gene + 1, self.field)?;
        match &self.rule {
            Rule::NotInPool => write!(f, "class not in option pool"),
            Rule::OutOfRange { min, max } => write!(f, "value outside {min}..={max}"),
            Rule::CrossClassSharing { other } => {
                write!(f, "shares with gene {} of a different class", other + 1)
            }
            Rule::ResidualMixed => write!(f, "residual label missing while other genes carry one"),
        }
    }
}

/// Checks every genome invariant. Never fails; an empty list means valid.
pub fn validate(genome: &BackboneGenome, pool: &OptionPool) -> Vec<Violation> {
    let mut out = Vec::new();
    let counts = genome.class_counts();
    let depth = genome.depth() as u32;
    let residual = genome.has_residual_extension();
    for (i, g) in genome.genes.iter().enumerate() {
        let n = counts[&g.liv_class];
        if !pool.contains(g.liv_class) {
            out.push(Violation { gene: i, field: GeneField::LivClass, rule: Rule::NotInPool });
        }
        for kind in ShareKind::ALL {
            let l = g.label(kind);
            if l < 1 || l > n {
                out.push(Violation {
                    gene: i,
                    field: GeneField::label_of(kind),
                    rule: Rule::OutOfRange { min: 1, max: n },
                });
            }
        }
        if !(1..=2).contains(&g.feat_share_strategy) {
            out.push(Violation {
                gene: i,
                field: GeneField::FeatShareStrategy,
                rule: Rule::OutOfRange { min: 1, max: 2 },
            });
        }
        if let Ok(max) = pool.strategy_count(g.liv_class) {
            if !(1..=max).contains(&g.group_share_strategy) {
                out.push(Violation {
                    gene: i,
                    field: GeneField::GroupShareStrategy,
                    rule: Rule::OutOfRange { min: 1, max },
                });
            }
        }
        match g.residual_group {
            None if residual => out.push(Violation {
                gene: i,
                field: GeneField::ResidualGroup,
                rule: Rule::ResidualMixed,
            }),
            Some(r) if r < 1 || r > depth => out.push(Violation {
                gene: i,
                field: GeneField::ResidualGroup,
                rule: Rule::OutOfRange { min: 1, max: depth },
            }),
            _ => {}
        }
    }
    for kind in ShareKind::ALL {
        let mut anchor: HashMap<u32, usize> = HashMap::new();
        for (i, g) in genome.genes.iter().enumerate() {
            if !g.is_active(kind) {
                continue;
            }
            match anchor.get(&g.label(kind)) {
                None => {
                    anchor.insert(g.label(kind), i);
                }
                Some(&a) if genome.genes[a].liv_class != g.liv_class => out.push(Violation {
                    gene: i,
                    field: GeneField::label_of(kind),
                    rule: Rule::CrossClassSharing { other: a },
                }),
                Some(_) => {}
            }
        }
    }
    out
}

pub fn is_valid(genome: &BackboneGenome, pool: &OptionPool) -> bool {
    validate(genome, pool).is_empty()
}

/// Picks an unused label for gene `i` that creates no cross-class sharing.
/// Deactivates the gene's sharing when no such label exists.
fn assign_fresh_label(genes: &mut [LivGene], i: usize, kind: ShareKind) {
    let class = genes[i].liv_class;
    let n = genes.iter().filter(|g| g.liv_class == class).count() as u32;
    let active = genes[i].is_active(kind);
    let free_in_class = |l: u32| {
        genes
            .iter()
            .enumerate()
            .all(|(j, g)| j == i || g.liv_class != class || g.label(kind) != l)
    };
    let no_foreign_active = |l: u32| {
        genes
            .iter()
            .all(|g| g.liv_class == class || !g.is_active(kind) || g.label(kind) != l)
    };
    let preferred = (1..=n).find(|&l| free_in_class(l) && (!active || no_foreign_active(l)));
    match preferred {
        Some(l) => *genes[i].label_mut(kind) = l,
        None => {
            // A class with n genes always has a free label among 1..=n.
            let l = (1..=n).find(|&l| free_in_class(l)).unwrap_or(1);
            *genes[i].label_mut(kind) = l;
            *genes[i].strategy_mut(kind) = 1;
        }
    }
}

fn repair_pass(g: &mut BackboneGenome, pool: &OptionPool, rng: &mut GenomeRng) {
    let ids: Vec<u32> = pool.class_ids().collect();
    for gene in &mut g.genes {
        if !pool.contains(gene.liv_class) {
            gene.liv_class = *ids.choose(rng).expect("pool is non-empty");
        }
    }
    for gene in &mut g.genes {
        if !(1..=2).contains(&gene.feat_share_strategy) {
            gene.feat_share_strategy = rng.random_range(1..=2);
        }
        let max = pool.strategy_count(gene.liv_class).expect("class was repaired");
        if !(1..=max).contains(&gene.group_share_strategy) {
            gene.group_share_strategy = rng.random_range(1..=max);
        }
    }
    let depth = g.depth() as u32;
    if g.has_residual_extension() {
        for gene in &mut g.genes {
            match gene.residual_group {
                Some(r) if (1..=depth).contains(&r) => {}
                _ => gene.residual_group = Some(rng.random_range(1..=depth)),
            }
        }
    }
    for kind in ShareKind::ALL {
        let counts = g.class_counts();
        for i in 0..g.genes.len() {
            let l = g.genes[i].label(kind);
            if l < 1 || l > counts[&g.genes[i].liv_class] {
                assign_fresh_label(&mut g.genes, i, kind);
            }
        }
        let mut anchor: HashMap<u32, u32> = HashMap::new();
        for i in 0..g.genes.len() {
            if !g.genes[i].is_active(kind) {
                continue;
            }
            let label = g.genes[i].label(kind);
            match anchor.get(&label) {
                None => {
                    anchor.insert(label, g.genes[i].liv_class);
                }
                Some(&c) if c != g.genes[i].liv_class => {
                    assign_fresh_label(&mut g.genes, i, kind);
                    if g.genes[i].is_active(kind) {
                        anchor.entry(g.genes[i].label(kind)).or_insert(g.genes[i].liv_class);
                    }
                }
                Some(_) => {}
            }
        }
    }
}

/// Returns a valid genome. Invalid classes and strategies are resampled
/// uniformly from their valid sets; invalid sharing connections are severed
/// by moving the offending gene to a fresh label. Valid genomes are
/// returned unchanged.
pub fn repair(genome: &BackboneGenome, pool: &OptionPool, rng: &mut GenomeRng) -> BackboneGenome {
    let mut g = genome.clone();
    for _ in 0..4 {
        if is_valid(&g, pool) {
            return g;
        }
        repair_pass(&mut g, pool, rng);
    }
    debug_assert!(is_valid(&g, pool), "repair did not converge: {:?}", validate(&g, pool));
    g
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    /// Each integer is redrawn independently with the mutation probability.
    #[default]
    PerInteger,
    /// Each gene is redrawn as a whole with the mutation probability.
    PerGene,
}

/// Draws a replacement for one gene position from its valid set.
fn draw_position(
    genes: &mut [LivGene],
    i: usize,
    pos: usize,
    pool: &OptionPool,
    rng: &mut GenomeRng,
) {
    let class = genes[i].liv_class;
    let n = genes.iter().filter(|g| g.liv_class == class).count() as u32;
    let depth = genes.len() as u32;
    let g = &mut genes[i];
    match pos {
        0 => {
            let ids: Vec<u32> = pool.class_ids().collect();
            g.liv_class = *ids.choose(rng).expect("pool is non-empty");
        }
        1 => g.feat_share_group = rng.random_range(1..=n),
        2 => g.feat_share_strategy = rng.random_range(1..=2),
        3 => g.group_share_group = rng.random_range(1..=n),
        4 => {
            let max = pool.strategy_count(class).unwrap_or(1);
            g.group_share_strategy = rng.random_range(1..=max);
        }
        _ => g.residual_group = Some(rng.random_range(1..=depth)),
    }
}

pub fn mutate(
    genome: &BackboneGenome,
    rate: f64,
    pool: &OptionPool,
    rng: &mut GenomeRng,
) -> BackboneGenome {
    mutate_with(genome, rate, MutationMode::PerInteger, pool, rng)
}

pub fn mutate_with(
    genome: &BackboneGenome,
    rate: f64,
    mode: MutationMode,
    pool: &OptionPool,
    rng: &mut GenomeRng,
) -> BackboneGenome {
    let rate = rate.clamp(0.0, 1.0);
    let mut g = genome.clone();
    for i in 0..g.genes.len() {
        let positions = if g.genes[i].residual_group.is_some() { 6 } else { 5 };
        match mode {
            MutationMode::PerInteger => {
                for pos in 0..positions {
                    if rng.random_bool(rate) {
                        draw_position(&mut g.genes, i, pos, pool, rng);
                    }
                }
            }
            MutationMode::PerGene => {
                if rng.random_bool(rate) {
                    for pos in 0..positions {
                        draw_position(&mut g.genes, i, pos, pool, rng);
                    }
                }
            }
        }
    }
    repair(&g, pool, rng)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenomeError {
    #[error("parents have different depths ({0} and {1})")]
    DepthMismatch(usize, usize),
    #[error("{points} crossover points do not fit a depth-{depth} genome")]
    TooManyCutPoints { points: usize, depth: usize },
}

/// Swaps alternating spans between gene-boundary cut points. `cuts` are
/// boundary positions in `1..depth`; no repair is applied.
pub fn crossover_at(
    a: &BackboneGenome,
    b: &BackboneGenome,
    cuts: &[usize],
) -> Result<(BackboneGenome, BackboneGenome), GenomeError> {
    if a.depth() != b.depth() {
        return Err(GenomeError::DepthMismatch(a.depth(), b.depth()));
    }
    let mut cuts = cuts.to_vec();
    cuts.sort_unstable();
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    let mut swapped = false;
    let mut next = cuts.iter().peekable();
    for i in 0..a.depth() {
        while next.peek().is_some_and(|&&c| c == i) {
            swapped = !swapped;
            next.next();
        }
        if swapped {
            c1.genes[i] = b.genes[i].clone();
            c2.genes[i] = a.genes[i].clone();
        }
    }
    Ok((c1, c2))
}

/// k-point crossover at distinct uniformly drawn gene boundaries, followed
/// by repair of both children.
pub fn crossover(
    a: &BackboneGenome,
    b: &BackboneGenome,
    k: usize,
    pool: &OptionPool,
    rng: &mut GenomeRng,
) -> Result<(BackboneGenome, BackboneGenome), GenomeError> {
    if a.depth() != b.depth() {
        return Err(GenomeError::DepthMismatch(a.depth(), b.depth()));
    }
    let depth = a.depth();
    if k > 0 && k >= depth {
        return Err(GenomeError::TooManyCutPoints { points: k, depth });
    }
    let cuts: Vec<usize> = if k == 0 {
        Vec::new()
    } else {
        index::sample(rng, depth - 1, k).into_iter().map(|c| c + 1).collect()
    };
    let (c1, c2) = crossover_at(a, b, &cuts)?;
    Ok((repair(&c1, pool, rng), repair(&c2, pool, rng)))
}

/// Uniformly random classes, labels and strategies, then repaired.
pub fn random_genome(
    depth: usize,
    pool: &OptionPool,
    residual: bool,
    rng: &mut GenomeRng,
) -> BackboneGenome {
    let ids: Vec<u32> = pool.class_ids().collect();
    let classes: Vec<u32> =
        (0..depth).map(|_| *ids.choose(rng).expect("pool is non-empty")).collect();
    let mut g = BackboneGenome::unshared(&classes);
    for i in 0..depth {
        for pos in 1..5 {
            draw_position(&mut g.genes, i, pos, pool, rng);
        }
        if residual {
            draw_position(&mut g.genes, i, 5, pool, rng);
        }
    }
    repair(&g, pool, rng)
}

/// Initial population: `round(n * hybrid_fraction)` striped hybrids of the
/// memoryless class with a baseline (attention, recurrence, convolution in
/// turn), the rest random.
pub fn seed_population(
    n: usize,
    depth: usize,
    pool: &OptionPool,
    hybrid_fraction: f64,
    residual: bool,
    rng: &mut GenomeRng,
) -> Vec<BackboneGenome> {
    let hybrids = (n as f64 * hybrid_fraction.clamp(0.0, 1.0)).round() as usize;
    let baselines: Vec<u32> =
        [SA_1, REC_1, GCONV_1].into_iter().filter(|&c| pool.contains(c)).collect();
    let can_stripe = pool.contains(GMEMLESS) && !baselines.is_empty();
    (0..n)
        .map(|k| {
            if k < hybrids && can_stripe {
                let mut g =
                    BackboneGenome::striped_hybrid(depth, baselines[k % baselines.len()], GMEMLESS);
                if residual {
                    for (i, gene) in g.genes.iter_mut().enumerate() {
                        gene.residual_group = Some(i as u32 + 1);
                    }
                }
                g
            } else {
                random_genome(depth, pool, residual, rng)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> OptionPool {
        OptionPool::standard()
    }

    fn rng() -> GenomeRng {
        GenomeRng::new(42, 0)
    }

    #[test]
    fn worked_example_is_valid() {
        let g = parse("21211-31112-21221-32112").unwrap();
        assert_eq!(validate(&g, &pool()), vec![]);
        let feat = g.sharing_groups(ShareKind::Featurizer);
        assert_eq!(feat.len(), 1);
        assert_eq!(feat[0].members, vec![0, 2]);
        assert_eq!(feat[0].strategy, 2);
        let grp = g.sharing_groups(ShareKind::FeatureGroup);
        assert_eq!(grp.len(), 1);
        assert_eq!(grp[0].members, vec![1, 3]);
        assert_eq!(grp[0].class, 3);
    }

    #[test]
    fn appendix_examples_are_valid() {
        for text in [
            "11111 91111 12121 92121",
            "11111 91111 51111 92121",
            "11111 91111 51111 92121 11221 91131",
        ] {
            let g = parse(text).unwrap();
            assert!(is_valid(&g, &pool()), "{text}: {:?}", validate(&g, &pool()));
        }
    }

    #[test]
    fn cross_class_sharing_is_one_violation() {
        let g = BackboneGenome::new(vec![LivGene::new(2, 1, 2, 1, 1), LivGene::new(3, 1, 2, 1, 1)]);
        let v = validate(&g, &pool());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].gene, 1);
        assert_eq!(v[0].field, GeneField::FeatShareGroup);
        assert_eq!(v[0].rule, Rule::CrossClassSharing { other: 0 });
    }

    #[test]
    fn strategy_range_violation() {
        let g = BackboneGenome::new(vec![LivGene::new(9, 1, 1, 1, 3)]);
        let v = validate(&g, &pool());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, GeneField::GroupShareStrategy);
        assert_eq!(v[0].rule, Rule::OutOfRange { min: 1, max: 2 });
    }

    #[test]
    fn label_range_depends_on_class_count() {
        let g = BackboneGenome::new(vec![LivGene::new(1, 2, 1, 1, 1), LivGene::new(9, 1, 1, 1, 1)]);
        let v = validate(&g, &pool());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::OutOfRange { min: 1, max: 1 });
    }

    #[test]
    fn residual_mixed_is_flagged() {
        let g = parse("111111-91111").unwrap();
        let v = validate(&g, &pool());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::ResidualMixed);
    }

    #[test]
    fn repair_severs_cross_class_pair() {
        let g = BackboneGenome::new(vec![
            LivGene::new(2, 1, 2, 1, 1),
            LivGene::new(3, 1, 2, 1, 1),
            LivGene::new(3, 2, 1, 2, 1),
        ]);
        let r = repair(&g, &pool(), &mut rng());
        assert!(is_valid(&r, &pool()));
        assert_eq!(r.classes(), g.classes());
        assert_eq!(r.genes()[0], g.genes()[0]);
        // no label of class 3 is free of foreign sharing, so gene 2 stops sharing
        assert_eq!(r.genes()[1].feat_share_strategy, 1);
        assert_eq!(r.genes()[2], g.genes()[2]);
    }

    #[test]
    fn repair_resamples_unknown_class() {
        let g = BackboneGenome::new(vec![LivGene::new(99, 1, 1, 1, 1)]);
        let r = repair(&g, &pool(), &mut rng());
        assert!(pool().contains(r.genes()[0].liv_class));
        assert!(is_valid(&r, &pool()));
    }

    #[test]
    fn repair_is_identity_on_valid() {
        let g = parse("21211-31112-21221-32112").unwrap();
        assert_eq!(repair(&g, &pool(), &mut rng()), g);
    }

    #[test]
    fn mutation_rate_zero_is_identity() {
        let mut r = rng();
        for _ in 0..50 {
            let g = random_genome(12, &pool(), false, &mut r);
            assert_eq!(mutate(&g, 0.0, &pool(), &mut r), g);
        }
    }

    #[test]
    fn full_rate_mutation_on_single_gene_is_valid() {
        let mut r = rng();
        let g = BackboneGenome::unshared(&[1]);
        for _ in 0..1000 {
            let m = mutate(&g, 1.0, &pool(), &mut r);
            assert_eq!(m.depth(), 1);
            assert_eq!(validate(&m, &pool()), vec![]);
        }
    }

    #[test]
    fn per_gene_mutation_is_valid() {
        let mut r = rng();
        for _ in 0..200 {
            let g = random_genome(8, &pool(), false, &mut r);
            let m = mutate_with(&g, 0.5, MutationMode::PerGene, &pool(), &mut r);
            assert!(is_valid(&m, &pool()));
        }
    }

    #[test]
    fn midpoint_crossover() {
        let a = BackboneGenome::unshared(&[1, 1, 1, 1]);
        let b = BackboneGenome::unshared(&[9, 9, 9, 9]);
        let (c1, c2) = crossover_at(&a, &b, &[2]).unwrap();
        assert_eq!(c1.classes(), vec![1, 1, 9, 9]);
        assert_eq!(c2.classes(), vec![9, 9, 1, 1]);
        let (c1, _) = crossover_at(&a, &b, &[1, 3]).unwrap();
        assert_eq!(c1.classes(), vec![1, 9, 9, 1]);
    }

    #[test]
    fn crossover_of_identical_parents() {
        let mut r = rng();
        let a = random_genome(10, &pool(), false, &mut r);
        let (c1, c2) = crossover(&a, &a, 2, &pool(), &mut r).unwrap();
        assert_eq!(c1, a);
        assert_eq!(c2, a);
    }

    #[test]
    fn crossover_errors() {
        let a = BackboneGenome::unshared(&[1, 9]);
        let b = BackboneGenome::unshared(&[1, 9, 1]);
        assert_eq!(
            crossover(&a, &b, 1, &pool(), &mut rng()).unwrap_err(),
            GenomeError::DepthMismatch(2, 3)
        );
        assert!(matches!(
            crossover(&a, &a, 2, &pool(), &mut rng()),
            Err(GenomeError::TooManyCutPoints { .. })
        ));
    }

    #[test]
    fn random_genomes_are_valid() {
        let mut r = rng();
        for depth in [1, 2, 5, 24] {
            for _ in 0..200 {
                let g = random_genome(depth, &pool(), depth % 2 == 0, &mut r);
                assert_eq!(g.depth(), depth);
                assert_eq!(validate(&g, &pool()), vec![]);
            }
        }
    }

    #[test]
    fn hybrid_seed_layout() {
        let pop = seed_population(1, 4, &pool(), 1.0, false, &mut rng());
        assert_eq!(pop[0].classes(), vec![1, 9, 1, 9]);
        assert!(pop[0].genes().iter().all(|g| g.feat_share_strategy == 1 && g.group_share_strategy == 1));
        assert!(is_valid(&pop[0], &pool()));
        let pop = seed_population(16, 6, &pool(), 0.0, false, &mut rng());
        assert_eq!(pop.len(), 16);
        assert!(pop.iter().all(|g| is_valid(g, &pool())));
        let pop = seed_population(6, 4, &pool(), 0.5, false, &mut rng());
        assert_eq!(pop[1].classes(), vec![5, 9, 5, 9]);
        assert_eq!(pop[2].classes(), vec![7, 9, 7, 9]);
    }

    #[test]
    fn residual_sources_follow_labels() {
        let g = parse("111111-911112-121213-921211").unwrap();
        assert_eq!(g.residual_sources(), vec![None, None, None, Some(0)]);
    }

    #[test]
    fn structured_record_serialization() {
        let g = parse("21211-31112").unwrap();
        let json = serde_json::to_value(&g).unwrap();
        assert_eq!(json["genes"][0]["liv_class"], 2);
        assert_eq!(json["genes"][1]["group_share_strategy"], 2);
        assert!(json["genes"][0].get("residual_group").is_none());
        let back: BackboneGenome = serde_json::from_value(json).unwrap();
        assert_eq!(back, g);
    }
}
