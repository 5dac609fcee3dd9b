//! Option pools: LIV classes, their operator genomes, featurizer genomes and
//! the feature groups each class may share.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("LIV class {0} is not in the option pool")]
    UnknownClass(u32),
    #[error("featurizer class {0} does not exist")]
    UnknownFeaturizer(u8),
    #[error("option pool must contain at least one LIV class")]
    Empty,
}

/// Named feature groups. The letters follow the usual operator notation:
/// attention uses Q/K/V, recurrences X (input), A (decay), Z (output gate)
/// and B/C (state in/out), gated convolutions B/C gates, V and a kernel,
/// and memoryless units a gate and X.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Q,
    K,
    V,
    X,
    A,
    Z,
    B,
    C,
    Kernel,
    Gate,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Q => "Q",
            Role::K => "K",
            Role::V => "V",
            Role::X => "X",
            Role::A => "A",
            Role::Z => "Z",
            Role::B => "B",
            Role::C => "C",
            Role::Kernel => "kernel",
            Role::Gate => "gate",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! coded_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $code:expr),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn code(self) -> u8 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

coded_enum!(
    /// Structure of `T^{ab}` across sequence positions.
    TokenMixing {
        Diagonal = 1,
        LowRank = 2,
        ScaledToeplitz = 3,
        SemiSeparable = 4,
    }
);

coded_enum!(Sparsity { Dense = 1, Banded = 2 });

coded_enum!(
    /// Nonlinearity applied to the token-mixing structure. `Sigmoid` is only
    /// used inside featurizer genomes (recurrence decay groups).
    Nonlinearity {
        Identity = 1,
        Softmax = 2,
        Relu = 3,
        Swish = 4,
        Sigmoid = 5,
    }
);

coded_enum!(
    /// Structure of `T_{ij}` across channels.
    ChannelMixing {
        Diagonal = 1,
        Dense = 2,
        Grouped = 3,
    }
);

coded_enum!(
    /// How a feature group is obtained.
    Parametrization {
        InputProjection = 1,
        Explicit = 2,
        Implicit = 3,
    }
);

/// Five-integer description of a LIV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperatorGenome {
    pub featurizer_class: u8,
    pub token_mixing: TokenMixing,
    pub sparsity: Sparsity,
    pub nonlinearity: Nonlinearity,
    pub channel_mixing: ChannelMixing,
}

impl OperatorGenome {
    pub fn digits(&self) -> [u8; 5] {
        [
            self.featurizer_class,
            self.token_mixing.code(),
            self.sparsity.code(),
            self.nonlinearity.code(),
            self.channel_mixing.code(),
        ]
    }

    /// Parses five operator-genome integers; `None` if any is out of range.
    pub fn from_digits(d: [u8; 5]) -> Option<Self> {
        if !(1..=9).contains(&d[0]) || d[3] > 4 {
            return None;
        }
        Some(Self {
            featurizer_class: d[0],
            token_mixing: TokenMixing::from_code(d[1])?,
            sparsity: Sparsity::from_code(d[2])?,
            nonlinearity: Nonlinearity::from_code(d[3])?,
            channel_mixing: ChannelMixing::from_code(d[4])?,
        })
    }

    pub fn family(&self) -> LivFamily {
        match self.token_mixing {
            TokenMixing::LowRank => LivFamily::Attention,
            TokenMixing::SemiSeparable => LivFamily::Recurrence,
            TokenMixing::ScaledToeplitz => LivFamily::GatedConv,
            TokenMixing::Diagonal => LivFamily::Memoryless,
        }
    }
}

impl fmt::Display for OperatorGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LivFamily {
    Attention,
    Recurrence,
    GatedConv,
    Memoryless,
}

/// Seven-integer description of one feature group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureGroupSpec {
    pub token_mixing: TokenMixing,
    pub sparsity: Sparsity,
    pub nonlinearity: Nonlinearity,
    pub channel_mixing: ChannelMixing,
    pub parametrization: Parametrization,
    pub expansion: u8,
    pub repeat: u8,
}

impl FeatureGroupSpec {
    const fn projected(token_mixing: TokenMixing, channel_mixing: ChannelMixing) -> Self {
        Self {
            token_mixing,
            sparsity: match token_mixing {
                TokenMixing::ScaledToeplitz => Sparsity::Banded,
                _ => Sparsity::Dense,
            },
            nonlinearity: Nonlinearity::Identity,
            channel_mixing,
            parametrization: Parametrization::InputProjection,
            expansion: 1,
            repeat: 1,
        }
    }

    const fn with_nonlinearity(mut self, n: Nonlinearity) -> Self {
        self.nonlinearity = n;
        self
    }

    const fn with_expansion(mut self, e: u8) -> Self {
        self.expansion = e;
        self
    }

    const fn with_repeat(mut self, r: u8) -> Self {
        self.repeat = r;
        self
    }

    const fn with_parametrization(mut self, p: Parametrization, s: Sparsity) -> Self {
        self.parametrization = p;
        self.sparsity = s;
        self
    }

    pub fn digits(&self) -> [u8; 7] {
        [
            self.token_mixing.code(),
            self.sparsity.code(),
            self.nonlinearity.code(),
            self.channel_mixing.code(),
            self.parametrization.code(),
            self.expansion,
            self.repeat,
        ]
    }

    /// True when the group is passed through a short causal convolution.
    pub fn is_toeplitz(&self) -> bool {
        self.token_mixing == TokenMixing::ScaledToeplitz
    }
}

pub const MAX_FEATURE_GROUPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeaturizerGenome {
    pub class: u8,
    pub groups: Vec<(Role, FeatureGroupSpec)>,
}

impl FeaturizerGenome {
    /// The 35-integer encoding; unused group slots are zero.
    pub fn digits(&self) -> [u8; 7 * MAX_FEATURE_GROUPS] {
        let mut out = [0u8; 7 * MAX_FEATURE_GROUPS];
        for (slot, (_, spec)) in self.groups.iter().enumerate() {
            out[slot * 7..slot * 7 + 7].copy_from_slice(&spec.digits());
        }
        out
    }

    pub fn spec(&self, role: Role) -> Option<&FeatureGroupSpec> {
        self.groups.iter().find(|(r, _)| *r == role).map(|(_, s)| s)
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.groups.iter().map(|(r, _)| *r)
    }
}

pub fn featurizer_genome(class: u8) -> Result<FeaturizerGenome, PoolError> {
    use ChannelMixing::{Dense, Diagonal as DiagCh};
    use TokenMixing::{Diagonal, ScaledToeplitz};
    let dense = FeatureGroupSpec::projected(Diagonal, Dense);
    let dense_conv = FeatureGroupSpec::projected(ScaledToeplitz, Dense);
    let diag_conv = FeatureGroupSpec::projected(ScaledToeplitz, DiagCh);
    let groups = match class {
        1 => vec![(Role::Q, dense), (Role::K, dense), (Role::V, dense)],
        2 => vec![(Role::Q, dense_conv), (Role::K, dense_conv), (Role::V, dense_conv)],
        3 | 4 => {
            let r = if class == 3 { 4 } else { 2 };
            vec![
                (Role::Q, dense),
                (Role::K, dense.with_repeat(r)),
                (Role::V, dense.with_repeat(r)),
            ]
        }
        5 | 6 => {
            let e = if class == 5 { 16 } else { 2 };
            vec![
                (Role::X, dense_conv),
                (Role::A, dense_conv.with_nonlinearity(Nonlinearity::Sigmoid)),
                (Role::Z, dense_conv.with_nonlinearity(Nonlinearity::Swish)),
                (Role::B, dense_conv.with_expansion(e)),
                (Role::C, dense_conv.with_expansion(e)),
            ]
        }
        7 | 8 => {
            let kernel = if class == 7 {
                diag_conv.with_parametrization(Parametrization::Explicit, Sparsity::Banded)
            } else {
                diag_conv.with_parametrization(Parametrization::Implicit, Sparsity::Dense)
            };
            vec![
                (Role::B, diag_conv),
                (Role::C, diag_conv),
                (Role::V, diag_conv),
                (Role::Kernel, kernel),
            ]
        }
        9 => vec![(Role::Gate, dense), (Role::X, dense)],
        other => return Err(PoolError::UnknownFeaturizer(other)),
    };
    Ok(FeaturizerGenome { class, groups })
}

/// A set of feature groups that can be shared as one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShareItem {
    pub name: &'static str,
    pub roles: &'static [Role],
}

impl LivFamily {
    pub fn shareable(self) -> &'static [ShareItem] {
        const ATTENTION: &[ShareItem] = &[
            ShareItem { name: "K", roles: &[Role::K] },
            ShareItem { name: "V", roles: &[Role::V] },
        ];
        const RECURRENCE: &[ShareItem] = &[
            ShareItem { name: "B", roles: &[Role::B] },
            ShareItem { name: "C", roles: &[Role::C] },
        ];
        const CONV: &[ShareItem] = &[
            ShareItem { name: "kernel", roles: &[Role::Kernel] },
            ShareItem { name: "gate", roles: &[Role::B, Role::C] },
        ];
        const MEMORYLESS: &[ShareItem] = &[ShareItem { name: "gate", roles: &[Role::Gate] }];
        match self {
            LivFamily::Attention => ATTENTION,
            LivFamily::Recurrence => RECURRENCE,
            LivFamily::GatedConv => CONV,
            LivFamily::Memoryless => MEMORYLESS,
        }
    }

    /// Ordered subsets of the shareable items; index 0 is the empty subset.
    pub fn strategies(self) -> Vec<Vec<ShareItem>> {
        let items = self.shareable();
        (0..1usize << items.len())
            .map(|mask| {
                items
                    .iter()
                    .enumerate()
                    .filter(|(bit, _)| mask & (1 << bit) != 0)
                    .map(|(_, item)| *item)
                    .collect()
            })
            .collect()
    }

    pub fn strategy_count(self) -> u32 {
        1 << self.shareable().len()
    }

    /// Roles shared under a 1-based feature-group sharing strategy.
    pub fn strategy_roles(self, strategy: u32) -> Vec<Role> {
        let items = self.shareable();
        let mask = strategy.saturating_sub(1) as usize;
        items
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .flat_map(|(_, item)| item.roles.iter().copied())
            .collect()
    }
}

/// One entry in the LIV class table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LivClass {
    pub id: u32,
    pub name: String,
    pub operator: OperatorGenome,
    pub differential: bool,
}

impl LivClass {
    pub fn family(&self) -> LivFamily {
        self.operator.family()
    }
}

/// Result of unrolling a backbone-level class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Expansion {
    pub operator: OperatorGenome,
    pub differential: bool,
}

pub const STANDARD_CLASS_COUNT: u32 = 17;

const BASE_CLASSES: [(&str, [u8; 5]); 9] = [
    ("SA-1", [1, 2, 1, 2, 3]),
    ("SA-2", [2, 2, 1, 2, 3]),
    ("SA-3", [3, 2, 1, 2, 3]),
    ("SA-4", [4, 2, 1, 2, 3]),
    ("Rec-1", [5, 4, 1, 1, 1]),
    ("Rec-2", [6, 4, 1, 1, 1]),
    ("GConv-1", [7, 3, 1, 1, 1]),
    ("GConv-2", [8, 3, 1, 1, 1]),
    ("GMemless", [9, 1, 1, 4, 2]),
];

fn standard_class(id: u32) -> Option<LivClass> {
    let (base, differential) = match id {
        1..=9 => (id, false),
        10..=17 => (id - 9, true),
        _ => return None,
    };
    let (name, digits) = BASE_CLASSES[(base - 1) as usize];
    let operator = OperatorGenome::from_digits(digits).expect("table entries are in range");
    let name = if differential { format!("Diff-{name}") } else { name.to_string() };
    Some(LivClass { id, name, operator, differential })
}

/// The set of LIV classes available to a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptionPool {
    classes: Vec<LivClass>,
}

impl Default for OptionPool {
    fn default() -> Self {
        Self::standard()
    }
}

impl OptionPool {
    /// All 17 classes: four attention variants, two recurrences, two gated
    /// convolutions, the gated memoryless unit and eight differential variants.
    pub fn standard() -> Self {
        Self { classes: (1..=STANDARD_CLASS_COUNT).filter_map(standard_class).collect() }
    }

    pub fn with_classes(ids: &[u32]) -> Result<Self, PoolError> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(PoolError::Empty);
        }
        let classes = ids
            .into_iter()
            .map(|id| standard_class(id).ok_or(PoolError::UnknownClass(id)))
            .collect::<Result<_, _>>()?;
        Ok(Self { classes })
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.get(id).is_ok()
    }

    pub fn get(&self, id: u32) -> Result<&LivClass, PoolError> {
        self.classes.iter().find(|c| c.id == id).ok_or(PoolError::UnknownClass(id))
    }

    pub fn expand(&self, id: u32) -> Result<Expansion, PoolError> {
        let class = self.get(id)?;
        Ok(Expansion { operator: class.operator, differential: class.differential })
    }

    pub fn featurizer(&self, id: u32) -> Result<FeaturizerGenome, PoolError> {
        featurizer_genome(self.get(id)?.operator.featurizer_class)
    }

    pub fn strategy_count(&self, id: u32) -> Result<u32, PoolError> {
        Ok(self.get(id)?.family().strategy_count())
    }

    pub fn name(&self, id: u32) -> String {
        self.get(id).map(|c| c.name.clone()).unwrap_or_else(|_| format!("class-{id}"))
    }
}

/// Unrolls a backbone-level LIV class id into its operator genome.
pub fn expand_liv_class(class_id: u32, pool: &OptionPool) -> Result<Expansion, PoolError> {
    pool.expand(class_id)
}
