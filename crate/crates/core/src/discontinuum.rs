//! The discontinuum `E_σ ⊂ [0, 1/2]` and its Cantor staircase.
//!
//! Level `m` of a [`StaircaseTree`] holds the `2^(m-1)` surviving intervals
//! `[c, d]`, each carrying the removed open interval `(a, b)` and the staircase
//! values at `c`, on the removed interval, and at `d`. Odd levels remove an
//! interval whose right end is the center of `[c, d]`; even levels remove all
//! but two margins of length `(d - c) / K(m)`.
//!
//! `K(m)` is the expansion factor of level `m`. Under [`KMode::Exact`] it is
//! `1 + 2 * max_p ratio` where `ratio = (vd - vc) / (d - c)` over the level-`m`
//! intervals; [`KMode::Ceil`] rounds it up to the next power of two. The
//! maximum ratio is always attained on the leftmost interval (left children
//! multiply the ratio by a factor `>= 1`, right children keep it), so levels
//! deeper than the materialized ones only need the leftmost spine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Enclosure, Rational};

/// Default bound on the staircase level reached by a single descent.
pub const DEFAULT_LEVEL_CUTOFF: u32 = 64;

/// How `2^{k_σ(m)}` is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KMode {
    /// `K(m) = 1 + 2 * max ratio`, a rational.
    #[default]
    Exact,
    /// Smallest power of two not below the exact value.
    Ceil,
}

impl KMode {
    fn realize(self, max_ratio: &Rational) -> Result<Rational> {
        let exact = Rational::one() + Rational::from_integer(2) * max_ratio;
        match self {
            KMode::Exact => Ok(exact),
            KMode::Ceil => Ok(Rational::pow2(exact.ceil_log2()?)),
        }
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KMode::Exact => "exact",
            KMode::Ceil => "ceil",
        })
    }
}

impl FromStr for KMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(KMode::Exact),
            "ceil" => Ok(KMode::Ceil),
            other => invalid(format!("unknown k-mode {other:?}")),
        }
    }
}

/// A surviving interval `[c, d]` of level `m` together with its removed
/// interval `(a, b)` and the staircase values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaircaseNode {
    pub sigma: u32,
    pub m: u32,
    /// 1-based position from the left.
    pub p: u64,
    pub c: Rational,
    pub a: Rational,
    pub b: Rational,
    pub d: Rational,
    pub vc: Rational,
    pub plateau: Rational,
    pub vd: Rational,
}

impl StaircaseNode {
    /// Level-1 node: `[0, 1/2]` with values `0` and `1`.
    pub fn root(sigma: u32) -> Self {
        Self::carve(
            sigma,
            1,
            1,
            Rational::zero(),
            Rational::frac(1, 2),
            Rational::zero(),
            Rational::one(),
            None,
        )
    }

    /// Place the removed interval of `[c, d]` at level `m`. Even levels need
    /// the expansion factor.
    #[allow(clippy::too_many_arguments)]
    fn carve(
        sigma: u32,
        m: u32,
        p: u64,
        c: Rational,
        d: Rational,
        vc: Rational,
        vd: Rational,
        kfactor: Option<&Rational>,
    ) -> Self {
        let len = &d - &c;
        let (a, b) = if m % 2 == 1 {
            let b = c.midpoint(&d);
            let removed = &len * (Rational::frac(1, 2) - Rational::pow2(-i64::from(m + sigma)));
            (&b - removed, b)
        } else {
            let k = kfactor.expect("even levels carry an expansion factor");
            let margin = &len / k;
            (&c + &margin, &d - &margin)
        };
        // Unique value making R(f, b, c) = R(f, d, c).
        let plateau = &vc + (&b - &c) / &len * (&vd - &vc);
        StaircaseNode {
            sigma,
            m,
            p,
            c,
            a,
            b,
            d,
            vc,
            plateau,
            vd,
        }
    }

    pub fn len(&self) -> Rational {
        &self.d - &self.c
    }

    pub fn removed_len(&self) -> Rational {
        &self.b - &self.a
    }

    /// Staircase increase across the node, `vd - vc`.
    pub fn gap(&self) -> Rational {
        &self.vd - &self.vc
    }

    /// Secant slope `(vd - vc) / (d - c)`.
    pub fn ratio(&self) -> Rational {
        self.gap() / self.len()
    }

    pub fn contains(&self, s: &Rational) -> bool {
        &self.c <= s && s <= &self.d
    }

    /// `s` lies in the open removed interval.
    pub fn removes(&self, s: &Rational) -> bool {
        &self.a < s && s < &self.b
    }

    /// Interval data `(c, d, vc, vd)` of the left or right survivor.
    fn survivor(&self, right: bool) -> Survivor {
        if right {
            Survivor {
                c: self.b.clone(),
                d: self.d.clone(),
                vc: self.plateau.clone(),
                vd: self.vd.clone(),
            }
        } else {
            Survivor {
                c: self.c.clone(),
                d: self.a.clone(),
                vc: self.vc.clone(),
                vd: self.plateau.clone(),
            }
        }
    }

    /// Level `m + 1` node on the left (`right == false`) or right survivor.
    /// `k_next` is `K(m + 1)` and must be present when `m + 1` is even.
    pub fn child(&self, right: bool, k_next: Option<&Rational>) -> StaircaseNode {
        let s = self.survivor(right);
        let p = 2 * self.p - u64::from(!right);
        Self::carve(self.sigma, self.m + 1, p, s.c, s.d, s.vc, s.vd, k_next)
    }

    /// Exact staircase value at `s`, when `s` is one of `c, a, b, d`.
    pub fn value_at_mark(&self, s: &Rational) -> Option<Rational> {
        if s == &self.c {
            Some(self.vc.clone())
        } else if s == &self.d {
            Some(self.vd.clone())
        } else if s == &self.a || s == &self.b {
            Some(self.plateau.clone())
        } else {
            None
        }
    }
}

struct Survivor {
    c: Rational,
    d: Rational,
    vc: Rational,
    vd: Rational,
}

impl Survivor {
    fn ratio(&self) -> Rational {
        (&self.vd - &self.vc) / (&self.d - &self.c)
    }
}

/// Levels `1..=depth` of `E_σ` plus a lazily extended leftmost spine.
#[derive(Debug, Clone)]
pub struct StaircaseTree {
    sigma: u32,
    kmode: KMode,
    levels: Vec<Vec<StaircaseNode>>,
    /// Leftmost node of every known level; may run deeper than `levels`.
    spine: Vec<StaircaseNode>,
    kfactors: BTreeMap<u32, Rational>,
}

impl StaircaseTree {
    /// Materialize levels `1..=depth` for the given `σ`.
    pub fn build(sigma: u32, depth: u32, kmode: KMode) -> Result<Self> {
        if sigma == 0 {
            return invalid("sigma must be positive");
        }
        if depth == 0 {
            return invalid("depth must be positive");
        }
        let root = StaircaseNode::root(sigma);
        let mut tree = StaircaseTree {
            sigma,
            kmode,
            levels: vec![vec![root.clone()]],
            spine: vec![root],
            kfactors: BTreeMap::new(),
        };
        tree.deepen(depth)?;
        Ok(tree)
    }

    pub fn sigma(&self) -> u32 {
        self.sigma
    }

    pub fn kmode(&self) -> KMode {
        self.kmode
    }

    /// Number of fully materialized levels.
    pub fn depth(&self) -> u32 {
        self.levels.len() as u32
    }

    pub fn level(&self, m: u32) -> Option<&[StaircaseNode]> {
        self.levels
            .get(m.checked_sub(1)? as usize)
            .map(Vec::as_slice)
    }

    pub fn levels(&self) -> &[Vec<StaircaseNode>] {
        &self.levels
    }

    /// All known expansion factors, keyed by even level.
    pub fn kfactors(&self) -> &BTreeMap<u32, Rational> {
        &self.kfactors
    }

    pub fn kfactor(&self, m: u32) -> Option<&Rational> {
        self.kfactors.get(&m)
    }

    /// Leftmost node of level `m`, if already known.
    pub fn spine_node(&self, m: u32) -> Option<&StaircaseNode> {
        self.spine.get(m.checked_sub(1)? as usize)
    }

    fn record_kfactor(&mut self, m: u32, max_ratio: &Rational) -> Result<Rational> {
        if let Some(k) = self.kfactors.get(&m) {
            return Ok(k.clone());
        }
        let k = self.kmode.realize(max_ratio)?;
        if let Some((prev_m, prev)) = self.kfactors.range(..m).next_back() {
            if &k <= prev {
                return Err(Error::ConstructionInconsistency(format!(
                    "expansion factor not increasing: K({prev_m}) = {prev}, K({m}) = {k} (sigma {})",
                    self.sigma
                )));
            }
        }
        self.kfactors.insert(m, k.clone());
        Ok(k)
    }

    /// Materialize full levels up to `depth`. Requires exclusive access.
    pub fn deepen(&mut self, depth: u32) -> Result<()> {
        while self.depth() < depth {
            let m = self.depth() + 1;
            let parents = &self.levels[self.levels.len() - 1];
            let survivors: Vec<Survivor> = parents
                .iter()
                .flat_map(|n| [n.survivor(false), n.survivor(true)])
                .collect();
            let k = if m.is_multiple_of(2) {
                let max_ratio = survivors
                    .iter()
                    .map(Survivor::ratio)
                    .max()
                    .expect("every level is nonempty");
                Some(self.record_kfactor(m, &max_ratio)?)
            } else {
                None
            };
            let nodes: Vec<StaircaseNode> = survivors
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    StaircaseNode::carve(
                        self.sigma,
                        m,
                        i as u64 + 1,
                        s.c,
                        s.d,
                        s.vc,
                        s.vd,
                        k.as_ref(),
                    )
                })
                .collect();
            if self.spine.len() < m as usize {
                self.spine.push(nodes[0].clone());
            }
            self.levels.push(nodes);
        }
        Ok(())
    }

    /// Extend the leftmost spine (and with it the expansion factors) to level
    /// `m` without materializing full levels. Requires exclusive access.
    pub fn extend_spine(&mut self, m: u32) -> Result<()> {
        while (self.spine.len() as u32) < m {
            let last = self.spine.last().expect("spine starts at level 1");
            let next = last.m + 1;
            let leftmost = last.survivor(false);
            let k = if next.is_multiple_of(2) {
                Some(self.record_kfactor(next, &leftmost.ratio())?)
            } else {
                None
            };
            let last = self.spine.last().expect("spine starts at level 1");
            let node = last.child(false, k.as_ref());
            self.spine.push(node);
        }
        Ok(())
    }

    /// `K(m)` for a materialized even level.
    pub fn expansion_factor(&self, m: u32) -> Result<Rational> {
        if m == 0 || m % 2 == 1 {
            return invalid(format!(
                "expansion factor is defined for even levels, got {m}"
            ));
        }
        if m > self.depth() {
            return invalid(format!("level {m} beyond built depth {}", self.depth()));
        }
        Ok(self.kfactors[&m].clone())
    }

    /// Child of `node`, extending the spine when `K(m + 1)` is not yet known.
    pub fn child_of(&mut self, node: &StaircaseNode, right: bool) -> Result<StaircaseNode> {
        let next = node.m + 1;
        if next.is_multiple_of(2) && !self.kfactors.contains_key(&next) {
            self.extend_spine(next)?;
        }
        Ok(node.child(right, self.kfactors.get(&next)))
    }

    /// Enclosure of the symmetric staircase `f_{0,σ}` at `s ∈ [0, 1]` of width
    /// at most `eps`, deepening the spine as needed.
    pub fn eval(&mut self, s: &Rational, eps: &Rational) -> Result<Enclosure> {
        self.eval_bounded(s, eps, DEFAULT_LEVEL_CUTOFF)
    }

    pub fn eval_bounded(
        &mut self,
        s: &Rational,
        eps: &Rational,
        level_cutoff: u32,
    ) -> Result<Enclosure> {
        if s.is_negative() || s > &Rational::one() {
            return invalid(format!("staircase argument {s} outside [0, 1]"));
        }
        if !eps.is_positive() {
            return invalid("eps must be positive");
        }
        let half = Rational::frac(1, 2);
        let s = if s > &half {
            Rational::one() - s
        } else {
            s.clone()
        };
        let mut node = StaircaseNode::root(self.sigma);
        loop {
            if let Some(v) = node.value_at_mark(&s) {
                return Ok(Enclosure::point(v));
            }
            if node.removes(&s) {
                return Ok(Enclosure::point(node.plateau.clone()));
            }
            if &node.gap() <= eps {
                return Enclosure::new(node.vc.clone(), node.vd.clone());
            }
            if node.m >= level_cutoff {
                return Err(Error::ResourceLimit(format!(
                    "staircase descent passed level {level_cutoff}"
                )));
            }
            let right = s > node.b;
            node = self.child_of(&node, right)?;
        }
    }

    /// Total length of the level-`(M+1)` intervals, i.e. of what survives the
    /// first `M` removal rounds inside `[0, 1/2]`.
    pub fn survivor_length(&self, levels: u32) -> Result<Rational> {
        if levels > self.depth() {
            return invalid(format!(
                "level {levels} beyond built depth {}",
                self.depth()
            ));
        }
        if levels == 0 {
            return Ok(Rational::frac(1, 2));
        }
        Ok(self.levels[levels as usize - 1]
            .iter()
            .map(|n| n.len() - n.removed_len())
            .sum())
    }

    /// Serializable snapshot of the materialized levels.
    pub fn dump(&self) -> TreeDump {
        TreeDump {
            sigma: self.sigma,
            kmode: self.kmode,
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(i, nodes)| LevelDump {
                    m: i as u32 + 1,
                    nodes: nodes
                        .iter()
                        .map(|n| NodeDump {
                            c: n.c.clone(),
                            a: n.a.clone(),
                            b: n.b.clone(),
                            d: n.d.clone(),
                            vc: n.vc.clone(),
                            plateau: n.plateau.clone(),
                            vd: n.vd.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// `build_staircase`: levels `1..=depth` of the tree for `σ` under the default
/// k-mode.
pub fn build_staircase(sigma: u32, depth: u32) -> Result<StaircaseTree> {
    StaircaseTree::build(sigma, depth, KMode::Exact)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDump {
    pub sigma: u32,
    pub kmode: KMode,
    pub levels: Vec<LevelDump>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDump {
    pub m: u32,
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDump {
    pub c: Rational,
    pub a: Rational,
    pub b: Rational,
    pub d: Rational,
    pub vc: Rational,
    pub plateau: Rational,
    pub vd: Rational,
}
