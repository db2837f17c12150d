//! The limit function `f` as a hierarchy of rescaled step triangles.
//!
//! A [`Frame`] places one step triangle: over the base `[u, v]` the graph is
//! `y0 + orient * h * S(fold(t))`, where `t` is the normalized base coordinate,
//! `fold(t) = min(t, 1 - t)` and `S` is the staircase of the frame's `σ`. Every
//! removed interval of that staircase (and its mirror image) is a flat segment
//! of the current approximant; the next generation replaces it by one inward
//! triangle (odd level) or two (even level), of height `h * (plateau - vc)`,
//! opposite orientation and `σ' = σ + m`.
//!
//! Frames are produced on demand while descending towards a point; the frame
//! tree is never stored.

use std::cmp::Reverse;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::discontinuum::{KMode, StaircaseNode, StaircaseTree, DEFAULT_LEVEL_CUTOFF};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Enclosure, Rational};

/// Which half of a frame's base a point or segment lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Up,
    Down,
}

impl Orientation {
    pub fn flip(self) -> Self {
        match self {
            Orientation::Up => Orientation::Down,
            Orientation::Down => Orientation::Up,
        }
    }

    pub fn sign(self) -> i64 {
        match self {
            Orientation::Up => 1,
            Orientation::Down => -1,
        }
    }
}

/// Affine placement of one rescaled step triangle.
#[derive(Debug, Clone)]
pub struct Frame {
    pub gen: u32,
    pub u: Rational,
    pub v: Rational,
    /// Value of the flat segment carrying the triangle (0 for the root).
    pub y0: Rational,
    pub h: Rational,
    pub orient: Orientation,
    pub sigma: u32,
    pub parent: Option<Arc<Frame>>,
}

impl Frame {
    /// The basic step triangle over `[0, 1]` of height 1 and `σ = 1`.
    pub fn root() -> Arc<Frame> {
        Arc::new(Frame {
            gen: 0,
            u: Rational::zero(),
            v: Rational::one(),
            y0: Rational::zero(),
            h: Rational::one(),
            orient: Orientation::Up,
            sigma: 1,
            parent: None,
        })
    }

    pub fn len(&self) -> Rational {
        &self.v - &self.u
    }

    pub fn contains(&self, x: &Rational) -> bool {
        &self.u <= x && x <= &self.v
    }

    pub fn apex(&self) -> Rational {
        self.u.midpoint(&self.v)
    }

    /// Folded staircase coordinate `s ∈ [0, 1/2]` of `x` and its half.
    pub fn fold(&self, x: &Rational) -> (Rational, Side) {
        let t = (x - &self.u) / self.len();
        if t <= Rational::frac(1, 2) {
            (t, Side::Left)
        } else {
            (Rational::one() - t, Side::Right)
        }
    }

    /// Inverse of [`Frame::fold`].
    pub fn unfold(&self, s: &Rational, side: Side) -> Rational {
        let t = match side {
            Side::Left => s.clone(),
            Side::Right => Rational::one() - s,
        };
        &self.u + self.len() * t
    }

    /// Graph value for staircase level `level ∈ [0, 1]`.
    pub fn value_at(&self, level: &Rational) -> Rational {
        &self.y0 + Rational::from_integer(self.orient.sign()) * &self.h * level
    }

    /// Values taken by `f` over the base.
    pub fn range(&self) -> Enclosure {
        Enclosure::spanning(
            self.value_at(&Rational::zero()),
            self.value_at(&Rational::one()),
        )
    }

    /// Slope of the triangle's sides, `h / (ℓ / 2)`.
    pub fn slope(&self) -> Rational {
        &self.h * Rational::from_integer(2) / self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UndecidedReason {
    /// The next generation would exceed the requested maximum.
    MaxGen,
    /// The staircase descent inside the last frame hit the level cutoff.
    LevelCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    /// In no 0th L-segment.
    CaseI,
    /// In an `(n-1)`st L-segment but in no `n`th one.
    CaseII(u32),
    Undecided(UndecidedReason),
}

impl Classification {
    /// Generation `n` with `f(x) = f_n(x)` when the point is classified.
    pub fn order(&self) -> Option<u32> {
        match self {
            Classification::CaseI => Some(0),
            Classification::CaseII(n) => Some(*n),
            Classification::Undecided(_) => None,
        }
    }
}

/// Nested frames visited while locating a point.
#[derive(Debug, Clone)]
pub struct Chain {
    pub frames: Vec<Arc<Frame>>,
    pub classification: Classification,
    /// `x` is an endpoint of a flat segment.
    pub boundary: bool,
}

/// Shared construction state: expansion factors for every `σ` reached so
/// far, grown under a write lock; evaluation itself is pure.
#[derive(Debug)]
pub struct Construction {
    kmode: KMode,
    level_cutoff: u32,
    trees: RwLock<BTreeMap<u32, StaircaseTree>>,
}

impl Default for Construction {
    fn default() -> Self {
        Construction::new(KMode::Exact)
    }
}

impl Construction {
    pub fn new(kmode: KMode) -> Self {
        Construction {
            kmode,
            level_cutoff: DEFAULT_LEVEL_CUTOFF,
            trees: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_level_cutoff(mut self, cutoff: u32) -> Self {
        self.level_cutoff = cutoff.max(1);
        self
    }

    pub fn kmode(&self) -> KMode {
        self.kmode
    }

    pub fn level_cutoff(&self) -> u32 {
        self.level_cutoff
    }

    fn with_tree<R>(
        &self,
        sigma: u32,
        f: impl FnOnce(&mut StaircaseTree) -> Result<R>,
    ) -> Result<R> {
        let mut trees = self.trees.write().expect("tree registry poisoned");
        let tree = match trees.entry(sigma) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(StaircaseTree::build(sigma, 1, self.kmode)?),
        };
        f(tree)
    }

    /// `K(m)` of the staircase for `σ`, extending the spine if needed.
    pub fn kfactor(&self, sigma: u32, m: u32) -> Result<Rational> {
        if m == 0 || m % 2 == 1 {
            return invalid(format!(
                "expansion factor is defined for even levels, got {m}"
            ));
        }
        {
            let trees = self.trees.read().expect("tree registry poisoned");
            if let Some(k) = trees.get(&sigma).and_then(|t| t.kfactor(m)) {
                return Ok(k.clone());
            }
        }
        self.with_tree(sigma, |t| {
            t.extend_spine(m)?;
            Ok(t.kfactor(m).expect("spine reaches m").clone())
        })
    }

    pub fn root_node(&self, sigma: u32) -> StaircaseNode {
        StaircaseNode::root(sigma)
    }

    pub fn child_node(&self, node: &StaircaseNode, right: bool) -> Result<StaircaseNode> {
        let next = node.m + 1;
        let k = if next.is_multiple_of(2) {
            Some(self.kfactor(node.sigma, next)?)
        } else {
            None
        };
        Ok(node.child(right, k.as_ref()))
    }

    /// All nodes of level `m` for `σ`, materializing levels as needed.
    pub fn level_nodes(&self, sigma: u32, m: u32) -> Result<Vec<StaircaseNode>> {
        if m == 0 {
            return invalid("levels start at 1");
        }
        {
            let trees = self.trees.read().expect("tree registry poisoned");
            if let Some(level) = trees.get(&sigma).and_then(|t| t.level(m)) {
                return Ok(level.to_vec());
            }
        }
        self.with_tree(sigma, |t| {
            t.deepen(m)?;
            Ok(t.level(m).expect("deepened").to_vec())
        })
    }

    /// Nodes of levels `1..=depth` in lexicographic `(m, p)` order.
    pub fn nodes_through(&self, sigma: u32, depth: u32) -> Result<Vec<StaircaseNode>> {
        let mut out = Vec::new();
        for m in 1..=depth {
            out.extend(self.level_nodes(sigma, m)?);
        }
        Ok(out)
    }

    /// Copy of the tree for `σ` with at least `depth` full levels.
    pub fn tree(&self, sigma: u32, depth: u32) -> Result<StaircaseTree> {
        self.with_tree(sigma, |t| {
            t.deepen(depth)?;
            Ok(t.clone())
        })
    }

    /// Step triangles placed on the flat segment of `node` in the given half
    /// of `parent`, in increasing base order.
    pub fn child_frames(
        &self,
        parent: &Arc<Frame>,
        node: &StaircaseNode,
        side: Side,
    ) -> Result<Vec<Arc<Frame>>> {
        let half = Rational::frac(1, 2);
        if node.sigma != parent.sigma
            || node.c.is_negative()
            || node.d > half
            || !(node.c < node.a && node.a < node.b && node.b < node.d)
        {
            return invalid(format!(
                "node ({}, {}) of sigma {} does not belong to a frame of sigma {}",
                node.m, node.p, node.sigma, parent.sigma
            ));
        }
        let mut bases = Vec::with_capacity(2);
        if node.m % 2 == 1 {
            bases.push((node.a.clone(), node.b.clone()));
        } else {
            let k = self.kfactor(parent.sigma, node.m)?;
            let split = &node.b - node.removed_len() / (k - Rational::from_integer(2));
            bases.push((node.a.clone(), split.clone()));
            bases.push((split, node.b.clone()));
        }
        let y0 = parent.value_at(&node.plateau);
        let h = &parent.h * (&node.plateau - &node.vc);
        let mut frames: Vec<Arc<Frame>> = bases
            .into_iter()
            .map(|(s0, s1)| {
                let (x0, x1) = (parent.unfold(&s0, side), parent.unfold(&s1, side));
                let (u, v) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
                Arc::new(Frame {
                    gen: parent.gen + 1,
                    u,
                    v,
                    y0: y0.clone(),
                    h: h.clone(),
                    orient: parent.orient.flip(),
                    sigma: parent.sigma + node.m,
                    parent: Some(Arc::clone(parent)),
                })
            })
            .collect();
        frames.sort_by(|p, q| p.u.cmp(&q.u));
        Ok(frames)
    }

    /// Classify `x` by the deepest L-segment containing it.
    pub fn locate(&self, x: &Rational, max_gen: u32) -> Result<Chain> {
        check_unit(x)?;
        let mut frames = vec![Frame::root()];
        loop {
            let frame = Arc::clone(frames.last().expect("root present"));
            let (s, side) = frame.fold(x);
            let mut node = self.root_node(frame.sigma);
            let next_frame = loop {
                if s == node.c || s == node.d {
                    let boundary = s.is_zero() && frame.gen > 0;
                    return Ok(resolved(frames, boundary));
                }
                if s == node.a || s == node.b {
                    return Ok(resolved(frames, true));
                }
                if node.removes(&s) {
                    if frame.gen + 1 > max_gen {
                        return Ok(Chain {
                            frames,
                            classification: Classification::Undecided(UndecidedReason::MaxGen),
                            boundary: false,
                        });
                    }
                    let children = self.child_frames(&frame, &node, side)?;
                    break children
                        .into_iter()
                        .find(|c| c.contains(x))
                        .expect("children cover the removed interval");
                }
                if node.m >= self.level_cutoff {
                    return Ok(Chain {
                        frames,
                        classification: Classification::Undecided(UndecidedReason::LevelCutoff),
                        boundary: false,
                    });
                }
                node = self.child_node(&node, s > node.b)?;
            };
            frames.push(next_frame);
        }
    }

    /// Enclosure of `f(x)` of width at most `eps`.
    pub fn f_eval(&self, x: &Rational, eps: &Rational) -> Result<Enclosure> {
        self.evaluate(x, eps, None, None)
    }

    /// Like [`Construction::f_eval`], also returning every frame entered.
    pub fn f_eval_traced(
        &self,
        x: &Rational,
        eps: &Rational,
    ) -> Result<(Enclosure, Vec<Arc<Frame>>)> {
        let mut trace = Vec::new();
        let e = self.evaluate(x, eps, None, Some(&mut trace))?;
        Ok((e, trace))
    }

    /// Enclosure of the approximant `f_n(x)`: flat on generation-`n` segments.
    pub fn fn_eval(&self, x: &Rational, n: u32, eps: &Rational) -> Result<Enclosure> {
        self.evaluate(x, eps, Some(n), None)
    }

    fn evaluate(
        &self,
        x: &Rational,
        eps: &Rational,
        stop_gen: Option<u32>,
        mut trace: Option<&mut Vec<Arc<Frame>>>,
    ) -> Result<Enclosure> {
        check_unit(x)?;
        if !eps.is_positive() {
            return invalid("eps must be positive");
        }
        let mut frame = Frame::root();
        if let Some(t) = trace.as_deref_mut() {
            t.push(Arc::clone(&frame));
        }
        loop {
            let (s, side) = frame.fold(x);
            let mut node = self.root_node(frame.sigma);
            let child = loop {
                if let Some(level) = node.value_at_mark(&s) {
                    return Ok(Enclosure::point(frame.value_at(&level)));
                }
                if node.removes(&s) {
                    if stop_gen == Some(frame.gen) {
                        return Ok(Enclosure::point(frame.value_at(&node.plateau)));
                    }
                    let children = self.child_frames(&frame, &node, side)?;
                    if children.iter().any(|c| &c.u == x || &c.v == x) {
                        // shared endpoint of two bases sits on the flat segment
                        return Ok(Enclosure::point(frame.value_at(&node.plateau)));
                    }
                    break children
                        .into_iter()
                        .find(|c| c.contains(x))
                        .expect("children cover the removed interval");
                }
                if &frame.h * node.gap() <= *eps {
                    return Ok(Enclosure::spanning(
                        frame.value_at(&node.vc),
                        frame.value_at(&node.vd),
                    ));
                }
                if node.m >= self.level_cutoff {
                    return Err(Error::ResourceLimit(format!(
                        "staircase descent passed level {} in generation {}",
                        self.level_cutoff, frame.gen
                    )));
                }
                node = self.child_node(&node, s > node.b)?;
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(Arc::clone(&child));
            }
            frame = child;
        }
    }

    /// Largest height among generation-`n` triangles reachable through
    /// segments of level at most `breadth` at every generation.
    pub fn max_height(&self, n: u32, breadth: u32) -> Result<Rational> {
        if n == 0 {
            return invalid("generation must be at least 1");
        }
        if breadth == 0 {
            return invalid("breadth must be positive");
        }
        // Heights only depend on (h, σ); child heights never exceed the
        // parent's, so the first generation-n entry popped is the maximum.
        let mut heap = BinaryHeap::new();
        heap.push((Rational::one(), 0u32, Reverse(1u32)));
        while let Some((h, gen, Reverse(sigma))) = heap.pop() {
            if gen == n {
                return Ok(h);
            }
            for node in self.nodes_through(sigma, breadth)? {
                let child_h = &h * (&node.plateau - &node.vc);
                heap.push((child_h, gen + 1, Reverse(sigma + node.m)));
            }
        }
        unreachable!("the heap always holds the root's descendants")
    }
}

fn resolved(frames: Vec<Arc<Frame>>, boundary: bool) -> Chain {
    let gen = frames.last().expect("root present").gen;
    let classification = if gen == 0 {
        Classification::CaseI
    } else {
        Classification::CaseII(gen)
    };
    Chain {
        frames,
        classification,
        boundary,
    }
}

fn check_unit(x: &Rational) -> Result<()> {
    if x.is_negative() || x > &Rational::one() {
        return invalid(format!("point {x} outside [0, 1]"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::frac(n, d)
    }

    fn ctx() -> Construction {
        Construction::default()
    }

    #[test]
    fn child_frames_of_first_segment() {
        let c = ctx();
        let root = Frame::root();
        let node = c.root_node(1);
        let kids = c.child_frames(&root, &node, Side::Left).unwrap();
        assert_eq!(kids.len(), 1);
        let k = &kids[0];
        assert_eq!((k.u.clone(), k.v.clone()), (r(1, 8), r(1, 4)));
        assert_eq!(k.y0, r(1, 2));
        assert_eq!(k.h, r(1, 2));
        assert_eq!(k.orient, Orientation::Down);
        assert_eq!(k.sigma, 2);
        assert_eq!(k.gen, 1);

        let mirrored = c.child_frames(&root, &node, Side::Right).unwrap();
        assert_eq!(
            (mirrored[0].u.clone(), mirrored[0].v.clone()),
            (r(3, 4), r(7, 8))
        );
    }

    #[test]
    fn child_frames_split_even_segment() {
        let c = ctx();
        let root = Frame::root();
        let node = c.level_nodes(1, 2).unwrap()[0].clone();
        let kids = c.child_frames(&root, &node, Side::Left).unwrap();
        assert_eq!(kids.len(), 2);
        assert_eq!((kids[0].u.clone(), kids[0].v.clone()), (r(1, 72), r(7, 72)));
        assert_eq!((kids[1].u.clone(), kids[1].v.clone()), (r(7, 72), r(1, 9)));
        for k in &kids {
            assert_eq!(k.y0, r(4, 9));
            assert_eq!(k.h, r(4, 9));
            assert_eq!(k.orient, Orientation::Down);
            assert_eq!(k.sigma, 3);
        }
        let right = c.child_frames(&root, &node, Side::Right).unwrap();
        assert_eq!(
            (right[0].u.clone(), right[0].v.clone()),
            (r(8, 9), r(65, 72))
        );
        assert_eq!(
            (right[1].u.clone(), right[1].v.clone()),
            (r(65, 72), r(71, 72))
        );
    }

    #[test]
    fn child_frames_reject_foreign_node() {
        let c = ctx();
        let root = Frame::root();
        let node = c.root_node(2);
        assert!(matches!(
            c.child_frames(&root, &node, Side::Left),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn locate_examples() {
        let c = ctx();
        let chain = c.locate(&r(0, 1), 6).unwrap();
        assert_eq!(chain.classification, Classification::CaseI);
        assert_eq!(chain.frames.len(), 1);

        let chain = c.locate(&r(3, 16), 2).unwrap();
        assert_eq!(chain.classification, Classification::CaseII(1));
        assert_eq!(chain.frames.len(), 2);
        assert_eq!(chain.frames[1].u, r(1, 8));
        assert!(!chain.boundary);

        let chain = c.locate(&r(1, 8), 6).unwrap();
        assert_eq!(chain.classification, Classification::CaseI);
        assert!(chain.boundary);

        let chain = c.locate(&r(3, 16), 0).unwrap();
        assert_eq!(
            chain.classification,
            Classification::Undecided(UndecidedReason::MaxGen)
        );
        assert!(c.locate(&r(5, 4), 3).is_err());
    }

    #[test]
    fn split_point_is_case_two_boundary() {
        let c = ctx();
        let chain = c.locate(&r(7, 72), 4).unwrap();
        assert_eq!(chain.classification, Classification::CaseII(1));
        assert!(chain.boundary);
        assert_eq!(
            c.f_eval(&r(7, 72), &r(1, 2)).unwrap(),
            Enclosure::point(r(4, 9))
        );
    }

    #[test]
    fn f_eval_examples() {
        let c = ctx();
        for eps in [r(1, 1), r(1, 1 << 20)] {
            assert_eq!(c.f_eval(&r(1, 8), &eps).unwrap(), Enclosure::point(r(1, 2)));
            assert_eq!(
                c.f_eval(&r(3, 16), &eps).unwrap(),
                Enclosure::point(r(0, 1))
            );
            assert_eq!(c.f_eval(&r(0, 1), &eps).unwrap(), Enclosure::point(r(0, 1)));
            assert_eq!(c.f_eval(&r(1, 1), &eps).unwrap(), Enclosure::point(r(0, 1)));
            assert_eq!(c.f_eval(&r(1, 2), &eps).unwrap(), Enclosure::point(r(1, 1)));
            assert_eq!(
                c.f_eval(&r(13, 16), &eps).unwrap(),
                Enclosure::point(r(0, 1))
            );
        }
        assert!(c.f_eval(&r(1, 3), &r(0, 1)).is_err());
    }

    #[test]
    fn fn_eval_examples() {
        let c = ctx();
        let eps = r(1, 1024);
        assert_eq!(
            c.fn_eval(&r(3, 16), 0, &eps).unwrap(),
            Enclosure::point(r(1, 2))
        );
        assert_eq!(
            c.fn_eval(&r(3, 16), 1, &eps).unwrap(),
            Enclosure::point(r(0, 1))
        );
        assert_eq!(
            c.fn_eval(&r(0, 1), 5, &r(1, 1024)).unwrap(),
            Enclosure::point(r(0, 1))
        );
    }

    #[test]
    fn f_eval_widths_within_eps() {
        let c = ctx();
        let eps = r(1, 1 << 16);
        for k in 1..120 {
            let x = r(k, 121);
            let e = c.f_eval(&x, &eps).unwrap();
            assert!(e.width() <= eps, "{x}: {e}");
            assert!(e.lo() >= &r(0, 1) && e.hi() <= &r(1, 1));
        }
    }

    #[test]
    fn max_height_examples() {
        let c = ctx();
        assert_eq!(c.max_height(1, 1).unwrap(), r(1, 2));
        assert_eq!(c.max_height(1, 4).unwrap(), r(1, 2));
        let h2 = c.max_height(2, 4).unwrap();
        assert!(h2 <= r(1, 4));
        assert!(c.max_height(0, 4).is_err());
    }
}
