//! Piecewise-linear measure-preserving approximants.
//!
//! `g_0` is the full tent map. Each modification replaces the single linear
//! piece of `g` over the image of a staircase node `[c, d]` (both halves of a
//! frame at once) by a steeper piece up to the plateau at `a`, one inward tent
//! per step triangle over `(a, b)`, and a piece from the plateau at `b` back
//! to the value at `d`. The staircase rule makes the reciprocal slopes over
//! every value cell add up to what the replaced piece contributed, so each
//! modification stays measure preserving.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bmfunction::{Construction, Frame, Side};
use crate::discontinuum::StaircaseNode;
use crate::error::{invalid, Error, Result};
use crate::numerics::Rational;

/// Continuous piecewise-linear self-map of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPLMap")]
pub struct PLMap {
    breakpoints: Vec<Rational>,
    values: Vec<Rational>,
}

#[derive(Deserialize)]
struct RawPLMap {
    breakpoints: Vec<Rational>,
    values: Vec<Rational>,
}

impl TryFrom<RawPLMap> for PLMap {
    type Error = Error;
    fn try_from(raw: RawPLMap) -> Result<Self> {
        PLMap::new(raw.breakpoints, raw.values)
    }
}

/// One linear piece `(x0, y0) -- (x1, y1)`.
#[derive(Debug, Clone, Copy)]
pub struct Piece<'a> {
    pub x0: &'a Rational,
    pub x1: &'a Rational,
    pub y0: &'a Rational,
    pub y1: &'a Rational,
}

impl Piece<'_> {
    pub fn is_flat(&self) -> bool {
        self.y0 == self.y1
    }

    pub fn slope(&self) -> Rational {
        (self.y1 - self.y0) / (self.x1 - self.x0)
    }

    pub fn width(&self) -> Rational {
        self.x1 - self.x0
    }
}

impl PLMap {
    pub fn new(breakpoints: Vec<Rational>, values: Vec<Rational>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return invalid("need at least two breakpoints with one value each");
        }
        if !breakpoints[0].is_zero() || breakpoints[breakpoints.len() - 1] != Rational::one() {
            return invalid("breakpoints must start at 0 and end at 1");
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("breakpoints must be strictly increasing");
        }
        if values
            .iter()
            .any(|v| v.is_negative() || v > &Rational::one())
        {
            return invalid("values must lie in [0, 1]");
        }
        Ok(PLMap {
            breakpoints,
            values,
        })
    }

    /// The full tent map `1 - |1 - 2x|`.
    pub fn tent() -> Self {
        PLMap {
            breakpoints: vec![Rational::zero(), Rational::frac(1, 2), Rational::one()],
            values: vec![Rational::zero(), Rational::one(), Rational::zero()],
        }
    }

    pub fn breakpoints(&self) -> &[Rational] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    pub fn pieces(&self) -> impl Iterator<Item = Piece<'_>> + '_ {
        (0..self.breakpoints.len() - 1).map(move |i| Piece {
            x0: &self.breakpoints[i],
            x1: &self.breakpoints[i + 1],
            y0: &self.values[i],
            y1: &self.values[i + 1],
        })
    }

    /// Exact value at `x ∈ [0, 1]`.
    pub fn eval(&self, x: &Rational) -> Result<Rational> {
        if x.is_negative() || x > &Rational::one() {
            return invalid(format!("point {x} outside [0, 1]"));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &Rational) -> Rational {
        match self.breakpoints.binary_search(x) {
            Ok(i) => self.values[i].clone(),
            Err(i) => {
                let (x0, x1) = (&self.breakpoints[i - 1], &self.breakpoints[i]);
                let (y0, y1) = (&self.values[i - 1], &self.values[i]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Replace the linear piece over `node` (in both halves of `frame`) by the
    /// next-generation structure. Fails if `g` is not the matching linear
    /// piece there, i.e. when modifications are applied out of order.
    pub fn modify(
        &self,
        ctx: &Construction,
        frame: &Arc<Frame>,
        node: &StaircaseNode,
    ) -> Result<PLMap> {
        if node.sigma != frame.sigma {
            return invalid(format!(
                "node of sigma {} cannot modify a frame of sigma {}",
                node.sigma, frame.sigma
            ));
        }
        let mut marks = vec![
            (node.c.clone(), node.vc.clone()),
            (node.a.clone(), node.plateau.clone()),
        ];
        let tents = ctx.child_frames(frame, node, Side::Left)?;
        if tents.len() == 1 {
            marks.push((node.a.midpoint(&node.b), node.vc.clone()));
        } else {
            let split = frame.fold(&tents[0].v).0;
            marks.push((node.a.midpoint(&split), node.vc.clone()));
            marks.push((split.clone(), node.plateau.clone()));
            marks.push((split.midpoint(&node.b), node.vc.clone()));
        }
        marks.push((node.b.clone(), node.plateau.clone()));
        marks.push((node.d.clone(), node.vd.clone()));

        let mut out = self.clone();
        for side in [Side::Left, Side::Right] {
            let mut pts: Vec<(Rational, Rational)> = marks
                .iter()
                .map(|(s, level)| (frame.unfold(s, side), frame.value_at(level)))
                .collect();
            pts.sort_by(|p, q| p.0.cmp(&q.0));
            out.replace_linear_span(pts)?;
        }
        Ok(out)
    }

    /// Substitute the points strictly inside `[first.x, last.x]`, which must
    /// lie on one linear piece whose end values match `first` and `last`.
    fn replace_linear_span(&mut self, pts: Vec<(Rational, Rational)>) -> Result<()> {
        let (lo, hi) = (&pts[0].0, &pts[pts.len() - 1].0);
        let start = self.breakpoints.partition_point(|b| b < lo);
        let end = self.breakpoints.partition_point(|b| b <= hi);
        let interior = self.breakpoints[start..end]
            .iter()
            .filter(|b| *b != lo && *b != hi)
            .count();
        if interior > 0 {
            return invalid(format!("map is not linear over [{lo}, {hi}]"));
        }
        if self.eval_unchecked(lo) != pts[0].1 || self.eval_unchecked(hi) != pts[pts.len() - 1].1 {
            return invalid(format!(
                "map does not match the frame values over [{lo}, {hi}]"
            ));
        }
        let (xs, ys): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
        self.breakpoints.splice(start..end, xs);
        self.values.splice(start..end, ys);
        Ok(())
    }

    /// Reciprocal-slope sums over every value cell.
    pub fn verify_measure(&self) -> MeasureReport {
        let mut cuts: Vec<Rational> = self.values.clone();
        cuts.push(Rational::zero());
        cuts.push(Rational::one());
        cuts.sort();
        cuts.dedup();
        let mut diff = vec![Rational::zero(); cuts.len()];
        let mut flat = None;
        for piece in self.pieces() {
            if piece.is_flat() {
                flat.get_or_insert_with(|| (piece.x0.clone(), piece.x1.clone()));
                continue;
            }
            let (lo, hi) = if piece.y0 < piece.y1 {
                (piece.y0, piece.y1)
            } else {
                (piece.y1, piece.y0)
            };
            let weight = piece.width() / (hi - lo);
            let i = cuts.binary_search(lo).expect("values are cuts");
            let j = cuts.binary_search(hi).expect("values are cuts");
            diff[i] = &diff[i] + &weight;
            diff[j] = &diff[j] - &weight;
        }
        let mut running = Rational::zero();
        let cells: Vec<MeasureCell> = cuts
            .windows(2)
            .zip(&diff)
            .map(|(w, delta)| {
                running = &running + delta;
                MeasureCell {
                    lo: w[0].clone(),
                    hi: w[1].clone(),
                    sum: running.clone(),
                }
            })
            .collect();
        let min = self.values.iter().min().expect("nonempty");
        let max = self.values.iter().max().expect("nonempty");
        let onto = min.is_zero() && *max == Rational::one();
        let sums_ok = cells.iter().all(|c| c.sum == Rational::one());
        let diagnostic = if let Some((x0, x1)) = &flat {
            Some(format!("flat piece on [{x0}, {x1}]"))
        } else if !onto {
            Some(format!("image is [{min}, {max}], not [0, 1]"))
        } else {
            cells.iter().find(|c| c.sum != Rational::one()).map(|c| {
                format!(
                    "cell ({}, {}) has reciprocal-slope sum {}",
                    c.lo, c.hi, c.sum
                )
            })
        };
        MeasureReport {
            cells,
            preserving: flat.is_none() && onto && sums_ok,
            diagnostic,
        }
    }

    /// Exact `λ(g^{-1}([u, v]))`.
    pub fn preimage_measure(&self, u: &Rational, v: &Rational) -> Result<Rational> {
        if u.is_negative() || v > &Rational::one() || u >= v {
            return invalid(format!("need 0 <= u < v <= 1, got [{u}, {v}]"));
        }
        let mut total = Rational::zero();
        for piece in self.pieces() {
            if piece.is_flat() {
                if u <= piece.y0 && piece.y0 <= v {
                    total = total + piece.width();
                }
                continue;
            }
            let (lo, hi) = if piece.y0 < piece.y1 {
                (piece.y0, piece.y1)
            } else {
                (piece.y1, piece.y0)
            };
            let top = hi.clone().min(v.clone());
            let bottom = lo.clone().max(u.clone());
            if top > bottom {
                total = total + (top - bottom) * piece.width() / (hi - lo);
            }
        }
        Ok(total)
    }

    /// `sup |g - h|`, attained at a breakpoint of one of the maps.
    pub fn sup_distance(&self, other: &PLMap) -> Rational {
        let mut xs: Vec<&Rational> = self.breakpoints.iter().chain(&other.breakpoints).collect();
        xs.sort();
        xs.dedup();
        xs.into_iter()
            .map(|x| (self.eval_unchecked(x) - other.eval_unchecked(x)).abs())
            .max()
            .expect("nonempty")
    }

    /// Standalone SVG of the graph in the unit square, y axis pointing up.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .breakpoints
            .iter()
            .zip(&self.values)
            .map(|(x, y)| (x.to_f64(), y.to_f64()))
            .collect();
        svg_polyline(&[pts])
    }
}

/// SVG document with one polyline per curve, viewBox `0 0 1 1`.
pub fn svg_polyline(curves: &[Vec<(f64, f64)>]) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 1 1\" width=\"800\" height=\"800\">\n\
         <rect x=\"0\" y=\"0\" width=\"1\" height=\"1\" fill=\"white\"/>\n",
    );
    for pts in curves {
        out.push_str("<polyline fill=\"none\" stroke=\"black\" stroke-width=\"0.001\" points=\"");
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.9},{:.9}", x, 1.0 - y);
        }
        out.push_str("\"/>\n");
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureCell {
    pub lo: Rational,
    pub hi: Rational,
    /// Sum of `1/|slope|` over the pieces covering `(lo, hi)`.
    pub sum: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub cells: Vec<MeasureCell>,
    pub preserving: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// One scheduled modification: a staircase node placed in a frame.
#[derive(Debug, Clone)]
pub struct Target {
    pub frame: Arc<Frame>,
    pub node: StaircaseNode,
}

impl Target {
    /// Height of the triangles this modification installs.
    pub fn height(&self) -> Rational {
        &self.frame.h * (&self.node.plateau - &self.node.vc)
    }
}

/// Frames of generation `gen` reachable through segments of level at most
/// `cutoff` at every generation, in base order.
pub fn frames_of_generation(ctx: &Construction, gen: u32, cutoff: u32) -> Result<Vec<Arc<Frame>>> {
    let mut frames = vec![Frame::root()];
    for _ in 0..gen {
        let mut next = Vec::new();
        for frame in &frames {
            for node in ctx.nodes_through(frame.sigma, cutoff)? {
                for side in [Side::Left, Side::Right] {
                    next.extend(ctx.child_frames(frame, &node, side)?);
                }
            }
        }
        next.sort_by(|p, q| p.u.cmp(&q.u));
        frames = next;
    }
    Ok(frames)
}

/// Modifications turning `g_{n-1}` into `g_n` for a finite cutoff: every
/// generation-`(n-1)` frame, then nodes in lexicographic `(m, p)` order.
pub fn schedule(ctx: &Construction, n: u32, cutoff: u32) -> Result<Vec<Target>> {
    if n == 0 || cutoff == 0 {
        return invalid("generation and cutoff must be positive");
    }
    let mut targets = Vec::new();
    for frame in frames_of_generation(ctx, n - 1, cutoff)? {
        for node in ctx.nodes_through(frame.sigma, cutoff)? {
            targets.push(Target {
                frame: Arc::clone(&frame),
                node,
            });
        }
    }
    Ok(targets)
}

/// A finite-schedule approximant `g_n^{(J)}`.
#[derive(Debug, Clone)]
pub struct Approximant {
    pub generation: u32,
    pub cutoff: u32,
    /// Number of modifications applied across all generations.
    pub steps: usize,
    pub map: PLMap,
}

/// `g_n` built from the tent map with every segment level bounded by `cutoff`.
pub fn build_g(ctx: &Construction, n: u32, cutoff: u32) -> Result<Approximant> {
    if n == 0 || cutoff == 0 {
        return invalid("generation and cutoff must be positive");
    }
    let mut map = PLMap::tent();
    let mut steps = 0;
    for gen in 1..=n {
        for target in schedule(ctx, gen, cutoff)? {
            map = map.modify(ctx, &target.frame, &target.node)?;
            steps += 1;
        }
    }
    Ok(Approximant {
        generation: n,
        cutoff,
        steps,
        map,
    })
}
