//! Certified difference quotients and finite-scale Dini-derivative scans.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde::Serialize;

use crate::bmfunction::{Classification, Construction, Frame, Side};
use crate::discontinuum::StaircaseNode;
use crate::error::{invalid, Error, Result};
use crate::numerics::{Enclosure, Rational};
use crate::plmap::PLMap;

/// A map that can be evaluated with certified enclosures.
pub trait Probe {
    /// Enclosure of the value at `x` of width at most `eps`.
    fn value(&self, x: &Rational, eps: &Rational) -> Result<Enclosure>;

    /// Points of `[lo, hi]` where the map has structure worth probing, with
    /// their values, explored outward from `x` down to pieces of length
    /// `resolution`.
    fn structured_points(
        &self,
        x: &Rational,
        lo: &Rational,
        hi: &Rational,
        resolution: &Rational,
        opts: &ScanOptions,
    ) -> Result<Vec<(Rational, Enclosure)>>;
}

impl Probe for PLMap {
    fn value(&self, x: &Rational, _eps: &Rational) -> Result<Enclosure> {
        self.eval(x).map(Enclosure::point)
    }

    fn structured_points(
        &self,
        _x: &Rational,
        lo: &Rational,
        hi: &Rational,
        _resolution: &Rational,
        _opts: &ScanOptions,
    ) -> Result<Vec<(Rational, Enclosure)>> {
        Ok(self
            .breakpoints()
            .iter()
            .zip(self.values())
            .filter(|(b, _)| lo <= *b && *b <= hi)
            .map(|(b, v)| (b.clone(), Enclosure::point(v.clone())))
            .collect())
    }
}

impl Probe for Construction {
    fn value(&self, x: &Rational, eps: &Rational) -> Result<Enclosure> {
        self.f_eval(x, eps)
    }

    fn structured_points(
        &self,
        x: &Rational,
        lo: &Rational,
        hi: &Rational,
        resolution: &Rational,
        opts: &ScanOptions,
    ) -> Result<Vec<(Rational, Enclosure)>> {
        StructureSearch {
            ctx: self,
            x,
            lo,
            hi,
            resolution,
            opts,
            regions: Vec::new(),
            heap: BinaryHeap::new(),
            points: BTreeMap::new(),
        }
        .run()
    }
}

/// Tuning for scans and reports.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Grid points per scale.
    pub samples: usize,
    /// Width bound for each quotient enclosure.
    pub eps: Rational,
    /// Staircase nodes visited by the structure search.
    pub budget: usize,
    pub level_limit: u32,
    pub gen_limit: u32,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            samples: 8,
            eps: Rational::pow2(-7),
            budget: 1000,
            level_limit: 16,
            gen_limit: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuotientRecord {
    pub x: Rational,
    pub y: Rational,
    /// Encloses `(f(x) - f(y)) / (x - y)`.
    pub value: Enclosure,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_m: Option<Rational>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

impl QuotientRecord {
    /// `ε_m 2^{m+1}` for designed witnesses with a known `ε_m`.
    pub fn witness_bound(&self) -> Option<Rational> {
        let eps = self.epsilon_m.as_ref()?;
        Some(eps * Rational::pow2(i64::from(self.level?) + 1))
    }
}

fn check_unit(x: &Rational) -> Result<()> {
    if x.is_negative() || x > &Rational::one() {
        return invalid(format!("point {x} outside [0, 1]"));
    }
    Ok(())
}

/// Certified `R(f, x, y)` with enclosure width at most `eps`.
pub fn quotient<P: Probe + ?Sized>(
    probe: &P,
    x: &Rational,
    y: &Rational,
    eps: &Rational,
) -> Result<QuotientRecord> {
    check_unit(x)?;
    check_unit(y)?;
    if x == y {
        return invalid("quotient needs distinct points");
    }
    if !eps.is_positive() {
        return invalid("eps must be positive");
    }
    let inner = eps * (x - y).abs() / Rational::from_integer(2);
    let fx = probe.value(x, &inner)?;
    let fy = probe.value(y, &inner)?;
    Ok(QuotientRecord {
        x: x.clone(),
        y: y.clone(),
        value: quotient_of(&fx, &fy, x, y),
        epsilon_m: None,
        level: None,
    })
}

fn quotient_of(fx: &Enclosure, fy: &Enclosure, x: &Rational, y: &Rational) -> Enclosure {
    let k = (x - y).recip().expect("distinct points");
    fx.sub(fy).scale(&k)
}

/// Leftmost level-`m` node of the subtree below `node` whose removed
/// interval starts right of `s`.
fn leftmost_after(
    ctx: &Construction,
    node: StaircaseNode,
    s: &Rational,
    m: u32,
) -> Result<Option<StaircaseNode>> {
    if &node.d <= s {
        return Ok(None);
    }
    if node.m == m {
        return Ok((&node.a > s).then_some(node));
    }
    let left = ctx.child_node(&node, false)?;
    if let Some(found) = leftmost_after(ctx, left, s, m)? {
        return Ok(Some(found));
    }
    let right = ctx.child_node(&node, true)?;
    leftmost_after(ctx, right, s, m)
}

/// Quotients `R(f, x, a_{m,p})` for the leftmost level-`m` removed interval
/// right of `x` (mirrored on the right half), one per odd `m`.
pub fn witness_sequence(
    ctx: &Construction,
    x: &Rational,
    levels: &[u32],
    eps: &Rational,
) -> Result<Vec<QuotientRecord>> {
    let chain = ctx.locate(x, 1)?;
    if chain.classification != Classification::CaseI {
        return invalid(format!(
            "witnesses need a point in the root discontinuum, {x} is {:?}",
            chain.classification
        ));
    }
    let root = Frame::root();
    let (s, side) = root.fold(x);
    if s == Rational::frac(1, 2) {
        return invalid("no removed interval lies beyond the apex");
    }
    let exact_eps = Rational::pow2(-64).min(eps.clone());
    let fx = ctx.f_eval(x, &exact_eps)?;
    let mut out = Vec::with_capacity(levels.len());
    for &m in levels {
        if m % 2 == 0 || m > ctx.level_cutoff() {
            return invalid(format!(
                "level {m} must be odd and at most {}",
                ctx.level_cutoff()
            ));
        }
        let node = leftmost_after(ctx, ctx.root_node(1), &s, m)?
            .ok_or_else(|| Error::InvalidArgument(format!("no level-{m} interval beyond {x}")))?;
        let y = root.unfold(&node.a, side);
        let mut rec = quotient(ctx, x, &y, eps)?;
        if node.c <= s && fx.is_point() {
            let fa = root.value_at(&node.plateau);
            let fc = root.value_at(&node.vc);
            rec.epsilon_m = Some((&fa - fx.lo()) / (&fa - &fc));
        }
        rec.level = Some(m);
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanSide {
    Left,
    Right,
}

impl std::fmt::Display for ScanSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScanSide::Left => "left",
            ScanSide::Right => "right",
        })
    }
}

impl std::str::FromStr for ScanSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(ScanSide::Left),
            "right" => Ok(ScanSide::Right),
            _ => Err(Error::Parse(format!(
                "side must be left or right, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScaleRecord {
    pub scale: Rational,
    /// Largest certified lower bound of a quotient in the window.
    pub max_lb: Option<Rational>,
    /// Smallest certified upper bound of a quotient in the window.
    pub min_ub: Option<Rational>,
    /// Largest certified lower bound of `|R|` in the window.
    pub max_abs_lb: Option<Rational>,
    pub samples: usize,
    /// Points dropped because their value could not be certified in budget.
    pub skipped: usize,
    /// `max_lb` over this and every coarser scale.
    pub running_max_lb: Option<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiniScan {
    pub x: Rational,
    pub side: ScanSide,
    pub records: Vec<ScaleRecord>,
}

impl DiniScan {
    /// CSV with header `scale,side,max_lb,min_ub,samples`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,side,max_lb,min_ub,samples\n");
        let opt = |v: &Option<Rational>| v.as_ref().map(|r| r.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.scale,
                self.side,
                opt(&r.max_lb),
                opt(&r.min_ub),
                r.samples
            );
        }
        out
    }
}

fn fold_opt(acc: &mut Option<Rational>, v: &Rational, better: fn(&Rational, &Rational) -> bool) {
    if acc.as_ref().is_none_or(|a| better(v, a)) {
        *acc = Some(v.clone());
    }
}

/// Quotient bounds over one-sided windows `(x, x + h]` or `[x - h, x)`,
/// clipped to `[0, 1]`, for each scale `h` from coarse to fine.
pub fn dini_scan<P: Probe + ?Sized>(
    probe: &P,
    x: &Rational,
    side: ScanSide,
    scales: &[Rational],
    opts: &ScanOptions,
) -> Result<DiniScan> {
    check_unit(x)?;
    if scales.is_empty() || scales.iter().any(|h| !h.is_positive()) {
        return invalid("scales must be a nonempty list of positive rationals");
    }
    if scales.windows(2).any(|w| w[0] <= w[1]) {
        return invalid("scales must be strictly decreasing");
    }
    if opts.samples == 0 || !opts.eps.is_positive() {
        return invalid("samples and eps must be positive");
    }
    let edge = match side {
        ScanSide::Right => Rational::one(),
        ScanSide::Left => Rational::zero(),
    };
    if *x == edge {
        return invalid(format!("the {side} window of {x} is empty"));
    }
    let window = |h: &Rational| match side {
        ScanSide::Right => (x.clone(), (x + h).min(Rational::one())),
        ScanSide::Left => ((x - h).max(Rational::zero()), x.clone()),
    };

    let (lo, hi) = window(&scales[0]);
    let resolution = scales.last().expect("nonempty") * Rational::pow2(-8);
    let mut points: BTreeMap<Rational, Option<Enclosure>> = probe
        .structured_points(x, &lo, &hi, &resolution, opts)?
        .into_iter()
        .filter(|(y, _)| y != x)
        .map(|(y, v)| (y, Some(v)))
        .collect();
    for h in scales {
        let (lo, hi) = window(h);
        for i in 1..=opts.samples {
            let step = (&hi - &lo) * Rational::from(i as i64) / Rational::from(opts.samples as i64);
            let y = match side {
                ScanSide::Right => &lo + step,
                ScanSide::Left => &hi - step,
            };
            points.entry(y).or_insert(None);
        }
    }

    // farthest first, so the enclosure of f(x) only ever needs refining
    let mut by_distance: Vec<(Rational, Rational, Option<Enclosure>)> = points
        .into_iter()
        .map(|(y, v)| ((x - &y).abs(), y, v))
        .collect();
    by_distance.sort_by(|p, q| q.0.cmp(&p.0));
    let mut fx: Option<Enclosure> = None;
    let mut quotients: Vec<(Rational, Option<Enclosure>)> = Vec::with_capacity(by_distance.len());
    for (dist, y, known) in by_distance {
        let inner = &opts.eps * &dist / Rational::from_integer(2);
        if fx.as_ref().is_none_or(|e| e.width() > inner) {
            fx = Some(probe.value(x, &inner)?);
        }
        let fy = match known {
            Some(v) => Some(v),
            None => match probe.value(&y, &inner) {
                Ok(e) => Some(e),
                Err(Error::ResourceLimit(_)) => None,
                Err(e) => return Err(e),
            },
        };
        let q = fy.map(|fy| quotient_of(fx.as_ref().expect("evaluated"), &fy, x, &y));
        quotients.push((dist, q));
    }

    let mut running: Option<Rational> = None;
    let mut records = Vec::with_capacity(scales.len());
    for h in scales {
        let (lo, hi) = window(h);
        let reach = &hi - &lo;
        let mut rec = ScaleRecord {
            scale: h.clone(),
            max_lb: None,
            min_ub: None,
            max_abs_lb: None,
            samples: 0,
            skipped: 0,
            running_max_lb: None,
        };
        for (_, q) in quotients.iter().filter(|(d, _)| d <= &reach) {
            let Some(q) = q else {
                rec.skipped += 1;
                continue;
            };
            fold_opt(&mut rec.max_lb, q.lo(), |v, a| v > a);
            fold_opt(&mut rec.min_ub, q.hi(), |v, a| v < a);
            fold_opt(&mut rec.max_abs_lb, &q.magnitude_lower(), |v, a| v > a);
            rec.samples += 1;
        }
        if let Some(m) = &rec.max_lb {
            fold_opt(&mut running, m, |v, a| v > a);
        }
        rec.running_max_lb = running.clone();
        records.push(rec);
    }
    Ok(DiniScan {
        x: x.clone(),
        side,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SideVerdict {
    pub finest_scale: Rational,
    /// Largest certified `|R|` lower bound at the finest scale.
    pub max_abs_lb: Option<Rational>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PointReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left: Option<SideVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right: Option<SideVerdict>,
}

impl PointReport {
    pub fn sides(&self) -> impl Iterator<Item = (ScanSide, &SideVerdict)> {
        [(ScanSide::Left, &self.left), (ScanSide::Right, &self.right)]
            .into_iter()
            .filter_map(|(s, v)| v.as_ref().map(|v| (s, v)))
    }
}

/// Finite-scale evidence of unbounded one-sided quotients; not a proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MorseReport {
    pub threshold: Rational,
    pub applicable_sides: usize,
    pub flagged_sides: usize,
    pub points: BTreeMap<String, PointReport>,
}

/// Scan both applicable sides of every point (no left side at 0, no right
/// side at 1) and flag sides whose finest-scale `|R|` exceeds `threshold`.
pub fn morse_report<P: Probe + Sync + ?Sized>(
    probe: &P,
    points: &[Rational],
    scales: &[Rational],
    threshold: &Rational,
    opts: &ScanOptions,
) -> Result<MorseReport> {
    let jobs: Vec<(usize, ScanSide)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, x)| {
            let left = (!x.is_zero()).then_some((i, ScanSide::Left));
            let right = (*x != Rational::one()).then_some((i, ScanSide::Right));
            left.into_iter().chain(right)
        })
        .collect();
    let next = AtomicUsize::new(0);
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let results: Vec<(usize, Result<SideVerdict>)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let j = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&(i, side)) = jobs.get(j) else { break };
                        let verdict =
                            dini_scan(probe, &points[i], side, scales, opts).map(|scan| {
                                let finest = scan.records.last().expect("scales nonempty");
                                SideVerdict {
                                    finest_scale: finest.scale.clone(),
                                    max_abs_lb: finest.max_abs_lb.clone(),
                                    flagged: finest
                                        .max_abs_lb
                                        .as_ref()
                                        .is_some_and(|m| m > threshold),
                                }
                            });
                        done.push((j, verdict));
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scan worker panicked"))
            .collect()
    });

    let mut report = MorseReport {
        threshold: threshold.clone(),
        applicable_sides: jobs.len(),
        flagged_sides: 0,
        points: points
            .iter()
            .map(|x| {
                (
                    x.to_string(),
                    PointReport {
                        left: None,
                        right: None,
                    },
                )
            })
            .collect(),
    };
    let mut results = results;
    results.sort_by_key(|(j, _)| *j);
    for (j, verdict) in results {
        let verdict = verdict?;
        let (i, side) = jobs[j];
        report.flagged_sides += usize::from(verdict.flagged);
        let entry = report
            .points
            .get_mut(&points[i].to_string())
            .expect("inserted above");
        match side {
            ScanSide::Left => entry.left = Some(verdict),
            ScanSide::Right => entry.right = Some(verdict),
        }
    }
    Ok(report)
}

#[derive(Clone)]
struct Region {
    frame: Arc<Frame>,
    node: StaircaseNode,
    side: Side,
}

/// Best-first walk over staircase nodes in every frame meeting the window,
/// nearest to `x` first, collecting flat-segment endpoints, step-triangle
/// apexes and split points.
struct StructureSearch<'a> {
    ctx: &'a Construction,
    x: &'a Rational,
    lo: &'a Rational,
    hi: &'a Rational,
    resolution: &'a Rational,
    opts: &'a ScanOptions,
    regions: Vec<Region>,
    heap: BinaryHeap<Reverse<(Rational, u32, usize)>>,
    points: BTreeMap<Rational, Rational>,
}

impl<'a> StructureSearch<'a> {
    fn span(frame: &Frame, s0: &Rational, s1: &Rational, side: Side) -> (Rational, Rational) {
        let p = frame.unfold(s0, side);
        let q = frame.unfold(s1, side);
        if p <= q {
            (p, q)
        } else {
            (q, p)
        }
    }

    fn meets_window(&self, lo: &Rational, hi: &Rational) -> bool {
        lo <= self.hi && self.lo <= hi
    }

    fn push(&mut self, region: Region) {
        let (lo, hi) = Self::span(&region.frame, &region.node.c, &region.node.d, region.side);
        if !self.meets_window(&lo, &hi) || &(&hi - &lo) < self.resolution {
            return;
        }
        let dist = if self.x < &lo {
            &lo - self.x
        } else if self.x > &hi {
            self.x - &hi
        } else {
            Rational::zero()
        };
        self.heap
            .push(Reverse((dist, region.node.m, self.regions.len())));
        self.regions.push(region);
    }

    fn mark(&mut self, p: Rational, value: Rational) {
        if self.lo <= &p && &p <= self.hi && &p != self.x {
            self.points.insert(p, value);
        }
    }

    fn run(mut self) -> Result<Vec<(Rational, Enclosure)>> {
        let root = Frame::root();
        for side in [Side::Left, Side::Right] {
            self.push(Region {
                frame: Arc::clone(&root),
                node: self.ctx.root_node(1),
                side,
            });
        }
        let mut visited = 0;
        while let Some(Reverse((_, _, idx))) = self.heap.pop() {
            if visited >= self.opts.budget {
                break;
            }
            visited += 1;
            let Region { frame, node, side } = self.regions[idx].clone();
            for (s, level) in [
                (&node.c, &node.vc),
                (&node.a, &node.plateau),
                (&node.b, &node.plateau),
                (&node.d, &node.vd),
            ] {
                self.mark(frame.unfold(s, side), frame.value_at(level));
            }
            let (ra, rb) = Self::span(&frame, &node.a, &node.b, side);
            if frame.gen < self.opts.gen_limit && self.meets_window(&ra, &rb) {
                for child in self.ctx.child_frames(&frame, &node, side)? {
                    if !self.meets_window(&child.u, &child.v) || &child.len() < self.resolution {
                        continue;
                    }
                    self.mark(child.u.clone(), child.value_at(&Rational::zero()));
                    self.mark(child.apex(), child.value_at(&Rational::one()));
                    self.mark(child.v.clone(), child.value_at(&Rational::zero()));
                    for child_side in [Side::Left, Side::Right] {
                        self.push(Region {
                            frame: Arc::clone(&child),
                            node: self.ctx.root_node(child.sigma),
                            side: child_side,
                        });
                    }
                }
            }
            if node.m < self.opts.level_limit {
                for right in [false, true] {
                    let next = self.ctx.child_node(&node, right)?;
                    self.push(Region {
                        frame: Arc::clone(&frame),
                        node: next,
                        side,
                    });
                }
            }
        }
        Ok(self
            .points
            .into_iter()
            .map(|(p, v)| (p, Enclosure::point(v)))
            .collect())
    }
}
