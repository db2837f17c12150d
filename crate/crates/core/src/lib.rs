//! Exact construction of a continuous, Lebesgue-measure-preserving map of
//! `[0, 1]` with no one-sided derivative anywhere, built from nested Cantor
//! staircases, together with its piecewise-linear measure-preserving
//! approximants and difference-quotient probes.

pub mod bmfunction;
pub mod discontinuum;
pub mod error;
pub mod numerics;
pub mod plmap;
pub mod probes;

pub use bmfunction::{Chain, Classification, Construction, Frame, Orientation, Side};
pub use discontinuum::{build_staircase, KMode, StaircaseNode, StaircaseTree};
pub use error::{Error, Result};
pub use numerics::{Enclosure, Rational};
pub use plmap::{build_g, Approximant, MeasureReport, PLMap};
pub use probes::{
    dini_scan, morse_report, quotient, witness_sequence, DiniScan, MorseReport, Probe,
    QuotientRecord, ScanOptions, ScanSide,
};
