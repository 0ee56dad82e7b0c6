//! Statistical primitives: exact binomial tails, the positivity check, the
//! IV-inequality statistic and its bootstrap test, Manski bounds, Wilson
//! intervals and the naive interval-based ternary baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sampling::{multinomial, unit_rng};
use crate::ternary::{check_level, BinaryTest, BinaryVerdict, RegionId, RegionSet, SampleSize, TernaryOutcome};

/// Axis cardinalities of a contingency table. `z` is absent for (X, Y) tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Card {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
    pub x: usize,
    pub y: usize,
}

impl Card {
    pub fn cells(&self) -> usize {
        self.z.unwrap_or(1) * self.x * self.y
    }
}

/// Integer counts over discrete `(Z, X, Y)` or `(X, Y)` cells, stored
/// row-major with `z` outermost.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct ContingencyTable {
    card: Card,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    card: Card,
    counts: Vec<u64>,
}

impl TryFrom<TableRepr> for ContingencyTable {
    type Error = Error;

    fn try_from(r: TableRepr) -> Result<Self> {
        ContingencyTable::new(r.card, r.counts)
    }
}

impl From<ContingencyTable> for TableRepr {
    fn from(t: ContingencyTable) -> Self {
        TableRepr { card: t.card, counts: t.counts }
    }
}

impl ContingencyTable {
    pub fn new(card: Card, counts: Vec<u64>) -> Result<Self> {
        if card.x == 0 || card.y == 0 || card.z == Some(0) {
            return Err(Error::Schema("axis cardinalities must be at least 1".into()));
        }
        if counts.len() != card.cells() {
            return Err(Error::Schema(format!("expected {} counts, got {}", card.cells(), counts.len())));
        }
        Ok(ContingencyTable { card, counts })
    }

    /// An `|X| × |Y|` table; `counts[x][y]`.
    pub fn xy(counts: &[Vec<u64>]) -> Result<Self> {
        let x = counts.len();
        let y = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|row| row.len() != y) {
            return Err(Error::Schema("ragged (X, Y) counts".into()));
        }
        ContingencyTable::new(Card { z: None, x, y }, counts.concat())
    }

    /// A 2×2 table from its four cells.
    pub fn binary_xy(n00: u64, n01: u64, n10: u64, n11: u64) -> Self {
        ContingencyTable { card: Card { z: None, x: 2, y: 2 }, counts: vec![n00, n01, n10, n11] }
    }

    /// A `|Z| × |X| × |Y|` table; `counts[z][x][y]`.
    pub fn zxy(counts: &[Vec<Vec<u64>>]) -> Result<Self> {
        let z = counts.len();
        let x = counts.first().map_or(0, Vec::len);
        let y = counts.first().and_then(|s| s.first()).map_or(0, Vec::len);
        if counts.iter().any(|s| s.len() != x || s.iter().any(|r| r.len() != y)) {
            return Err(Error::Schema("ragged (Z, X, Y) counts".into()));
        }
        let flat = counts.iter().flat_map(|s| s.iter().flatten().copied()).collect();
        ContingencyTable::new(Card { z: Some(z), x, y }, flat)
    }

    pub fn card(&self) -> Card {
        self.card
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn has_z(&self) -> bool {
        self.card.z.is_some()
    }

    fn index(&self, z: usize, x: usize, y: usize) -> usize {
        (z * self.card.x + x) * self.card.y + y
    }

    /// Count of cell `(z, x, y)`; use `z = 0` for tables without a Z axis.
    pub fn count(&self, z: usize, x: usize, y: usize) -> u64 {
        self.counts[self.index(z, x, y)]
    }

    pub fn z_slice(&self, z: usize) -> &[u64] {
        let len = self.card.x * self.card.y;
        &self.counts[z * len..(z + 1) * len]
    }

    pub fn z_total(&self, z: usize) -> u64 {
        self.z_slice(z).iter().sum()
    }

    fn require_z(&self) -> Result<usize> {
        self.card.z.ok_or_else(|| Error::Schema("table has no Z axis".into()))
    }

    fn require_binary_xy(&self) -> Result<()> {
        if self.card.z.is_some() || self.card.x != 2 || self.card.y != 2 {
            return Err(Error::Schema(format!("expected a binary (X, Y) table, got {:?}", self.card)));
        }
        Ok(())
    }
}

impl SampleSize for ContingencyTable {
    fn sample_size(&self) -> u64 {
        self.total()
    }
}

/// Counts of a binary (X, Y) table, named by cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BinaryCounts {
    pub n: u64,
    pub x1y1: u64,
    pub x1y0: u64,
    pub x0: u64,
}

impl BinaryCounts {
    pub fn of(table: &ContingencyTable) -> Result<Self> {
        table.require_binary_xy()?;
        let n = table.total();
        if n == 0 {
            return Err(Error::Domain("empty table".into()));
        }
        Ok(BinaryCounts {
            n,
            x1y1: table.count(0, 1, 1),
            x1y0: table.count(0, 1, 0),
            x0: table.count(0, 0, 0) + table.count(0, 0, 1),
        })
    }
}

/// Markov kernel `K(x, y | z)`, one distribution over (X, Y) per z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalKernel {
    nx: usize,
    ny: usize,
    nz: usize,
    /// Row-major `[z][x][y]`.
    values: Vec<f64>,
}

const KERNEL_TOLERANCE: f64 = 1e-9;

impl ConditionalKernel {
    pub fn new(nx: usize, ny: usize, nz: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Domain("kernel cardinalities must be at least 1".into()));
        }
        if values.len() != nx * ny * nz {
            return Err(Error::Domain(format!("expected {} kernel entries, got {}", nx * ny * nz, values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("kernel entries must be finite and nonnegative".into()));
        }
        for (z, slice) in values.chunks(nx * ny).enumerate() {
            let s: f64 = slice.iter().sum();
            if (s - 1.0).abs() > KERNEL_TOLERANCE {
                return Err(Error::Domain(format!("kernel slice z={z} sums to {s}")));
            }
        }
        Ok(ConditionalKernel { nx, ny, nz, values })
    }

    /// Empirical kernel `P̂(x, y | z)`. Every z-slice must be nonempty.
    pub fn from_table(table: &ContingencyTable) -> Result<Self> {
        let nz = table.require_z()?;
        let card = table.card();
        let mut values = Vec::with_capacity(table.counts().len());
        for z in 0..nz {
            let nz_total = table.z_total(z);
            if nz_total == 0 {
                return Err(Error::Precondition(format!("no observations with z={z}")));
            }
            values.extend(table.z_slice(z).iter().map(|&c| c as f64 / nz_total as f64));
        }
        ConditionalKernel::new(card.x, card.y, nz, values)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[(z * self.nx + x) * self.ny + y]
    }

    /// The `(X, Y)` distribution for one instrument value.
    pub fn slice(&self, z: usize) -> &[f64] {
        let len = self.nx * self.ny;
        &self.values[z * len..(z + 1) * len]
    }
}

fn neumaier_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// `(P(X <= k-1), P(X >= k))` for `X ~ Bin(n, p)`, `1 <= k <= n`.
///
/// Only the lighter side is summed; the other is its complement, so the
/// pair sums to one.
fn split_tails(k: u64, n: u64, p: f64) -> (f64, f64) {
    debug_assert!(k >= 1 && k <= n);
    if p <= 0.0 {
        return (1.0, 0.0);
    }
    if p >= 1.0 {
        return (0.0, 1.0);
    }
    // Weights relative to the mode by the pmf ratio recurrence, normalised by
    // their total. Avoids log-gamma round-off, which dominates for large n.
    let q = 1.0 - p;
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let mut weights = vec![0.0f64; (n + 1) as usize];
    weights[mode as usize] = 1.0;
    for i in mode..n {
        let w = weights[i as usize] * ((n - i) as f64 / (i + 1) as f64) * (p / q);
        if w == 0.0 {
            break;
        }
        weights[(i + 1) as usize] = w;
    }
    for i in (1..=mode).rev() {
        let w = weights[i as usize] * (i as f64 / (n - i + 1) as f64) * (q / p);
        if w == 0.0 {
            break;
        }
        weights[(i - 1) as usize] = w;
    }
    let total = neumaier_sum(weights.iter().copied());
    let (lo, hi) = weights.split_at(k as usize);
    if (k as f64) > n as f64 * p {
        let upper = (neumaier_sum(hi.iter().copied()) / total).min(1.0);
        (1.0 - upper, upper)
    } else {
        let lower = (neumaier_sum(lo.iter().copied()) / total).min(1.0);
        (lower, 1.0 - lower)
    }
}

fn check_binomial_args(k: u64, n: u64, p0: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("binomial test needs n >= 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("count {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Domain(format!("null proportion {p0} outside [0, 1]")));
    }
    Ok(())
}

/// `P(Bin(n, p0) >= k)`: p-value of the one-sided test of `p <= p0` that
/// rejects for large counts.
pub fn binom_pvalue_upper(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial_args(k, n, p0)?;
    if k == 0 {
        return Ok(1.0);
    }
    Ok(split_tails(k, n, p0).1)
}

/// `P(Bin(n, p0) <= k)`: p-value of the one-sided test of `p >= p0` that
/// rejects for small counts.
pub fn binom_pvalue_lower(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial_args(k, n, p0)?;
    if k == n {
        return Ok(1.0);
    }
    Ok(split_tails(k + 1, n, p0).0)
}

/// Deterministic positivity check: the null is "some instrument value is
/// never observed".
///
/// Rejects with p-value 0 when every z-slice has data, accepts with
/// p-value 1 otherwise.
pub fn positivity_check(table: &ContingencyTable, level: f64) -> Result<BinaryVerdict> {
    let nz = table.require_z()?;
    let all_observed = (0..nz).all(|z| table.z_total(z) > 0);
    BinaryVerdict::from_p_value(if all_observed { 0.0 } else { 1.0 }, level)
}

/// `max_x Σ_y max_z K(x, y | z)`. The IV inequalities hold iff this is ≤ 1.
pub fn iv_lhs(kernel: &ConditionalKernel) -> f64 {
    let (nx, ny, nz) = kernel.dims();
    (0..nx)
        .map(|x| {
            (0..ny)
                .map(|y| (0..nz).map(|z| kernel.get(x, y, z)).fold(f64::NEG_INFINITY, f64::max))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Plug-in IV statistic `T̂ = iv_lhs(P̂(X, Y | Z)) - 1`.
pub fn iv_statistic(table: &ContingencyTable) -> Result<f64> {
    Ok(iv_lhs(&ConditionalKernel::from_table(table)?) - 1.0)
}

pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;

/// Parametric bootstrap test of the IV inequalities.
///
/// The null is `T = iv_lhs - 1 <= 0`. Each replicate redraws every z-slice
/// from its empirical conditional with the slice's own size; the p-value is
/// `(1 + #{T*_b - T̂ >= T̂}) / (B + 1)`, and 1 when `T̂ <= 0`. Replicate `b`
/// uses stream `b` of `seed`, so the result does not depend on threading.
pub fn iv_bootstrap_test(table: &ContingencyTable, replicates: usize, level: f64, seed: u64) -> Result<BinaryVerdict> {
    check_level(level)?;
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(Error::Precondition(format!(
            "at least {MIN_BOOTSTRAP_REPLICATES} bootstrap replicates required, got {replicates}"
        )));
    }
    let kernel = ConditionalKernel::from_table(table)?;
    let t_hat = iv_lhs(&kernel) - 1.0;
    if t_hat <= 0.0 {
        return BinaryVerdict::from_p_value(1.0, level);
    }
    let (nx, ny, nz) = kernel.dims();
    let slice_sizes: Vec<u64> = (0..nz).map(|z| table.z_total(z)).collect();
    let exceed = (0..replicates)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = unit_rng(seed, b as u64);
            let mut values = Vec::with_capacity(nx * ny * nz);
            for (z, &size) in slice_sizes.iter().enumerate() {
                let draw = multinomial(&mut rng, size, kernel.slice(z));
                values.extend(draw.iter().map(|&c| c as f64 / size as f64));
            }
            let boot = ConditionalKernel { nx, ny, nz, values };
            iv_lhs(&boot) - 1.0 - t_hat >= t_hat
        })
        .count();
    let p = (1 + exceed) as f64 / (replicates + 1) as f64;
    BinaryVerdict::from_p_value(p, level)
}

/// Sharp bounds on `P(Y=1 | do(X=1))` from the observational joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManskiInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ManskiInterval {
    /// From `P(Y=1, X=1)` and `P(X≠1)`.
    pub fn from_joint(p_x1y1: f64, p_x_not1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_x1y1) || !(0.0..=1.0).contains(&p_x_not1) || p_x1y1 + p_x_not1 > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("invalid joint: P(Y=1,X=1)={p_x1y1}, P(X!=1)={p_x_not1}")));
        }
        Ok(ManskiInterval { lower: p_x1y1, upper: (p_x1y1 + p_x_not1).min(1.0) })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Empirical Manski bounds from a binary (X, Y) table.
pub fn manski_bounds(table: &ContingencyTable) -> Result<ManskiInterval> {
    let c = BinaryCounts::of(table)?;
    let n = c.n as f64;
    ManskiInterval::from_joint(c.x1y1 as f64 / n, c.x0 as f64 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Two-sided Wilson score interval for a binomial proportion.
pub fn wilson_interval(k: u64, n: u64, level: f64) -> Result<ConfidenceInterval> {
    if n == 0 || k > n {
        return Err(Error::Domain(format!("wilson interval needs 0 <= k <= n, n >= 1 (k={k}, n={n})")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let (kf, nf) = (k as f64, n as f64);
    let p = kf / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(ConfidenceInterval { lo, hi, level })
}

/// Naive ternary test built from confidence bounds on the Manski bounds.
///
/// `c` at or below the lower confidence bound of the lower Manski bound
/// gives `Out0` (efficacy at least `c`); `c` above the upper confidence
/// bound of the upper Manski bound gives `Out1`; anything between is `Out2`.
pub fn naive_manski_ternary(table: &ContingencyTable, c: f64, level: f64) -> Result<TernaryOutcome> {
    let counts = BinaryCounts::of(table)?;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("threshold {c} outside [0, 1]")));
    }
    let lower_cb = wilson_interval(counts.x1y1, counts.n, level)?.lo;
    let upper_cb = wilson_interval(counts.x1y1 + counts.x0, counts.n, level)?.hi;
    Ok(if c <= lower_cb {
        TernaryOutcome::Out0
    } else if c > upper_cb {
        TernaryOutcome::Out1
    } else {
        TernaryOutcome::Out2
    })
}

/// Positivity as a stage-1 test of `R2` against `R0 ∪ R1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PositivityTest;

impl BinaryTest<ContingencyTable> for PositivityTest {
    fn run(&self, sample: &ContingencyTable, level: f64) -> Result<BinaryVerdict> {
        positivity_check(sample, level)
    }

    fn null_regions(&self) -> RegionSet {
        RegionSet::single(RegionId::R2)
    }

    fn alt_regions(&self) -> RegionSet {
        RegionSet::of(&[RegionId::R0, RegionId::R1])
    }
}

/// Bootstrap IV-inequality test of `R0` against `R1`.
#[derive(Debug, Clone, Copy)]
pub struct IvInequalityTest {
    pub replicates: usize,
    pub seed: u64,
}

impl BinaryTest<ContingencyTable> for IvInequalityTest {
    fn run(&self, sample: &ContingencyTable, level: f64) -> Result<BinaryVerdict> {
        iv_bootstrap_test(sample, self.replicates, level, self.seed)
    }

    fn null_regions(&self) -> RegionSet {
        RegionSet::single(RegionId::R0)
    }

    fn alt_regions(&self) -> RegionSet {
        RegionSet::single(RegionId::R1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    /// Rejects `p <= p0` for large counts.
    Upper,
    /// Rejects `p >= p0` for small counts.
    Lower,
}

/// Exact one-sided binomial test on the proportion of one (X, Y) cell.
#[derive(Debug, Clone, Copy)]
pub struct CellProportionTest {
    pub x: usize,
    pub y: usize,
    pub p0: f64,
    pub tail: Tail,
    pub null: RegionSet,
    pub alt: RegionSet,
}

impl BinaryTest<ContingencyTable> for CellProportionTest {
    fn run(&self, sample: &ContingencyTable, level: f64) -> Result<BinaryVerdict> {
        sample.require_binary_xy()?;
        let (k, n) = (sample.count(0, self.x, self.y), sample.total());
        let p = match self.tail {
            Tail::Upper => binom_pvalue_upper(k, n, self.p0)?,
            Tail::Lower => binom_pvalue_lower(k, n, self.p0)?,
        };
        BinaryVerdict::from_p_value(p, level)
    }

    fn null_regions(&self) -> RegionSet {
        self.null
    }

    fn alt_regions(&self) -> RegionSet {
        self.alt
    }
}
