//! Outcome/region taxonomy and two-stage composition of binary tests.
//!
//! A ternary test answers one of three things about a causal null: don't
//! reject it (`Out0`), reject it (`Out1`), or declare the query
//! unidentifiable from the data (`Out2`). The ground truth lives in one of
//! three disjoint regions of the observational model space:
//!
//! * `R0` = H⁰ ∖ H¹
//! * `R1` = H¹ ∖ H⁰
//! * `R2` = H⁰ ∩ H¹
//!
//! A two-stage test first pits one region against the union of the other
//! two, then splits that union with a second binary test. Which side of the
//! first split is the null gives the two plan kinds:
//!
//! * **SA** (split alternative): stage-1 null is the single region `first`.
//!   Accepting it concludes `first`.
//! * **SN** (split null): stage-1 null is the complement of `first`.
//!   Rejecting it concludes `first`.
//!
//! When stage 1 does not conclude `first`, stage 2 tests `second_null`
//! against `second_alt` on the same sample; accepting gives `second_null`,
//! rejecting gives `second_alt`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three decisions a ternary test can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum TernaryOutcome {
    /// Don't reject the causal null.
    Out0,
    /// Reject the causal null.
    Out1,
    /// The query is unidentifiable from the observational distribution.
    Out2,
}

impl TernaryOutcome {
    pub const ALL: [TernaryOutcome; 3] = [TernaryOutcome::Out0, TernaryOutcome::Out1, TernaryOutcome::Out2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The outcome that names `region` correctly.
    pub fn naming(region: RegionId) -> Self {
        Self::ALL[region.index()]
    }
}

impl From<TernaryOutcome> for u8 {
    fn from(o: TernaryOutcome) -> u8 {
        o as u8
    }
}

impl TryFrom<u8> for TernaryOutcome {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Self::from_index(v as usize).ok_or_else(|| format!("outcome must be 0, 1 or 2, got {v}"))
    }
}

impl fmt::Display for TernaryOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// The three disjoint truth regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum RegionId {
    R0,
    R1,
    R2,
}

impl RegionId {
    pub const ALL: [RegionId; 3] = [RegionId::R0, RegionId::R1, RegionId::R2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The region that a correct test would report as `outcome`.
    pub fn named_by(outcome: TernaryOutcome) -> Self {
        Self::ALL[outcome.index()]
    }
}

impl From<RegionId> for u8 {
    fn from(r: RegionId) -> u8 {
        r as u8
    }
}

impl TryFrom<u8> for RegionId {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Self::from_index(v as usize).ok_or_else(|| format!("region must be 0, 1 or 2, got {v}"))
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.index())
    }
}

/// A subset of `{R0, R1, R2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RegionSet(u8);

impl RegionSet {
    pub const EMPTY: RegionSet = RegionSet(0);
    pub const ALL: RegionSet = RegionSet(0b111);

    pub fn of(regions: &[RegionId]) -> Self {
        regions.iter().fold(Self::EMPTY, |s, &r| s.with(r))
    }

    pub fn single(r: RegionId) -> Self {
        RegionSet(1 << r.index())
    }

    pub fn with(self, r: RegionId) -> Self {
        RegionSet(self.0 | (1 << r.index()))
    }

    pub fn contains(self, r: RegionId) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn complement(self) -> Self {
        RegionSet(!self.0 & 0b111)
    }

    pub fn union(self, other: Self) -> Self {
        RegionSet(self.0 | other.0)
    }

    pub fn intersects(self, other: Self) -> bool {
        self.0 & other.0 != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = RegionId> {
        RegionId::ALL.into_iter().filter(move |&r| self.contains(r))
    }
}

impl fmt::Display for RegionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.iter().map(|r| r.to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Decision of a binary test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    AcceptNull,
    RejectNull,
}

/// Result of running a binary test at a given level.
///
/// Tests defined only through a rejection region report a degenerate
/// p-value of 0 (reject) or 1 (accept) so every verdict has the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryVerdict {
    pub decision: Decision,
    pub p_value: f64,
    pub level: f64,
}

impl BinaryVerdict {
    /// Rejects iff `p_value <= level`. At level 1 every p-value rejects.
    pub fn from_p_value(p_value: f64, level: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_value) {
            return Err(Error::Domain(format!("p-value {p_value} outside [0, 1]")));
        }
        check_level(level)?;
        let decision = if p_value <= level { Decision::RejectNull } else { Decision::AcceptNull };
        Ok(BinaryVerdict { decision, p_value, level })
    }

    pub fn rejected(&self) -> bool {
        self.decision == Decision::RejectNull
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if (0.0..=1.0).contains(&level) {
        Ok(())
    } else {
        Err(Error::Domain(format!("level {level} outside [0, 1]")))
    }
}

/// A binary test of a null region set against an alternative region set.
///
/// `run` receives the sample and the level and must return a verdict whose
/// decision agrees with its p-value at that level.
pub trait BinaryTest<S: ?Sized> {
    fn run(&self, sample: &S, level: f64) -> Result<BinaryVerdict>;

    fn null_regions(&self) -> RegionSet;

    fn alt_regions(&self) -> RegionSet;
}

impl<S: ?Sized, T: BinaryTest<S> + ?Sized> BinaryTest<S> for &T {
    fn run(&self, sample: &S, level: f64) -> Result<BinaryVerdict> {
        (**self).run(sample, level)
    }

    fn null_regions(&self) -> RegionSet {
        (**self).null_regions()
    }

    fn alt_regions(&self) -> RegionSet {
        (**self).alt_regions()
    }
}

fn check_partition(null: RegionSet, alt: RegionSet) -> Result<()> {
    if null.is_empty() || alt.is_empty() {
        return Err(Error::Config(format!("null {null} and alternative {alt} must both be nonempty")));
    }
    if null.intersects(alt) {
        return Err(Error::Config(format!("null {null} and alternative {alt} overlap")));
    }
    Ok(())
}

/// Which side of the first split is the null hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanKind {
    /// Split alternative: the stage-1 null is the single region `first`.
    SA,
    /// Split null: the stage-1 null is the complement of `first`.
    SN,
}

/// One of the twelve two-stage ternary test layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr", into = "PlanRepr")]
pub struct TwoStagePlan {
    kind: PlanKind,
    first: RegionId,
    second_null: RegionId,
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    kind: PlanKind,
    first: RegionId,
    second_null: RegionId,
}

impl TryFrom<PlanRepr> for TwoStagePlan {
    type Error = Error;

    fn try_from(r: PlanRepr) -> Result<Self> {
        TwoStagePlan::new(r.kind, r.first, r.second_null)
    }
}

impl From<TwoStagePlan> for PlanRepr {
    fn from(p: TwoStagePlan) -> PlanRepr {
        PlanRepr { kind: p.kind, first: p.first, second_null: p.second_null }
    }
}

impl TwoStagePlan {
    pub fn new(kind: PlanKind, first: RegionId, second_null: RegionId) -> Result<Self> {
        if first == second_null {
            return Err(Error::Config(format!("stage-2 null {second_null} must differ from the first region")));
        }
        Ok(TwoStagePlan { kind, first, second_null })
    }

    /// All twelve plans: {SA, SN} × first region × stage-2 null.
    pub fn all() -> Vec<TwoStagePlan> {
        let mut plans = Vec::with_capacity(12);
        for kind in [PlanKind::SA, PlanKind::SN] {
            for first in RegionId::ALL {
                for second_null in RegionId::ALL.into_iter().filter(|&r| r != first) {
                    plans.push(TwoStagePlan { kind, first, second_null });
                }
            }
        }
        plans
    }

    pub fn kind(&self) -> PlanKind {
        self.kind
    }

    pub fn first(&self) -> RegionId {
        self.first
    }

    pub fn second_null(&self) -> RegionId {
        self.second_null
    }

    pub fn second_alt(&self) -> RegionId {
        RegionSet::of(&[self.first, self.second_null]).complement().iter().next().expect("three distinct regions")
    }

    pub fn stage1_null(&self) -> RegionSet {
        match self.kind {
            PlanKind::SA => RegionSet::single(self.first),
            PlanKind::SN => RegionSet::single(self.first).complement(),
        }
    }

    pub fn stage1_alt(&self) -> RegionSet {
        self.stage1_null().complement()
    }

    /// Whether a stage-1 decision settles on `first` without a second stage.
    pub fn concludes_first(&self, stage1: Decision) -> bool {
        match self.kind {
            PlanKind::SA => stage1 == Decision::AcceptNull,
            PlanKind::SN => stage1 == Decision::RejectNull,
        }
    }

    /// Which constituent error rate bounds the `(outcome, truth)` cell.
    pub fn bound_source(&self, cell: ErrorCell) -> StageRate {
        let (o, t) = (RegionId::named_by(cell.outcome()), cell.truth());
        let first = self.first;
        match self.kind {
            PlanKind::SA if o == first => StageRate::Beta1,
            PlanKind::SA if t == first => StageRate::Alpha1,
            PlanKind::SN if o == first => StageRate::Alpha1,
            PlanKind::SN if t == first => StageRate::Beta1,
            // both off `first`: the stage-2 split decides
            _ if o == self.second_alt() => StageRate::Alpha2,
            _ => StageRate::Beta2,
        }
    }
}

impl fmt::Display for TwoStagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}(first={}, second_null={}, second_alt={})",
            self.kind,
            self.first,
            self.second_null,
            self.second_alt()
        )
    }
}

/// Combine stage verdicts into a ternary outcome.
///
/// `stage2` is ignored when stage 1 already concludes `first`; otherwise it
/// is required.
pub fn compose_two_stage(
    plan: &TwoStagePlan,
    stage1: &BinaryVerdict,
    stage2: Option<&BinaryVerdict>,
) -> Result<TernaryOutcome> {
    if plan.concludes_first(stage1.decision) {
        return Ok(TernaryOutcome::naming(plan.first));
    }
    let stage2 = stage2.ok_or_else(|| {
        Error::Precondition(format!("plan {plan} did not conclude at stage 1 and needs a stage-2 verdict"))
    })?;
    let region = match stage2.decision {
        Decision::AcceptNull => plan.second_null,
        Decision::RejectNull => plan.second_alt(),
    };
    Ok(TernaryOutcome::naming(region))
}

/// Outcome of a full two-stage run, with the verdicts that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStageRun {
    pub outcome: TernaryOutcome,
    pub stage1: BinaryVerdict,
    pub stage2: Option<BinaryVerdict>,
}

/// Run a two-stage test on one sample.
///
/// Stage 2 is only evaluated when stage 1 does not conclude `first`, and it
/// sees the same sample as stage 1.
pub fn run_two_stage<S, T1, T2>(
    plan: &TwoStagePlan,
    phi1: &T1,
    phi2: &T2,
    sample: &S,
    alpha1: f64,
    alpha2: f64,
) -> Result<TwoStageRun>
where
    S: ?Sized,
    T1: BinaryTest<S> + ?Sized,
    T2: BinaryTest<S> + ?Sized,
{
    check_stage_metadata(plan, phi1.null_regions(), phi1.alt_regions(), phi2.null_regions(), phi2.alt_regions())?;
    let stage1 = phi1.run(sample, alpha1)?;
    if plan.concludes_first(stage1.decision) {
        return Ok(TwoStageRun { outcome: TernaryOutcome::naming(plan.first), stage1, stage2: None });
    }
    let stage2 = phi2.run(sample, alpha2)?;
    let outcome = compose_two_stage(plan, &stage1, Some(&stage2))?;
    Ok(TwoStageRun { outcome, stage1, stage2: Some(stage2) })
}

pub(crate) fn check_stage_metadata(
    plan: &TwoStagePlan,
    null1: RegionSet,
    alt1: RegionSet,
    null2: RegionSet,
    alt2: RegionSet,
) -> Result<()> {
    check_partition(null1, alt1)?;
    check_partition(null2, alt2)?;
    if null1 != plan.stage1_null() || alt1 != plan.stage1_alt() {
        return Err(Error::Config(format!(
            "stage-1 test {null1} vs {alt1} does not match plan {plan} ({} vs {})",
            plan.stage1_null(),
            plan.stage1_alt()
        )));
    }
    if null2 != RegionSet::single(plan.second_null) || alt2 != RegionSet::single(plan.second_alt()) {
        return Err(Error::Config(format!("stage-2 test {null2} vs {alt2} does not match plan {plan}")));
    }
    Ok(())
}

/// An off-diagonal `(outcome, truth)` cell of the outcome-truth table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(TernaryOutcome, RegionId)", into = "(TernaryOutcome, RegionId)")]
pub struct ErrorCell {
    outcome: TernaryOutcome,
    truth: RegionId,
}

impl ErrorCell {
    pub fn new(outcome: TernaryOutcome, truth: RegionId) -> Option<Self> {
        (outcome.index() != truth.index()).then_some(ErrorCell { outcome, truth })
    }

    pub fn outcome(&self) -> TernaryOutcome {
        self.outcome
    }

    pub fn truth(&self) -> RegionId {
        self.truth
    }

    /// The six error cells in row-major order.
    pub fn all() -> Vec<ErrorCell> {
        TernaryOutcome::ALL
            .into_iter()
            .flat_map(|o| RegionId::ALL.into_iter().filter_map(move |t| ErrorCell::new(o, t)))
            .collect()
    }
}

impl TryFrom<(TernaryOutcome, RegionId)> for ErrorCell {
    type Error = String;

    fn try_from((o, t): (TernaryOutcome, RegionId)) -> std::result::Result<Self, String> {
        ErrorCell::new(o, t).ok_or_else(|| format!("({o},{}) is a diagonal cell", t.index()))
    }
}

impl From<ErrorCell> for (TernaryOutcome, RegionId) {
    fn from(c: ErrorCell) -> Self {
        (c.outcome, c.truth)
    }
}

impl fmt::Display for ErrorCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.outcome.index(), self.truth.index())
    }
}

pub fn classify_error(outcome: TernaryOutcome, truth: RegionId) -> Option<ErrorCell> {
    ErrorCell::new(outcome, truth)
}

/// 3×3 table indexed by `[outcome][truth]`.
///
/// Off-diagonal entries are error rates or bounds; the diagonal holds
/// correctness rates, or 1 when the table carries bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ErrorMatrix([[f64; 3]; 3]);

impl ErrorMatrix {
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        for v in rows.iter().flatten() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Domain(format!("matrix entry {v} outside [0, 1]")));
            }
        }
        Ok(ErrorMatrix(rows))
    }

    pub fn get(&self, outcome: TernaryOutcome, truth: RegionId) -> f64 {
        self.0[outcome.index()][truth.index()]
    }

    pub fn cell(&self, cell: ErrorCell) -> f64 {
        self.get(cell.outcome, cell.truth)
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ErrorMatrix {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::Schema(format!("error matrix needs 9 entries, got {}", v.len())));
        }
        let mut rows = [[0.0; 3]; 3];
        for (i, x) in v.into_iter().enumerate() {
            rows[i / 3][i % 3] = x;
        }
        ErrorMatrix::from_rows(rows)
    }
}

impl From<ErrorMatrix> for Vec<f64> {
    fn from(m: ErrorMatrix) -> Vec<f64> {
        m.0.iter().flatten().copied().collect()
    }
}

/// The four constituent error rates of a two-stage test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageRate {
    Alpha1,
    Beta1,
    Alpha2,
    Beta2,
}

/// Asymptotic false-positive/false-negative rates of the two stage tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRates {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
}

impl StageRates {
    pub fn get(&self, rate: StageRate) -> f64 {
        match rate {
            StageRate::Alpha1 => self.alpha1,
            StageRate::Beta1 => self.beta1,
            StageRate::Alpha2 => self.alpha2,
            StageRate::Beta2 => self.beta2,
        }
    }
}

/// Per-cell error bounds implied by the constituent rates.
pub fn analytic_bound_table(plan: &TwoStagePlan, rates: StageRates) -> Result<ErrorMatrix> {
    for r in [rates.alpha1, rates.beta1, rates.alpha2, rates.beta2] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("error rate {r} outside [0, 1]")));
        }
    }
    let mut rows = [[1.0; 3]; 3];
    for cell in ErrorCell::all() {
        rows[cell.outcome.index()][cell.truth.index()] = rates.get(plan.bound_source(cell));
    }
    ErrorMatrix::from_rows(rows)
}

/// Samples that know how many observations they hold.
pub trait SampleSize {
    fn sample_size(&self) -> u64;
}

/// Sample-size breakpoints `N_1 < N_2 < …` for a vanishing level schedule.
///
/// A sample of size `n` with `N_m < n <= N_{m+1}` is tested at level `1/m`;
/// sizes up to `N_1` use level 1, at which the wrapped test always rejects.
/// Beyond the last breakpoint the last level stays in force.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlphaSchedule {
    breakpoints: Vec<u64>,
}

impl AlphaSchedule {
    pub fn new(breakpoints: Vec<u64>) -> Result<Self> {
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("schedule breakpoints must be strictly increasing".into()));
        }
        Ok(AlphaSchedule { breakpoints })
    }

    pub fn breakpoints(&self) -> &[u64] {
        &self.breakpoints
    }

    /// The level `1/m` aligned with breakpoint `N_m`.
    pub fn levels(&self) -> Vec<f64> {
        (1..=self.breakpoints.len()).map(|m| 1.0 / m as f64).collect()
    }

    pub fn level_for(&self, n: u64) -> f64 {
        let m = self.breakpoints.partition_point(|&b| b < n);
        1.0 / m.max(1) as f64
    }
}

/// A level-indexed test family run at the level its schedule assigns.
#[derive(Debug, Clone)]
pub struct Scheduled<T> {
    family: T,
    schedule: AlphaSchedule,
}

pub fn alpha_schedule_wrap<T>(family: T, schedule: AlphaSchedule) -> Scheduled<T> {
    Scheduled { family, schedule }
}

impl<S, T> BinaryTest<S> for Scheduled<T>
where
    S: SampleSize + ?Sized,
    T: BinaryTest<S>,
{
    /// The caller's level is ignored in favour of the schedule.
    fn run(&self, sample: &S, _level: f64) -> Result<BinaryVerdict> {
        self.family.run(sample, self.schedule.level_for(sample.sample_size()))
    }

    fn null_regions(&self) -> RegionSet {
        self.family.null_regions()
    }

    fn alt_regions(&self) -> RegionSet {
        self.family.alt_regions()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RegionId::*;
    use TernaryOutcome::*;

    fn verdict(d: Decision) -> BinaryVerdict {
        let p = if d == Decision::RejectNull { 0.0 } else { 1.0 };
        BinaryVerdict::from_p_value(p, 0.05).unwrap()
    }

    struct Const {
        decision: Decision,
        null: RegionSet,
        alt: RegionSet,
    }

    impl BinaryTest<()> for Const {
        fn run(&self, _: &(), level: f64) -> Result<BinaryVerdict> {
            let p = if self.decision == Decision::RejectNull { 0.0 } else { 1.0 };
            BinaryVerdict::from_p_value(p, level)
        }
        fn null_regions(&self) -> RegionSet {
            self.null
        }
        fn alt_regions(&self) -> RegionSet {
            self.alt
        }
    }

    fn stage1(plan: &TwoStagePlan, decision: Decision) -> Const {
        Const { decision, null: plan.stage1_null(), alt: plan.stage1_alt() }
    }

    fn stage2(plan: &TwoStagePlan, decision: Decision) -> Const {
        Const { decision, null: RegionSet::single(plan.second_null()), alt: RegionSet::single(plan.second_alt()) }
    }

    #[test]
    fn sa_composition_matches_combined_test() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let acc = verdict(Decision::AcceptNull);
        let rej = verdict(Decision::RejectNull);
        assert_eq!(compose_two_stage(&plan, &acc, None).unwrap(), Out2);
        assert_eq!(compose_two_stage(&plan, &rej, Some(&acc)).unwrap(), Out0);
        assert_eq!(compose_two_stage(&plan, &rej, Some(&rej)).unwrap(), Out1);
    }

    #[test]
    fn sn_concludes_first_on_rejection() {
        let plan = TwoStagePlan::new(PlanKind::SN, R2, R0).unwrap();
        assert_eq!(compose_two_stage(&plan, &verdict(Decision::RejectNull), None).unwrap(), Out2);
    }

    #[test]
    fn missing_stage2_is_precondition_error() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let err = compose_two_stage(&plan, &verdict(Decision::RejectNull), None).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn run_two_stage_is_lazy() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let run = run_two_stage(
            &plan,
            &stage1(&plan, Decision::AcceptNull),
            &stage2(&plan, Decision::RejectNull),
            &(),
            0.05,
            0.05,
        )
        .unwrap();
        assert_eq!(run.outcome, Out2);
        assert!(run.stage2.is_none());
    }

    #[test]
    fn run_two_stage_sn_reaches_second_alt() {
        let plan = TwoStagePlan::new(PlanKind::SN, R2, R0).unwrap();
        let run = run_two_stage(
            &plan,
            &stage1(&plan, Decision::AcceptNull),
            &stage2(&plan, Decision::RejectNull),
            &(),
            0.05,
            0.05,
        )
        .unwrap();
        assert_eq!(plan.second_alt(), R1);
        assert_eq!(run.outcome, Out1);
        assert!(run.stage2.is_some());
    }

    #[test]
    fn run_two_stage_rejects_mismatched_metadata() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let wrong = Const {
            decision: Decision::AcceptNull,
            null: plan.stage1_alt(),
            alt: plan.stage1_null(),
        };
        let err = run_two_stage(&plan, &wrong, &stage2(&plan, Decision::AcceptNull), &(), 0.05, 0.05).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let swapped = Const {
            decision: Decision::AcceptNull,
            null: RegionSet::single(plan.second_alt()),
            alt: RegionSet::single(plan.second_null()),
        };
        let err = run_two_stage(&plan, &stage1(&plan, Decision::AcceptNull), &swapped, &(), 0.05, 0.05).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn classify_error_cells() {
        assert_eq!(classify_error(Out0, R0), None);
        assert_eq!(classify_error(Out2, R1).map(|c| c.to_string()).as_deref(), Some("(2,1)"));
        assert_eq!(classify_error(Out1, R2).map(|c| c.to_string()).as_deref(), Some("(1,2)"));
        assert_eq!(ErrorCell::all().len(), 6);
    }

    #[test]
    fn sa_bound_table() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let rates = StageRates { alpha1: 0.05, beta1: 0.1, alpha2: 0.05, beta2: 0.1 };
        let m = analytic_bound_table(&plan, rates).unwrap();
        assert_eq!(m.get(Out2, R0), 0.1);
        assert_eq!(m.get(Out2, R1), 0.1);
        assert_eq!(m.get(Out0, R2), 0.05);
        assert_eq!(m.get(Out1, R2), 0.05);
        assert_eq!(m.get(Out1, R0), 0.05);
        assert_eq!(m.get(Out0, R1), 0.1);
        for o in TernaryOutcome::ALL {
            assert_eq!(m.get(o, RegionId::named_by(o)), 1.0);
        }
    }

    #[test]
    fn sn_bound_table() {
        let plan = TwoStagePlan::new(PlanKind::SN, R2, R0).unwrap();
        let rates = StageRates { alpha1: 0.05, beta1: 0.1, alpha2: 0.03, beta2: 0.2 };
        let m = analytic_bound_table(&plan, rates).unwrap();
        assert_eq!(m.get(Out2, R0), 0.05);
        assert_eq!(m.get(Out2, R1), 0.05);
        assert_eq!(m.get(Out0, R2), 0.1);
        assert_eq!(m.get(Out1, R2), 0.1);
        assert_eq!(m.get(Out1, R0), 0.03);
        assert_eq!(m.get(Out0, R1), 0.2);
    }

    #[test]
    fn zero_rates_give_zero_bounds() {
        let zero = StageRates { alpha1: 0.0, beta1: 0.0, alpha2: 0.0, beta2: 0.0 };
        for plan in TwoStagePlan::all() {
            let m = analytic_bound_table(&plan, zero).unwrap();
            assert!(ErrorCell::all().iter().all(|&c| m.cell(c) == 0.0));
        }
    }

    #[test]
    fn bound_table_rejects_bad_rate() {
        let plan = TwoStagePlan::all()[0];
        let rates = StageRates { alpha1: 1.5, beta1: 0.0, alpha2: 0.0, beta2: 0.0 };
        assert!(analytic_bound_table(&plan, rates).is_err());
    }

    #[test]
    fn twelve_distinct_plans() {
        let plans = TwoStagePlan::all();
        assert_eq!(plans.len(), 12);
        let set: std::collections::HashSet<_> = plans.iter().collect();
        assert_eq!(set.len(), 12);
    }

    #[test]
    fn plan_json_shape() {
        let plan = TwoStagePlan::new(PlanKind::SN, R1, R0).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, r#"{"kind":"SN","first":1,"second_null":0}"#);
        let back: TwoStagePlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        assert!(serde_json::from_str::<TwoStagePlan>(r#"{"kind":"SA","first":1,"second_null":1}"#).is_err());
    }

    #[test]
    fn matrix_json_is_row_major() {
        let plan = TwoStagePlan::new(PlanKind::SA, R2, R0).unwrap();
        let rates = StageRates { alpha1: 0.05, beta1: 0.1, alpha2: 0.05, beta2: 0.1 };
        let m = analytic_bound_table(&plan, rates).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[1.0,0.1,0.05,0.05,1.0,0.05,0.1,0.1,1.0]");
        assert_eq!(serde_json::from_str::<ErrorMatrix>(&json).unwrap(), m);
        assert!(serde_json::from_str::<ErrorMatrix>("[1.0]").is_err());
    }

    #[test]
    fn outcome_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Out2).unwrap(), "2");
        assert_eq!(serde_json::from_str::<TernaryOutcome>("1").unwrap(), Out1);
        assert!(serde_json::from_str::<TernaryOutcome>("3").is_err());
    }

    #[test]
    fn schedule_index_arithmetic() {
        let s = AlphaSchedule::new(vec![10, 100]).unwrap();
        assert_eq!(s.level_for(5), 1.0);
        assert_eq!(s.level_for(50), 1.0);
        assert_eq!(s.level_for(100), 1.0);
        assert_eq!(s.level_for(101), 0.5);
        assert_eq!(s.levels(), vec![1.0, 0.5]);
        let empty = AlphaSchedule::new(vec![]).unwrap();
        assert!((0..1000).all(|n| empty.level_for(n) == 1.0));
        assert!(AlphaSchedule::new(vec![10, 10]).is_err());
    }

    struct Obs(u64);
    impl SampleSize for Obs {
        fn sample_size(&self) -> u64 {
            self.0
        }
    }

    struct LevelEcho;
    impl BinaryTest<Obs> for LevelEcho {
        fn run(&self, _: &Obs, level: f64) -> Result<BinaryVerdict> {
            BinaryVerdict::from_p_value(0.4, level)
        }
        fn null_regions(&self) -> RegionSet {
            RegionSet::single(R0)
        }
        fn alt_regions(&self) -> RegionSet {
            RegionSet::of(&[R1, R2])
        }
    }

    #[test]
    fn scheduled_test_uses_schedule_level() {
        let wrapped = alpha_schedule_wrap(LevelEcho, AlphaSchedule::new(vec![10, 100, 1000]).unwrap());
        let v = wrapped.run(&Obs(50), 0.01).unwrap();
        assert_eq!(v.level, 1.0);
        assert!(v.rejected());
        let v = wrapped.run(&Obs(500), 0.01).unwrap();
        assert_eq!(v.level, 0.5);
        assert!(v.rejected());
        let v = wrapped.run(&Obs(5000), 0.01).unwrap();
        assert!((v.level - 1.0 / 3.0).abs() < 1e-15);
        assert!(!v.rejected());
        assert_eq!(wrapped.null_regions(), RegionSet::single(R0));
    }

    proptest! {
        #[test]
        fn schedule_level_nonincreasing(mut bps in proptest::collection::btree_set(1u64..100_000, 0..20), a in 0u64..200_000, b in 0u64..200_000) {
            let s = AlphaSchedule::new(std::mem::take(&mut bps).into_iter().collect()).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(s.level_for(hi) <= s.level_for(lo));
        }

        #[test]
        fn classify_is_off_diagonal(o in 0usize..3, t in 0usize..3) {
            let cell = classify_error(TernaryOutcome::from_index(o).unwrap(), RegionId::from_index(t).unwrap());
            prop_assert_eq!(cell.is_none(), o == t);
        }
    }

    #[test]
    fn schedule_level_vanishes() {
        let s = AlphaSchedule::new((1..=1000).map(|m| m * m).collect()).unwrap();
        assert!(s.level_for(u64::MAX) <= 1e-3);
    }
}
