//! Plan selection from declared region topology.
//!
//! The caller labels each truth region as closed, open, both or neither and
//! names the control set `I`: the regions whose error columns must be
//! controlled. Controlling the column of `R_j` needs `R_j` closed, so every
//! region in `I` must be declared closed.
//!
//! Recommendations come from a fixed decision table keyed on `|I|` and the
//! label pattern ([`table_leaves`]). Patterns the table does not cover fall
//! back to searching all twelve plans for the ones that meet the guarantee.
//! The cells a plan controls are derived from its bound table: a cell is
//! controlled when the constituent rate bounding it is controllable.
//!
//! * stage 1 (the pair covers the whole compact model space): `α1` needs a
//!   closed null, `β1` a closed alternative;
//! * stage 2: additionally needs the union of the two hypotheses closed,
//!   since rate control is only available on compact unions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ternary::{ErrorCell, PlanKind, RegionId, RegionSet, StageRate, TwoStagePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyLabel {
    #[serde(rename = "cno")]
    ClosedNotOpen,
    #[serde(rename = "onc")]
    OpenNotClosed,
    #[serde(rename = "clopen")]
    Clopen,
    #[serde(rename = "neither")]
    Neither,
}

impl TopologyLabel {
    pub const ALL: [TopologyLabel; 4] =
        [TopologyLabel::ClosedNotOpen, TopologyLabel::OpenNotClosed, TopologyLabel::Clopen, TopologyLabel::Neither];

    pub fn is_closed(self) -> bool {
        matches!(self, TopologyLabel::ClosedNotOpen | TopologyLabel::Clopen)
    }

    pub fn is_open(self) -> bool {
        matches!(self, TopologyLabel::OpenNotClosed | TopologyLabel::Clopen)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyLabel::ClosedNotOpen => "cno",
            TopologyLabel::OpenNotClosed => "onc",
            TopologyLabel::Clopen => "clopen",
            TopologyLabel::Neither => "neither",
        }
    }
}

impl FromStr for TopologyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopologyLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown topology label {s:?} (expected cno, onc, clopen or neither)")))
    }
}

impl fmt::Display for TopologyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parse a control set such as `"r0,r2"`; `""` and `"none"` are empty.
pub fn parse_control_set(s: &str) -> Result<RegionSet> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(RegionSet::EMPTY);
    }
    s.split(',').try_fold(RegionSet::EMPTY, |set, tok| {
        let region = match tok.trim().to_ascii_lowercase().as_str() {
            "r0" | "0" => RegionId::R0,
            "r1" | "1" => RegionId::R1,
            "r2" | "2" => RegionId::R2,
            other => return Err(Error::Validation(format!("unknown region {other:?} in control set"))),
        };
        Ok(set.with(region))
    })
}

/// Declared topology of the three regions plus the control set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvisorInput {
    labels: [TopologyLabel; 3],
    control: RegionSet,
}

impl AdvisorInput {
    pub fn new(labels: [TopologyLabel; 3], control: RegionSet) -> Result<Self> {
        for r in control.iter() {
            if !labels[r.index()].is_closed() {
                return Err(Error::Validation(format!(
                    "{r} is in the control set but labelled {}; column error control requires a closed region",
                    labels[r.index()]
                )));
            }
        }
        Ok(AdvisorInput { labels, control })
    }

    pub fn label(&self, r: RegionId) -> TopologyLabel {
        self.labels[r.index()]
    }

    pub fn labels(&self) -> [TopologyLabel; 3] {
        self.labels
    }

    pub fn control(&self) -> RegionSet {
        self.control
    }

    /// Closed relative to the whole space: every member closed, or every
    /// non-member open.
    pub fn is_closed(&self, set: RegionSet) -> bool {
        set.iter().all(|r| self.label(r).is_closed()) || set.complement().iter().all(|r| self.label(r).is_open())
    }

    /// The cells whose column the control set requires.
    pub fn required_cells(&self) -> BTreeSet<ErrorCell> {
        ErrorCell::all().into_iter().filter(|c| self.control.contains(c.truth())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Recommendation {
    pub plan: TwoStagePlan,
    pub preferred: bool,
    pub controlled_cells: Vec<ErrorCell>,
    /// Set when the stage-2 hypotheses do not form a compact union.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Decision-table branch this came from, or `"search"`.
    pub branch: String,
}

pub fn enumerate_plans() -> Vec<TwoStagePlan> {
    TwoStagePlan::all()
}

fn stage2_union(plan: &TwoStagePlan) -> RegionSet {
    RegionSet::of(&[plan.second_null(), plan.second_alt()])
}

/// The constituent rates the declared topology makes controllable.
pub fn controllable_rates(plan: &TwoStagePlan, input: &AdvisorInput) -> Vec<StageRate> {
    let stage2_compact = input.is_closed(stage2_union(plan));
    let mut rates = Vec::new();
    if input.is_closed(plan.stage1_null()) {
        rates.push(StageRate::Alpha1);
    }
    if input.is_closed(plan.stage1_alt()) {
        rates.push(StageRate::Beta1);
    }
    if stage2_compact && input.label(plan.second_null()).is_closed() {
        rates.push(StageRate::Alpha2);
    }
    if stage2_compact && input.label(plan.second_alt()).is_closed() {
        rates.push(StageRate::Beta2);
    }
    rates
}

pub fn controlled_cells(plan: &TwoStagePlan, input: &AdvisorInput) -> Vec<ErrorCell> {
    let rates = controllable_rates(plan, input);
    ErrorCell::all().into_iter().filter(|&c| rates.contains(&plan.bound_source(c))).collect()
}

fn recommend(plan: TwoStagePlan, preferred: bool, branch: &str, input: &AdvisorInput) -> Recommendation {
    let union = stage2_union(&plan);
    let warning = (!input.is_closed(union)).then(|| {
        format!("stage-2 hypotheses {union} are not compact; stage-2 error control needs a separate existence argument")
    });
    Recommendation { plan, preferred, controlled_cells: controlled_cells(&plan, input), warning, branch: branch.into() }
}

fn plan(kind: PlanKind, first: RegionId, second_null: RegionId) -> TwoStagePlan {
    TwoStagePlan::new(kind, first, second_null).expect("distinct regions")
}

fn others(r: RegionId) -> [RegionId; 2] {
    let mut it = RegionSet::single(r).complement().iter();
    [it.next().unwrap(), it.next().unwrap()]
}

type Leaf = (TwoStagePlan, bool);

/// Leaves of the plan-selection decision table for the input's branch, or
/// `None` when the table has no branch for the label pattern.
///
/// Branches, written as the labels of (the regions in `I`; the rest):
///
/// | `\|I\|` | pattern | leaves (`*` preferred) |
/// |---|---|---|
/// | 0 | some onc region `o` | `*` SN first=`o`, stage-2 null either |
/// | 0 | no onc region | none |
/// | 1 | (cno; onc, onc) | `*` SN first=either onc, null=cno; SA first=cno, null either |
/// | 1 | (cno; onc, neither) | `*` SN first=onc, null=cno; SA first=cno, null either |
/// | 1 | (clopen; neither, neither) | `*` SN first=clopen, null either; `*` SA first=clopen, null either |
/// | 1 | (cno; neither, neither) | `*` SA first=cno, null either |
/// | 2 | (cno, cno; onc or neither) | `*` SN first=third, null either |
/// | 2 | (clopen, cno; neither or onc) | `*` SA first=clopen, null=cno; `*` SN first=clopen, null=cno; SN first=third, null either |
/// | 3 | all closed | `*` all twelve |
pub fn table_leaves(input: &AdvisorInput) -> Option<(&'static str, Vec<Leaf>)> {
    use PlanKind::{SA, SN};
    use TopologyLabel::*;

    let control: Vec<RegionId> = input.control().iter().collect();
    let rest: Vec<RegionId> = input.control().complement().iter().collect();
    let lab = |r: RegionId| input.label(r);

    match control.len() {
        0 => {
            let open: Vec<RegionId> = RegionId::ALL.into_iter().filter(|&r| lab(r) == OpenNotClosed).collect();
            if open.is_empty() {
                return Some(("|I|=0: no open region", vec![]));
            }
            let leaves = open.iter().flat_map(|&o| others(o).map(|n| (plan(SN, o, n), true))).collect();
            Some(("|I|=0: open region", leaves))
        }
        1 => {
            let c = control[0];
            let (a, b) = (rest[0], rest[1]);
            let sa_either = || others(c).map(|n| plan(SA, c, n));
            let sn_either = || others(c).map(|n| plan(SN, c, n));
            match (lab(c), lab(a), lab(b)) {
                (ClosedNotOpen, OpenNotClosed, OpenNotClosed) => {
                    let mut leaves = vec![(plan(SN, a, c), true), (plan(SN, b, c), true)];
                    leaves.extend(sa_either().map(|p| (p, false)));
                    Some(("|I|=1: (cno; onc, onc)", leaves))
                }
                (ClosedNotOpen, la, lb) if matches!((la, lb), (OpenNotClosed, Neither) | (Neither, OpenNotClosed)) => {
                    let open = if la == OpenNotClosed { a } else { b };
                    let mut leaves = vec![(plan(SN, open, c), true)];
                    leaves.extend(sa_either().map(|p| (p, false)));
                    Some(("|I|=1: (cno; onc, neither)", leaves))
                }
                (Clopen, Neither, Neither) => {
                    let leaves = sn_either().into_iter().chain(sa_either()).map(|p| (p, true)).collect();
                    Some(("|I|=1: (clopen; neither, neither)", leaves))
                }
                (ClosedNotOpen, Neither, Neither) => {
                    Some(("|I|=1: (cno; neither, neither)", sa_either().map(|p| (p, true)).to_vec()))
                }
                _ => None,
            }
        }
        2 => {
            let (c1, c2, t) = (control[0], control[1], rest[0]);
            match (lab(c1), lab(c2), lab(t)) {
                (ClosedNotOpen, ClosedNotOpen, OpenNotClosed | Neither) => {
                    let leaves = others(t).map(|n| (plan(SN, t, n), true)).to_vec();
                    Some(("|I|=2: (cno, cno; onc or neither)", leaves))
                }
                (l1, l2, Neither | OpenNotClosed)
                    if matches!((l1, l2), (Clopen, ClosedNotOpen) | (ClosedNotOpen, Clopen)) =>
                {
                    let (co, cno) = if l1 == Clopen { (c1, c2) } else { (c2, c1) };
                    let mut leaves = vec![(plan(SA, co, cno), true), (plan(SN, co, cno), true)];
                    leaves.extend(others(t).map(|n| (plan(SN, t, n), false)));
                    Some(("|I|=2: (clopen, cno; neither or onc)", leaves))
                }
                _ => None,
            }
        }
        _ => Some(("|I|=3: all closed", enumerate_plans().into_iter().map(|p| (p, true)).collect())),
    }
}

/// Recommended two-stage plans for the declared topology.
pub fn advise(input: &AdvisorInput) -> Vec<Recommendation> {
    if let Some((branch, leaves)) = table_leaves(input) {
        return leaves.into_iter().map(|(p, pref)| recommend(p, pref, branch, input)).collect();
    }
    let required = input.required_cells();
    let mut candidates: Vec<Recommendation> = enumerate_plans()
        .into_iter()
        .map(|p| recommend(p, false, "search", input))
        .filter(|r| required.iter().all(|c| r.controlled_cells.contains(c)))
        .collect();
    let best = candidates.iter().map(|r| r.controlled_cells.len()).max().unwrap_or(0);
    for r in &mut candidates {
        r.preferred = r.controlled_cells.len() == best;
    }
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ternary::TernaryOutcome;
    use PlanKind::*;
    use RegionId::*;
    use TopologyLabel::*;

    fn cells(list: &[(usize, usize)]) -> Vec<ErrorCell> {
        let mut v: Vec<ErrorCell> = list
            .iter()
            .map(|&(o, t)| ErrorCell::new(TernaryOutcome::from_index(o).unwrap(), RegionId::from_index(t).unwrap()).unwrap())
            .collect();
        v.sort();
        v
    }

    #[test]
    fn iv_topology_recommendation() {
        let input = AdvisorInput::new([Neither, OpenNotClosed, ClosedNotOpen], RegionSet::single(R2)).unwrap();
        let recs = advise(&input);
        let preferred: Vec<_> = recs.iter().filter(|r| r.preferred).collect();
        assert_eq!(preferred.len(), 1);
        assert_eq!(preferred[0].plan, plan(SN, R1, R2));
        assert_eq!(preferred[0].controlled_cells, cells(&[(1, 0), (0, 2), (1, 2)]));
        assert!(preferred[0].warning.is_none());
        let sa = recs.iter().find(|r| r.plan == plan(SA, R2, R0)).expect("positivity-first plan listed");
        assert!(!sa.preferred);
        assert!(sa.warning.is_some());
    }

    #[test]
    fn tec_topology_recommendation() {
        let input = AdvisorInput::new([ClosedNotOpen, OpenNotClosed, Neither], RegionSet::single(R0)).unwrap();
        let recs = advise(&input);
        let preferred: Vec<_> = recs.iter().filter(|r| r.preferred).collect();
        assert_eq!(preferred.len(), 1);
        assert_eq!(preferred[0].plan, plan(SN, R1, R0));
        assert_eq!(preferred[0].controlled_cells, cells(&[(1, 0), (2, 0), (1, 2)]));
    }

    #[test]
    fn all_closed_gives_all_twelve() {
        let input = AdvisorInput::new([ClosedNotOpen, Clopen, ClosedNotOpen], RegionSet::ALL).unwrap();
        let recs = advise(&input);
        assert_eq!(recs.len(), 12);
        assert!(recs.iter().all(|r| r.preferred && r.controlled_cells.len() == 6));
    }

    #[test]
    fn no_open_region_gives_nothing() {
        let input = AdvisorInput::new([Neither, Neither, Neither], RegionSet::EMPTY).unwrap();
        assert!(advise(&input).is_empty());
    }

    #[test]
    fn control_set_must_be_closed() {
        let err = AdvisorInput::new([Neither, OpenNotClosed, ClosedNotOpen], RegionSet::single(R1)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn parse_inputs() {
        assert_eq!("CNO".parse::<TopologyLabel>().unwrap(), ClosedNotOpen);
        assert!("closed".parse::<TopologyLabel>().is_err());
        assert_eq!(parse_control_set("r0, R2").unwrap(), RegionSet::of(&[R0, R2]));
        assert_eq!(parse_control_set("none").unwrap(), RegionSet::EMPTY);
        assert!(parse_control_set("r3").is_err());
    }

    #[test]
    fn unlisted_pattern_falls_back_to_search() {
        let input = AdvisorInput::new([ClosedNotOpen, ClosedNotOpen, OpenNotClosed], RegionSet::single(R0)).unwrap();
        assert!(table_leaves(&input).is_none());
        let recs = advise(&input);
        assert!(!recs.is_empty());
        assert!(recs.iter().all(|r| r.branch == "search"));
        assert!(recs.iter().any(|r| r.preferred));
    }

    #[test]
    fn every_recommendation_controls_the_requested_columns() {
        for l0 in TopologyLabel::ALL {
            for l1 in TopologyLabel::ALL {
                for l2 in TopologyLabel::ALL {
                    for mask in 0u8..8 {
                        let control = RegionId::ALL
                            .into_iter()
                            .filter(|r| mask & (1 << r.index()) != 0)
                            .fold(RegionSet::EMPTY, RegionSet::with);
                        let Ok(input) = AdvisorInput::new([l0, l1, l2], control) else { continue };
                        let required = input.required_cells();
                        for rec in advise(&input) {
                            for cell in &required {
                                assert!(
                                    rec.controlled_cells.contains(cell),
                                    "{:?} {control} {:?} misses {cell}",
                                    [l0, l1, l2],
                                    rec.plan
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn closedness_of_unions() {
        let input = AdvisorInput::new([ClosedNotOpen, OpenNotClosed, Neither], RegionSet::EMPTY).unwrap();
        assert!(input.is_closed(RegionSet::of(&[R0, R2])));
        assert!(!input.is_closed(RegionSet::of(&[R1, R2])));
        assert!(input.is_closed(RegionSet::ALL));
        assert!(!input.is_closed(RegionSet::single(R2)));
    }
}
