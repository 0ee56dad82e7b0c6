//! The two end-to-end ternary procedures and their population-level region
//! classifiers.
//!
//! * Treatment efficacy comparison: is `P(Y=1 | do(X=1)) >= c`? Runs as an
//!   SN plan with `first = R1`, stage-2 null `R0` and alternative `R2`.
//! * IV inequalities: does `P(X, Y | do(Z))` satisfy the IV inequalities?
//!   Runs as an SA plan with `first = R2` (positivity violated), stage-2
//!   null `R0` and alternative `R1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{
    iv_lhs, manski_bounds, CellProportionTest, ConditionalKernel, ContingencyTable, IvInequalityTest, ManskiInterval,
    PositivityTest, Tail,
};
use crate::ternary::{run_two_stage, BinaryVerdict, PlanKind, RegionId, RegionSet, TernaryOutcome, TwoStagePlan};

/// Slack used when comparing `iv_lhs` with 1 and when validating joint
/// probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

pub fn tec_plan() -> TwoStagePlan {
    TwoStagePlan::new(PlanKind::SN, RegionId::R1, RegionId::R0).expect("valid plan")
}

pub fn iv_plan() -> TwoStagePlan {
    TwoStagePlan::new(PlanKind::SA, RegionId::R2, RegionId::R0).expect("valid plan")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TecResult {
    pub outcome: TernaryOutcome,
    pub stage1: BinaryVerdict,
    pub stage2: Option<BinaryVerdict>,
    pub manski: ManskiInterval,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IvResult {
    pub outcome: TernaryOutcome,
    pub positivity: BinaryVerdict,
    pub iv: Option<BinaryVerdict>,
    /// `iv_lhs` of the empirical kernel; absent when some z is unobserved.
    pub statistic: Option<f64>,
}

fn check_threshold(c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::Domain(format!("threshold c = {c} outside [0, 1]")))
    }
}

/// The two exact binomial stage tests of the efficacy procedure.
pub fn tec_stage_tests(c: f64) -> (CellProportionTest, CellProportionTest) {
    let stage1 = CellProportionTest {
        x: 1,
        y: 0,
        p0: 1.0 - c,
        tail: Tail::Upper,
        null: RegionSet::of(&[RegionId::R0, RegionId::R2]),
        alt: RegionSet::single(RegionId::R1),
    };
    let stage2 = CellProportionTest {
        x: 1,
        y: 1,
        p0: c,
        tail: Tail::Lower,
        null: RegionSet::single(RegionId::R0),
        alt: RegionSet::single(RegionId::R2),
    };
    (stage1, stage2)
}

/// Ternary test of `P(Y=1 | do(X=1)) >= c` from a binary (X, Y) table.
///
/// Stage 1 tests `P(X=1, Y=0) <= 1 - c` with an upper-tail binomial test;
/// rejection gives `Out1`. Otherwise stage 2 tests `P(X=1, Y=1) >= c` with a
/// lower-tail binomial test; rejection gives `Out2`, acceptance `Out0`.
pub fn tec_ternary(table: &ContingencyTable, c: f64, alpha1: f64, alpha2: f64) -> Result<TecResult> {
    check_threshold(c)?;
    let manski = manski_bounds(table)?;
    let (phi1, phi2) = tec_stage_tests(c);
    let run = run_two_stage(&tec_plan(), &phi1, &phi2, table, alpha1, alpha2)?;
    Ok(TecResult { outcome: run.outcome, stage1: run.stage1, stage2: run.stage2, manski, c })
}

/// Ternary test of the IV inequalities from a (Z, X, Y) table with binary Z.
///
/// An unobserved instrument value gives `Out2`. Otherwise the bootstrap IV
/// test runs on the same table; rejection gives `Out1`, acceptance `Out0`.
pub fn iv_ternary(table: &ContingencyTable, alpha: f64, replicates: usize, seed: u64) -> Result<IvResult> {
    match table.card().z {
        Some(2) => {}
        Some(nz) => return Err(Error::Schema(format!("the instrument must be binary, got |Z| = {nz}"))),
        None => return Err(Error::Schema("IV procedure needs a Z axis".into())),
    }
    if table.total() == 0 {
        return Err(Error::Domain("empty table".into()));
    }
    let run = run_two_stage(&iv_plan(), &PositivityTest, &IvInequalityTest { replicates, seed }, table, alpha, alpha)?;
    let statistic = match run.stage2 {
        Some(_) => Some(iv_lhs(&ConditionalKernel::from_table(table)?)),
        None => None,
    };
    Ok(IvResult { outcome: run.outcome, positivity: run.stage1, iv: run.stage2, statistic })
}

fn check_joint(p11: f64, p10: f64, c: f64) -> Result<()> {
    check_threshold(c)?;
    let ok = |p: f64| (0.0..=1.0).contains(&p);
    if !ok(p11) || !ok(p10) || p11 + p10 > 1.0 + PROBABILITY_TOLERANCE {
        return Err(Error::Domain(format!("invalid probabilities P(X=1,Y=1)={p11}, P(X=1,Y=0)={p10}")));
    }
    Ok(())
}

/// Ground-truth efficacy region of a joint with `p11 = P(X=1, Y=1)` and
/// `p10 = P(X=1, Y=0)`.
///
/// `R1` when `p10 > 1 - c`, else `R0` when `p11 >= c`, else `R2`. Both
/// boundaries belong to the null.
pub fn tec_region_of(p11: f64, p10: f64, c: f64) -> Result<RegionId> {
    check_joint(p11, p10, c)?;
    Ok(if p10 > 1.0 - c {
        RegionId::R1
    } else if p11 >= c {
        RegionId::R0
    } else {
        RegionId::R2
    })
}

/// Like [`tec_region_of`], but `None` when the joint lies within `margin`
/// of either region boundary (`p10 = 1 - c` or `p11 = c`).
pub fn tec_region_with_margin(p11: f64, p10: f64, c: f64, margin: f64) -> Result<Option<RegionId>> {
    let region = tec_region_of(p11, p10, c)?;
    if margin > 0.0 && ((p10 - (1.0 - c)).abs() < margin || (p11 - c).abs() < margin) {
        return Ok(None);
    }
    Ok(Some(region))
}

/// Ground-truth IV region from the interventional kernel and the marginal
/// of Z.
///
/// An instrument value with zero mass leaves its kernel slice unconstrained
/// by observational data, which is exactly `R2`.
pub fn iv_region_of(kernel: &ConditionalKernel, pz: &[f64]) -> Result<RegionId> {
    let (_, _, nz) = kernel.dims();
    if pz.len() != nz {
        return Err(Error::Domain(format!("expected {nz} instrument probabilities, got {}", pz.len())));
    }
    let total: f64 = pz.iter().sum();
    if pz.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("instrument marginal must be a probability vector".into()));
    }
    Ok(if pz.contains(&0.0) {
        RegionId::R2
    } else if iv_lhs(kernel) > 1.0 + PROBABILITY_TOLERANCE {
        RegionId::R1
    } else {
        RegionId::R0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{binom_pvalue_lower, binom_pvalue_upper, Card};
    use crate::ternary::{compose_two_stage, Decision};
    use proptest::prelude::*;
    use RegionId::*;
    use TernaryOutcome::*;

    #[test]
    fn tec_zero_threshold_never_rejects() {
        for t in [
            ContingencyTable::binary_xy(0, 0, 100, 0),
            ContingencyTable::binary_xy(3, 9, 1, 0),
            ContingencyTable::binary_xy(0, 0, 0, 5),
        ] {
            assert_eq!(tec_ternary(&t, 0.0, 0.025, 0.025).unwrap().outcome, Out0);
        }
    }

    #[test]
    fn tec_all_treated_failures() {
        let t = ContingencyTable::binary_xy(0, 0, 100, 0);
        let r = tec_ternary(&t, 0.5, 0.025, 0.025).unwrap();
        assert_eq!(r.outcome, Out1);
        assert!((r.stage1.p_value - 0.5f64.powi(100)).abs() < 1e-40);
        assert!(r.stage2.is_none());
    }

    #[test]
    fn tec_all_treated_successes() {
        let t = ContingencyTable::binary_xy(0, 0, 0, 100);
        let r = tec_ternary(&t, 0.5, 0.025, 0.025).unwrap();
        assert_eq!(r.outcome, Out0);
        assert_eq!(r.stage1.p_value, 1.0);
        assert_eq!(r.stage2.unwrap().p_value, 1.0);
    }

    #[test]
    fn tec_unidentifiable_case() {
        // half untreated, treated split evenly: Manski bounds [0.25, 0.75]
        let t = ContingencyTable::binary_xy(250, 250, 250, 250);
        let r = tec_ternary(&t, 0.5, 0.025, 0.025).unwrap();
        assert_eq!(r.outcome, Out2);
        assert_eq!(r.manski, ManskiInterval { lower: 0.25, upper: 0.75 });
    }

    #[test]
    fn tec_bad_threshold() {
        let t = ContingencyTable::binary_xy(1, 1, 1, 1);
        assert!(matches!(tec_ternary(&t, 1.2, 0.05, 0.05), Err(Error::Domain(_))));
        assert!(matches!(tec_ternary(&t, -0.1, 0.05, 0.05), Err(Error::Domain(_))));
    }

    fn zxy(s0: [u64; 4], s1: [u64; 4]) -> ContingencyTable {
        ContingencyTable::new(Card { z: Some(2), x: 2, y: 2 }, [s0, s1].concat()).unwrap()
    }

    #[test]
    fn iv_missing_instrument_value() {
        let r = iv_ternary(&zxy([4, 3, 2, 1], [0; 4]), 0.05, 200, 1).unwrap();
        assert_eq!(r.outcome, Out2);
        assert!(r.iv.is_none());
        assert!(r.statistic.is_none());
        assert_eq!(r.positivity.decision, Decision::AcceptNull);
    }

    #[test]
    fn iv_violation_detected() {
        let r = iv_ternary(&zxy([1000, 0, 0, 0], [0, 1000, 0, 0]), 0.05, 500, 1).unwrap();
        assert_eq!(r.outcome, Out1);
        assert_eq!(r.statistic, Some(2.0));
    }

    #[test]
    fn iv_requires_binary_instrument() {
        let t = ContingencyTable::new(Card { z: Some(3), x: 1, y: 1 }, vec![1, 1, 1]).unwrap();
        assert!(iv_ternary(&t, 0.05, 200, 1).is_err());
        assert!(iv_ternary(&ContingencyTable::binary_xy(1, 1, 1, 1), 0.05, 200, 1).is_err());
    }

    #[test]
    fn tec_region_examples() {
        assert_eq!(tec_region_of(0.6, 0.1, 0.5).unwrap(), R0);
        assert_eq!(tec_region_of(0.1, 0.6, 0.5).unwrap(), R1);
        assert_eq!(tec_region_of(0.2, 0.1, 0.5).unwrap(), R2);
        assert_eq!(tec_region_of(0.5, 0.5, 0.5).unwrap(), R0);
        assert_eq!(tec_region_of(0.3, 0.2, 0.3).unwrap(), R0);
        assert!(tec_region_of(0.6, 0.6, 0.5).is_err());
        assert!(tec_region_of(0.1, 0.1, 2.0).is_err());
    }

    #[test]
    fn margin_excludes_boundary_band() {
        assert_eq!(tec_region_with_margin(0.51, 0.1, 0.5, 0.02).unwrap(), None);
        assert_eq!(tec_region_with_margin(0.1, 0.49, 0.5, 0.02).unwrap(), None);
        assert_eq!(tec_region_with_margin(0.6, 0.1, 0.5, 0.02).unwrap(), Some(R0));
        assert_eq!(tec_region_with_margin(0.5, 0.1, 0.5, 0.0).unwrap(), Some(R0));
    }

    #[test]
    fn iv_region_examples() {
        let mut v = vec![0.0; 8];
        v[0] = 1.0;
        v[5] = 1.0;
        let violating = ConditionalKernel::new(2, 2, 2, v).unwrap();
        assert_eq!(iv_region_of(&violating, &[1.0, 0.0]).unwrap(), R2);
        assert_eq!(iv_region_of(&violating, &[0.5, 0.5]).unwrap(), R1);
        let s = [0.1, 0.2, 0.3, 0.4];
        let indep = ConditionalKernel::new(2, 2, 2, [s, s].concat()).unwrap();
        assert_eq!(iv_region_of(&indep, &[0.5, 0.5]).unwrap(), R0);
        assert!(iv_region_of(&indep, &[0.5, 0.6]).is_err());
    }

    fn direct_tec(t: &ContingencyTable, c: f64, a1: f64, a2: f64) -> TernaryOutcome {
        let n = t.total();
        let p1 = binom_pvalue_upper(t.count(0, 1, 0), n, 1.0 - c).unwrap();
        let v1 = BinaryVerdict::from_p_value(p1, a1).unwrap();
        let v2 = BinaryVerdict::from_p_value(binom_pvalue_lower(t.count(0, 1, 1), n, c).unwrap(), a2).unwrap();
        compose_two_stage(&tec_plan(), &v1, Some(&v2)).unwrap()
    }

    proptest! {
        #[test]
        fn tec_matches_direct_composition(
            n00 in 0u64..40, n01 in 0u64..40, n10 in 0u64..40, n11 in 0u64..40,
            c in 0.0f64..=1.0, a1 in 0.001f64..0.2, a2 in 0.001f64..0.2,
        ) {
            prop_assume!(n00 + n01 + n10 + n11 > 0);
            let t = ContingencyTable::binary_xy(n00, n01, n10, n11);
            let r = tec_ternary(&t, c, a1, a2).unwrap();
            prop_assert_eq!(r.outcome, direct_tec(&t, c, a1, a2));
            prop_assert_eq!(r.stage2.is_none(), r.stage1.rejected());
        }

        #[test]
        fn tec_regions_partition(p11 in 0.0f64..=1.0, share in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let p10 = (1.0 - p11) * share;
            let in_r1 = p10 > 1.0 - c;
            let in_r0 = !in_r1 && p11 >= c;
            let in_r2 = !in_r1 && p11 < c;
            prop_assert_eq!([in_r0, in_r1, in_r2].iter().filter(|&&b| b).count(), 1);
            let expected = if in_r0 { R0 } else if in_r1 { R1 } else { R2 };
            prop_assert_eq!(tec_region_of(p11, p10, c).unwrap(), expected);
        }
    }
}
