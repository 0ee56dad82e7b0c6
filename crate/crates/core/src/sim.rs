//! Monte-Carlo study of the efficacy procedure on random structural models.
//!
//! A binary-treatment, binary-outcome model is fixed by the joint law of the
//! exogenous pair `(U_x, U_y)`, where `U_y` picks one of the four response
//! functions `{0, 1} -> {0, 1}`. Each study unit draws that law from a
//! symmetric Dirichlet, labels its efficacy region exactly, then runs the
//! ternary test (and optionally the naive Manski baseline) on i.i.d.
//! samples of `(X, Y)`.
//!
//! Every distribution owns its random stream `(seed, index)`, and curves are
//! aggregated in index order, so output does not depend on thread count.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procedures::{tec_region_with_margin, tec_ternary};
use crate::sampling::{multinomial, unit_rng};
use crate::stats::{naive_manski_ternary, ContingencyTable};
use crate::ternary::{
    check_level, run_two_stage, BinaryTest, BinaryVerdict, ErrorMatrix, RegionId, RegionSet, TernaryOutcome,
    TwoStagePlan,
};

/// Response function of `Y` to a binary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseFunction {
    Const0,
    Const1,
    Identity,
    Negation,
}

impl ResponseFunction {
    pub const ALL: [ResponseFunction; 4] =
        [ResponseFunction::Const0, ResponseFunction::Const1, ResponseFunction::Identity, ResponseFunction::Negation];

    pub fn apply(self, x: usize) -> usize {
        match self {
            ResponseFunction::Const0 => 0,
            ResponseFunction::Const1 => 1,
            ResponseFunction::Identity => x,
            ResponseFunction::Negation => 1 - x,
        }
    }
}

/// Number of `(u_x, u_y)` atoms.
pub const ATOMS: usize = 8;

/// Atom index of `(u_x, u_y)`.
pub fn atom(u_x: usize, u_y: ResponseFunction) -> usize {
    u_x * 4 + u_y as usize
}

/// Law of `(U_x, U_y)` over the eight atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ResponseFunctionDist {
    probs: [f64; ATOMS],
}

impl ResponseFunctionDist {
    pub fn new(probs: [f64; ATOMS]) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("atom probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("atom probabilities sum to {total}, not 1")));
        }
        Ok(ResponseFunctionDist { probs })
    }

    pub fn point_mass(u_x: usize, u_y: ResponseFunction) -> Self {
        let mut probs = [0.0; ATOMS];
        probs[atom(u_x, u_y)] = 1.0;
        ResponseFunctionDist { probs }
    }

    pub fn uniform() -> Self {
        ResponseFunctionDist { probs: [1.0 / ATOMS as f64; ATOMS] }
    }

    pub fn probs(&self) -> &[f64; ATOMS] {
        &self.probs
    }
}

impl TryFrom<Vec<f64>> for ResponseFunctionDist {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let probs: [f64; ATOMS] =
            v.try_into().map_err(|v: Vec<f64>| Error::Domain(format!("expected {ATOMS} atoms, got {}", v.len())))?;
        ResponseFunctionDist::new(probs)
    }
}

impl From<ResponseFunctionDist> for Vec<f64> {
    fn from(d: ResponseFunctionDist) -> Self {
        d.probs.to_vec()
    }
}

/// Symmetric Dirichlet draw on the eight atoms.
///
/// Small concentrations make plain Gamma draws underflow to zero, so each
/// component is drawn as `log G = log G' + ln(U) / a` with
/// `G' ~ Gamma(a + 1)` and normalised with log-sum-exp.
pub fn sample_response_dist<R: Rng + ?Sized>(rng: &mut R, concentration: f64) -> Result<ResponseFunctionDist> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::Domain(format!("Dirichlet concentration {concentration} must be positive")));
    }
    let gamma = Gamma::new(concentration + 1.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut logs = [0.0f64; ATOMS];
    for l in &mut logs {
        let g: f64 = gamma.sample(rng);
        let u: f64 = rng.random::<f64>();
        // `random` is in [0, 1); reflect so the log is finite.
        *l = g.ln() + (1.0 - u).ln() / concentration;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logs.map(|l| (l - max).exp());
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(ResponseFunctionDist { probs })
}

/// Exact joint of `(X, Y)` as `[p00, p01, p10, p11]`, indexed `2x + y`.
pub fn joint_from_response(d: &ResponseFunctionDist) -> [f64; 4] {
    let mut joint = [0.0; 4];
    for x in 0..2 {
        for f in ResponseFunction::ALL {
            joint[2 * x + f.apply(x)] += d.probs[atom(x, f)];
        }
    }
    joint
}

fn default_concentration() -> f64 {
    0.125
}

fn default_naive_level() -> f64 {
    0.975
}

fn default_replicates() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_dist: usize,
    pub sample_sizes: Vec<u64>,
    pub c_values: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default = "default_concentration")]
    pub dirichlet_concentration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boundary_margin: f64,
    #[serde(default = "default_true")]
    pub include_naive: bool,
    #[serde(default = "default_naive_level")]
    pub naive_level: f64,
    /// Samples drawn per distribution and sample size.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_dist: 1000,
            sample_sizes: vec![50, 100, 200, 500, 1000, 2000, 5000],
            c_values: vec![0.3, 0.6],
            alpha1: 0.025,
            alpha2: 0.025,
            dirichlet_concentration: default_concentration(),
            seed: 0,
            boundary_margin: 0.0,
            include_naive: true,
            naive_level: default_naive_level(),
            replicates: default_replicates(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_dist == 0 {
            return bad("n_dist must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] == 0 {
            return bad("sample_sizes must be nonempty and at least 1".into());
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample_sizes must be strictly ascending".into());
        }
        if self.c_values.is_empty() || self.c_values.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("c_values must be nonempty and within [0, 1]".into());
        }
        for (name, level) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("naive_level", self.naive_level)] {
            if !(level > 0.0 && level < 1.0) {
                return bad(format!("{name} = {level} must lie in (0, 1)"));
            }
        }
        if !(self.dirichlet_concentration > 0.0 && self.dirichlet_concentration.is_finite()) {
            return bad("dirichlet_concentration must be positive".into());
        }
        if self.boundary_margin.is_nan() || self.boundary_margin < 0.0 {
            return bad("boundary_margin must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ternary,
    Naive,
}

/// One point of a PCD curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcdRow {
    pub c: f64,
    #[serde(serialize_with = "region_name")]
    pub region: RegionId,
    pub n: u64,
    pub pcd: f64,
    pub count: usize,
    pub stderr: f64,
    pub method: Method,
}

fn region_name<S: serde::Serializer>(r: &RegionId, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(r)
}

/// Mean probability of correct detection per `(c, region, n)`. Regions with
/// no contributing distribution are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcdCurve {
    pub rows: Vec<PcdRow>,
}

/// Outcome counts over all distributions and replicates of one truth region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutcomeTally {
    pub method: Method,
    pub c_index: usize,
    pub n: u64,
    pub truth: RegionId,
    pub counts: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcdStudy {
    pub ternary: PcdCurve,
    pub naive: Option<PcdCurve>,
    pub tallies: Vec<OutcomeTally>,
    /// Distributions dropped by the boundary margin, per c value.
    pub excluded: Vec<usize>,
}

impl PcdStudy {
    /// Empirical outcome frequencies per truth column. Columns without any
    /// contributing distribution are zero.
    pub fn error_matrix(&self, method: Method, c_index: usize, n: u64) -> Result<ErrorMatrix> {
        let mut rows = [[0.0; 3]; 3];
        for t in self.tallies.iter().filter(|t| t.method == method && t.c_index == c_index && t.n == n) {
            let total: u64 = t.counts.iter().sum();
            if total == 0 {
                continue;
            }
            for (o, &k) in t.counts.iter().enumerate() {
                rows[o][t.truth.index()] = k as f64 / total as f64;
            }
        }
        ErrorMatrix::from_rows(rows)
    }

    /// Both curves in the CSV layout `c,region,n,pcd,count,stderr,method`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.ternary.rows.iter().chain(self.naive.iter().flat_map(|c| &c.rows)) {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-distribution results: region per c, and outcome counts per
/// `(c, n)` for each method.
struct UnitResult {
    regions: Vec<Option<RegionId>>,
    ternary: Vec<[u64; 3]>,
    naive: Vec<[u64; 3]>,
}

fn evaluate_unit<R: Rng + ?Sized>(cfg: &SimConfig, dist: &ResponseFunctionDist, rng: &mut R) -> Result<UnitResult> {
    let joint = joint_from_response(dist);
    let regions = cfg
        .c_values
        .iter()
        .map(|&c| tec_region_with_margin(joint[3], joint[2], c, cfg.boundary_margin))
        .collect::<Result<Vec<_>>>()?;
    let cells = cfg.c_values.len() * cfg.sample_sizes.len();
    let mut ternary = vec![[0u64; 3]; cells];
    let mut naive = vec![[0u64; 3]; cells];
    for (ci, &c) in cfg.c_values.iter().enumerate() {
        for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
            for _ in 0..cfg.replicates {
                let k = multinomial(rng, n, &joint);
                let table = ContingencyTable::binary_xy(k[0], k[1], k[2], k[3]);
                let cell = ci * cfg.sample_sizes.len() + ni;
                let outcome = tec_ternary(&table, c, cfg.alpha1, cfg.alpha2)?.outcome;
                ternary[cell][outcome.index()] += 1;
                if cfg.include_naive {
                    naive[cell][naive_manski_ternary(&table, c, cfg.naive_level)?.index()] += 1;
                }
            }
        }
    }
    Ok(UnitResult { regions, ternary, naive })
}

/// Sum with a fixed pairwise association order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

fn aggregate(cfg: &SimConfig, units: &[UnitResult], method: Method) -> (PcdCurve, Vec<OutcomeTally>) {
    let mut rows = Vec::new();
    let mut tallies = Vec::new();
    let reps = cfg.replicates as f64;
    for (ci, &c) in cfg.c_values.iter().enumerate() {
        for region in RegionId::ALL {
            for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
                let cell = ci * cfg.sample_sizes.len() + ni;
                let mut counts = [0u64; 3];
                let mut pcds = Vec::new();
                for u in units.iter().filter(|u| u.regions[ci] == Some(region)) {
                    let k = match method {
                        Method::Ternary => u.ternary[cell],
                        Method::Naive => u.naive[cell],
                    };
                    for (t, x) in counts.iter_mut().zip(k) {
                        *t += x;
                    }
                    pcds.push(k[TernaryOutcome::naming(region).index()] as f64 / reps);
                }
                tallies.push(OutcomeTally { method, c_index: ci, n, truth: region, counts });
                if pcds.is_empty() {
                    continue;
                }
                let (pcd, stderr) = mean_and_stderr(&pcds);
                rows.push(PcdRow { c, region, n, pcd, count: pcds.len(), stderr, method });
            }
        }
    }
    (PcdCurve { rows }, tallies)
}

fn study_from_units(cfg: &SimConfig, units: Vec<UnitResult>) -> PcdStudy {
    let (ternary, mut tallies) = aggregate(cfg, &units, Method::Ternary);
    let naive = cfg.include_naive.then(|| {
        let (curve, t) = aggregate(cfg, &units, Method::Naive);
        tallies.extend(t);
        curve
    });
    let excluded = (0..cfg.c_values.len()).map(|ci| units.iter().filter(|u| u.regions[ci].is_none()).count()).collect();
    PcdStudy { ternary, naive, tallies, excluded }
}

/// Run the study on `cfg.n_dist` Dirichlet-drawn distributions.
pub fn run_pcd_study(cfg: &SimConfig) -> Result<PcdStudy> {
    cfg.validate()?;
    let units = (0..cfg.n_dist)
        .into_par_iter()
        .map(|i| {
            let mut rng = unit_rng(cfg.seed, i as u64);
            let dist = sample_response_dist(&mut rng, cfg.dirichlet_concentration)?;
            evaluate_unit(cfg, &dist, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(study_from_units(cfg, units))
}

/// Run the study on given distributions instead of Dirichlet draws;
/// `cfg.n_dist` and the concentration are ignored.
pub fn run_pcd_study_on(cfg: &SimConfig, dists: &[ResponseFunctionDist]) -> Result<PcdStudy> {
    SimConfig { n_dist: dists.len().max(1), ..cfg.clone() }.validate()?;
    let units = dists
        .par_iter()
        .enumerate()
        .map(|(i, d)| evaluate_unit(cfg, d, &mut unit_rng(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(study_from_units(cfg, units))
}

/// Sample fed to [`SyntheticBinaryTest`]: the true region and a trial key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticDraw {
    pub truth: RegionId,
    pub trial: u64,
}

/// Binary test with known error rates that ignores data.
///
/// Rejects with probability `alpha_true` when the truth is in its null,
/// accepts with probability `beta_true` when it is in its alternative, and
/// flips a fair coin otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticBinaryTest {
    pub alpha_true: f64,
    pub beta_true: f64,
    pub null: RegionSet,
    pub alt: RegionSet,
    pub seed: u64,
}

impl SyntheticBinaryTest {
    pub fn new(alpha_true: f64, beta_true: f64, null: RegionSet, alt: RegionSet, seed: u64) -> Result<Self> {
        for (name, r) in [("alpha_true", alpha_true), ("beta_true", beta_true)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!("{name} = {r} outside [0, 1]")));
            }
        }
        Ok(SyntheticBinaryTest { alpha_true, beta_true, null, alt, seed })
    }

    /// Stage tests matching `plan`, with seeds `seed` and `seed + 1`.
    pub fn for_plan(
        plan: &TwoStagePlan,
        (alpha1, beta1): (f64, f64),
        (alpha2, beta2): (f64, f64),
        seed: u64,
    ) -> Result<(Self, Self)> {
        let s1 = SyntheticBinaryTest::new(alpha1, beta1, plan.stage1_null(), plan.stage1_alt(), seed)?;
        let s2 = SyntheticBinaryTest::new(
            alpha2,
            beta2,
            RegionSet::single(plan.second_null()),
            RegionSet::single(plan.second_alt()),
            seed.wrapping_add(1),
        )?;
        Ok((s1, s2))
    }
}

impl BinaryTest<SyntheticDraw> for SyntheticBinaryTest {
    fn run(&self, draw: &SyntheticDraw, level: f64) -> Result<BinaryVerdict> {
        let u: f64 = unit_rng(self.seed, draw.trial).random();
        let reject = if self.null.contains(draw.truth) {
            u < self.alpha_true
        } else if self.alt.contains(draw.truth) {
            u >= self.beta_true
        } else {
            u < 0.5
        };
        BinaryVerdict::from_p_value(if reject { 0.0 } else { 1.0 }, level)
    }

    fn null_regions(&self) -> RegionSet {
        self.null
    }

    fn alt_regions(&self) -> RegionSet {
        self.alt
    }
}

pub const MIN_VALIDATION_TRIALS: u64 = 1000;

/// Empirical outcome frequencies of a two-stage plan under one truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalColumn {
    pub truth: RegionId,
    pub trials: u64,
    pub frequencies: [f64; 3],
}

impl EmpiricalColumn {
    pub fn frequency(&self, outcome: TernaryOutcome) -> f64 {
        self.frequencies[outcome.index()]
    }
}

/// Three-sigma Monte-Carlo allowance above an analytic bound.
pub fn bound_tolerance(bound: f64, trials: u64) -> f64 {
    3.0 * (bound * (1.0 - bound) / trials as f64).sqrt() + if bound == 0.0 { 1e-12 } else { 0.0 }
}

/// Run `plan` with synthetic stage tests for `trials` independent trials
/// under `truth` and return the outcome frequencies.
pub fn validate_bound_table(
    plan: &TwoStagePlan,
    s1: &SyntheticBinaryTest,
    s2: &SyntheticBinaryTest,
    truth: RegionId,
    trials: u64,
    seed: u64,
) -> Result<EmpiricalColumn> {
    if trials < MIN_VALIDATION_TRIALS {
        return Err(Error::Precondition(format!("need at least {MIN_VALIDATION_TRIALS} trials, got {trials}")));
    }
    check_level(s1.alpha_true)?;
    check_level(s2.alpha_true)?;
    let base = seed.rotate_left(32);
    let mut counts = [0u64; 3];
    for t in 0..trials {
        let draw = SyntheticDraw { truth, trial: base ^ t };
        let run = run_two_stage(plan, s1, s2, &draw, s1.alpha_true, s2.alpha_true)?;
        counts[run.outcome.index()] += 1;
    }
    Ok(EmpiricalColumn { truth, trials, frequencies: counts.map(|k| k as f64 / trials as f64) })
}
