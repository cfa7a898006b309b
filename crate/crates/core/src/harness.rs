//! Seeded Monte-Carlo trials and the statistics computed from them.
//!
//! Trial `t` draws everything from `ChaCha8Rng::seed_from_u64(base_seed ^ t)`.
//! Algorithms in a shared-stream plan consume one event stream in lockstep;
//! otherwise algorithm `k` reads its own ChaCha stream `k` of the same seed.
//! Trials run in parallel and are collected in index order, so results do
//! not depend on scheduling.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_rel, symmetrize, Mat, Vector};
use crate::linear_model::LinearModelSpec;
use crate::mdp::{bellman_error, ExplorationKind, ExplorationStream, Mdp};
use crate::rl::{q_sample, DiagonalGain, QEvent, TdChain, TdModel, td_sample};
use crate::sa::{Algorithm, GainSchedule, LinearSample, Snapshot, Stepper};

/// The environment every algorithm in a plan is run against.
#[derive(Debug, Clone)]
pub enum Problem {
    Linear(Arc<LinearModelSpec>),
    QLearning {
        mdp: Arc<Mdp>,
        exploration: ExplorationKind,
    },
    Td(Arc<TdModel>),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Linear(m) => m.dim(),
            Problem::QLearning { mdp, .. } => mdp.d(),
            Problem::Td(m) => m.dim(),
        }
    }
}

/// One algorithm of a plan.
#[derive(Debug, Clone)]
pub struct AlgoSpec {
    pub label: String,
    pub algorithm: Algorithm,
    pub schedule: GainSchedule,
}

impl AlgoSpec {
    pub fn new(label: impl Into<String>, algorithm: Algorithm) -> Self {
        Self {
            label: label.into(),
            algorithm,
            schedule: GainSchedule::default(),
        }
    }

    pub fn with_gain(mut self, g: f64) -> Self {
        self.schedule.g = g;
        self
    }
}

/// Everything needed to reproduce a batch of trials.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub problem: Problem,
    pub algorithms: Vec<AlgoSpec>,
    pub n_steps: usize,
    /// Ascending step indices to record; 0 is the initial state.
    pub snapshots: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub theta0: Vector,
    pub shared_stream: bool,
}

impl TrialPlan {
    pub fn new(problem: Problem, algorithms: Vec<AlgoSpec>, n_steps: usize, trials: usize) -> Self {
        let d = problem.dim();
        Self {
            problem,
            algorithms,
            n_steps,
            snapshots: geometric_grid(n_steps, 4),
            trials,
            base_seed: 0,
            theta0: Vector::zeros(d),
            shared_stream: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("a plan needs at least one trial".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("a plan needs at least one algorithm".into()));
        }
        if self.snapshots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "snapshot indices must be strictly increasing".into(),
            ));
        }
        if self.theta0.len() != self.problem.dim() {
            return Err(Error::Shape(format!(
                "θ₀ has length {}, problem dimension is {}",
                self.theta0.len(),
                self.problem.dim()
            )));
        }
        for a in &self.algorithms {
            if a.algorithm.uses_diagonal() && !matches!(self.problem, Problem::QLearning { .. }) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` needs a diagonal gain, which only Q-learning problems supply",
                    a.label
                )));
            }
        }
        Ok(())
    }

    pub fn seed_of(&self, trial: usize) -> u64 {
        self.base_seed ^ trial as u64
    }

    /// Position of `n` in the snapshot list.
    pub fn snapshot_index(&self, n: usize) -> Option<usize> {
        self.snapshots.binary_search(&n).ok()
    }
}

/// Record of one algorithm in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoTrace {
    /// Snapshots reached before any divergence, in plan order.
    pub snapshots: Vec<Snapshot>,
    pub diverged_at: Option<usize>,
    /// Hash of every event consumed.
    pub checksum: u64,
    /// Per-coordinate visit counts (Q-learning only).
    pub visits: Vec<usize>,
}

impl AlgoTrace {
    /// Snapshot at plan position `k`, if reached.
    pub fn at(&self, k: usize) -> Option<&Snapshot> {
        self.snapshots.get(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub traces: Vec<AlgoTrace>,
}

/// Output of [`run_trials`].
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub plan: TrialPlan,
    pub results: Vec<TrialResult>,
}

impl TrialSet {
    pub fn algorithm_index(&self, label: &str) -> Option<usize> {
        self.plan.algorithms.iter().position(|a| a.label == label)
    }

    /// Number of trials in which algorithm `k` diverged.
    pub fn divergence_count(&self, k: usize) -> usize {
        self.results
            .iter()
            .filter(|r| r.traces[k].diverged_at.is_some())
            .count()
    }
}

/// Runs every trial of `plan` on the rayon pool.
pub fn run_trials(plan: &TrialPlan) -> Result<TrialSet> {
    plan.validate()?;
    let results = (0..plan.trials)
        .into_par_iter()
        .map(|t| run_trial(plan, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialSet {
        plan: plan.clone(),
        results,
    })
}

/// Runs one trial; exposed for replaying a single seed.
pub fn run_trial(plan: &TrialPlan, trial: usize) -> Result<TrialResult> {
    let seed = plan.seed_of(trial);
    let k = plan.algorithms.len();
    let groups: Vec<Vec<usize>> = if plan.shared_stream {
        vec![(0..k).collect()]
    } else {
        (0..k).map(|i| vec![i]).collect()
    };
    let mut traces: Vec<Option<AlgoTrace>> = vec![None; k];
    for (stream, members) in groups.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        for (i, tr) in run_group(plan, members, &mut rng)? {
            traces[i] = Some(tr);
        }
    }
    Ok(TrialResult {
        trial,
        seed,
        traces: traces.into_iter().map(|t| t.expect("every algorithm ran")).collect(),
    })
}

struct Runner {
    index: usize,
    stepper: Stepper,
    schedule: GainSchedule,
    trace: AlgoTrace,
    hasher: DefaultHasher,
    alive: bool,
}

impl Runner {
    fn snapshot_if_due(&mut self, plan: &TrialPlan) {
        let k = self.trace.snapshots.len();
        if plan.snapshots.get(k) == Some(&self.stepper.state.n) {
            self.trace.snapshots.push(Snapshot::of(&self.stepper.state));
        }
    }

    fn advance(&mut self, plan: &TrialPlan, sample: &LinearSample, diag: Option<&Vector>) {
        match self.stepper.step(sample, &self.schedule, diag) {
            Ok(()) => self.snapshot_if_due(plan),
            Err(_) => {
                self.alive = false;
                self.trace.diverged_at = Some(self.stepper.state.n);
            }
        }
    }
}

fn hash_vec(h: &mut DefaultHasher, v: &Vector) {
    for x in v.iter() {
        x.to_bits().hash(h);
    }
}

fn run_group(
    plan: &TrialPlan,
    members: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, AlgoTrace)>> {
    let mut runners: Vec<Runner> = members
        .iter()
        .map(|&i| {
            let spec = &plan.algorithms[i];
            let mut r = Runner {
                index: i,
                stepper: Stepper::new(spec.algorithm.clone(), plan.theta0.clone()),
                schedule: spec.schedule,
                trace: AlgoTrace {
                    snapshots: Vec::new(),
                    diverged_at: None,
                    checksum: 0,
                    visits: Vec::new(),
                },
                hasher: DefaultHasher::new(),
                alive: true,
            };
            r.snapshot_if_due(plan);
            r
        })
        .collect();

    match &plan.problem {
        Problem::Linear(model) => {
            for _ in 0..plan.n_steps {
                let sample = model.sample(rng);
                for r in runners.iter_mut().filter(|r| r.alive) {
                    hash_vec(&mut r.hasher, &sample.b);
                    r.advance(plan, &sample, None);
                }
            }
        }
        Problem::Td(model) => {
            let mut chain = TdChain::new(model, rng);
            for _ in 0..plan.n_steps {
                let (p, x) = chain.next_pair(model, rng);
                let sample = td_sample(model, p, x);
                for r in runners.iter_mut().filter(|r| r.alive) {
                    (p, x).hash(&mut r.hasher);
                    r.advance(plan, &sample, None);
                }
            }
        }
        Problem::QLearning { mdp, exploration } => {
            let mut stream = ExplorationStream::new(*exploration, mdp, rng);
            let mut gain = DiagonalGain::new(mdp.d());
            let needs_diag = runners.iter().any(|r| r.stepper.algorithm.uses_diagonal());
            for _ in 0..plan.n_steps {
                let t = stream.next_event(mdp, rng);
                gain.record(t.pair);
                let diag = needs_diag.then(|| gain.diagonal());
                for r in runners.iter_mut().filter(|r| r.alive) {
                    t.hash(&mut r.hasher);
                    let e = QEvent::new(mdp, t, &r.stepper.state.theta);
                    let sample = q_sample(mdp, &e);
                    r.advance(plan, &sample, diag.as_ref());
                }
            }
            for r in &mut runners {
                r.trace.visits = gain.counts().to_vec();
            }
        }
    }

    Ok(runners
        .into_iter()
        .map(|mut r| {
            r.trace.checksum = r.hasher.finish();
            (r.index, r.trace)
        })
        .collect())
}

/// Roughly `per_decade` points per decade from 1 to `n_max`, plus 0 and
/// `n_max`.
pub fn geometric_grid(n_max: usize, per_decade: usize) -> Vec<usize> {
    let mut out = vec![0];
    if n_max == 0 {
        return out;
    }
    let per = per_decade.max(1) as f64;
    let top = (n_max as f64).log10();
    let mut k = 0.0;
    while k / per <= top + 1e-12 {
        let n = 10f64.powf(k / per).round() as usize;
        if n <= n_max && n > *out.last().unwrap() {
            out.push(n);
        }
        k += 1.0;
    }
    if *out.last().unwrap() != n_max {
        out.push(n_max);
    }
    out
}

/// Running sums of the outer products `u vᵀ` for a mean and entrywise
/// standard error. Two accumulators merge exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterMoments {
    count: usize,
    sum: Mat,
    sum_sq: Mat,
}

impl OuterMoments {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            count: 0,
            sum: Mat::zeros(rows, cols),
            sum_sq: Mat::zeros(rows, cols),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, u: &Vector, v: &Vector) {
        let m = u * v.transpose();
        self.sum_sq += m.component_mul(&m);
        self.sum += m;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &OuterMoments) {
        self.count += other.count;
        self.sum += &other.sum;
        self.sum_sq += &other.sum_sq;
    }

    pub fn mean(&self) -> Mat {
        if self.count == 0 {
            return Mat::from_element(self.sum.nrows(), self.sum.ncols(), f64::NAN);
        }
        &self.sum / self.count as f64
    }

    /// Standard error of each entry of the mean; infinite below two samples.
    pub fn stderr(&self) -> Mat {
        let (r, c) = self.sum.shape();
        if self.count < 2 {
            return Mat::from_element(r, c, f64::INFINITY);
        }
        let n = self.count as f64;
        let mean = self.mean();
        Mat::from_fn(r, c, |i, j| {
            let var = (self.sum_sq[(i, j)] / n - mean[(i, j)].powi(2)).max(0.0) * n / (n - 1.0);
            (var / n).sqrt()
        })
    }
}

/// Which scaled second moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `n E[θ̃θ̃ᵀ]`
    S11,
    /// `n² E[ΔθΔθᵀ]`
    S22,
    /// `n^{3/2} E[Δθθ̃ᵀ]`
    S21,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::S11, Block::S22, Block::S21];

    pub fn name(self) -> &'static str {
        match self {
            Block::S11 => "11",
            Block::S22 => "22",
            Block::S21 => "21",
        }
    }

    fn scale(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Block::S11 => n,
            Block::S22 => n * n,
            Block::S21 => n.powf(1.5),
        }
    }
}

/// Estimates of one block at one snapshot.
#[derive(Debug, Clone)]
pub struct BlockEstimate {
    pub estimate: Mat,
    pub stderr: Mat,
    pub target: Option<Mat>,
}

impl BlockEstimate {
    /// Frobenius-relative error against the target.
    pub fn rel_error(&self) -> Option<f64> {
        self.target.as_ref().map(|t| frobenius_rel(&self.estimate, t))
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceRow {
    pub n: usize,
    /// Trials included (not diverged by `n`).
    pub trials: usize,
    pub diverged: usize,
    pub s11: BlockEstimate,
    pub s22: BlockEstimate,
    pub s21: BlockEstimate,
}

impl CovarianceRow {
    pub fn block(&self, b: Block) -> &BlockEstimate {
        match b {
            Block::S11 => &self.s11,
            Block::S22 => &self.s22,
            Block::S21 => &self.s21,
        }
    }

    /// True when fewer than two trials contributed.
    pub fn degenerate(&self) -> bool {
        self.trials < 2
    }
}

/// Known limits to compare against.
#[derive(Debug, Clone, Default)]
pub struct CovarianceTargets {
    pub s11: Option<Mat>,
    pub s22: Option<Mat>,
    pub s21: Option<Mat>,
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub algorithm: String,
    pub rows: Vec<CovarianceRow>,
}

impl CovarianceReport {
    pub fn at(&self, n: usize) -> Option<&CovarianceRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

/// Per-snapshot moment accumulators of algorithm `k`, over trials `range`.
pub fn accumulate_moments(
    set: &TrialSet,
    k: usize,
    theta_star: &Vector,
    range: std::ops::Range<usize>,
) -> Vec<[OuterMoments; 3]> {
    let d = theta_star.len();
    let mut acc: Vec<[OuterMoments; 3]> = set
        .plan
        .snapshots
        .iter()
        .map(|_| std::array::from_fn(|_| OuterMoments::new(d, d)))
        .collect();
    for r in &set.results[range] {
        for (pos, s) in r.traces[k].snapshots.iter().enumerate() {
            let err = &s.theta - theta_star;
            acc[pos][0].push(&err, &err);
            acc[pos][1].push(&s.dtheta, &s.dtheta);
            acc[pos][2].push(&s.dtheta, &err);
        }
    }
    acc
}

/// Scaled covariance estimates of algorithm `k` at every snapshot.
/// Diverged trials are excluded from the means and counted.
pub fn estimate_covariance(
    set: &TrialSet,
    k: usize,
    theta_star: &Vector,
    targets: &CovarianceTargets,
) -> CovarianceReport {
    let acc = accumulate_moments(set, k, theta_star, 0..set.results.len());
    covariance_from_moments(set, k, &acc, targets)
}

/// Builds a report from accumulated moments (see [`accumulate_moments`]).
pub fn covariance_from_moments(
    set: &TrialSet,
    k: usize,
    acc: &[[OuterMoments; 3]],
    targets: &CovarianceTargets,
) -> CovarianceReport {
    let total = set.results.len();
    let rows = set
        .plan
        .snapshots
        .iter()
        .zip(acc)
        .map(|(&n, m)| {
            let used = m[0].count();
            let make = |b: Block, mom: &OuterMoments, target: &Option<Mat>| {
                let s = b.scale(n);
                let mut estimate = mom.mean() * s;
                if b != Block::S21 {
                    estimate = symmetrize(&estimate);
                }
                BlockEstimate {
                    estimate,
                    stderr: mom.stderr() * s,
                    target: target.clone(),
                }
            };
            CovarianceRow {
                n,
                trials: used,
                diverged: total - used,
                s11: make(Block::S11, &m[0], &targets.s11),
                s22: make(Block::S22, &m[1], &targets.s22),
                s21: make(Block::S21, &m[2], &targets.s21),
            }
        })
        .collect();
    CovarianceReport {
        algorithm: set.plan.algorithms[k].label.clone(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub zeta: f64,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Trials in which either run had diverged by `n`.
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCurve {
    pub rows: Vec<CouplingRow>,
}

impl CouplingCurve {
    pub fn series(&self, zeta: f64) -> Vec<&CouplingRow> {
        self.rows.iter().filter(|r| r.zeta == zeta).collect()
    }

    pub fn at(&self, zeta: f64, n: usize) -> Option<&CouplingRow> {
        self.rows.iter().find(|r| r.zeta == zeta && r.n == n)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// `n²‖θ_n − θ*_n‖²` between algorithm `reference` and each `(ζ, k)`.
pub fn coupling_curve(set: &TrialSet, reference: usize, paired: &[(f64, usize)]) -> CouplingCurve {
    let mut rows = Vec::new();
    for &(zeta, k) in paired {
        for (pos, &n) in set.plan.snapshots.iter().enumerate() {
            let mut vals = Vec::with_capacity(set.results.len());
            for r in &set.results {
                if let (Some(a), Some(b)) = (r.traces[reference].at(pos), r.traces[k].at(pos)) {
                    let n2 = (n as f64).powi(2);
                    vals.push(n2 * (&a.theta - &b.theta).norm_squared());
                }
            }
            let diverged = set.results.len() - vals.len();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            rows.push(CouplingRow {
                zeta,
                n,
                mean,
                median: median(&mut vals),
                diverged,
            });
        }
    }
    CouplingCurve { rows }
}

/// Values of `√n θ̃_n(i)` across trials plus presentation bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub coordinate: usize,
    pub n: usize,
    /// `(trial, value)` for every trial that reached `n`.
    pub values: Vec<(usize, f64)>,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.1).collect()
    }

    pub fn variance(&self) -> f64 {
        let v = self.raw();
        let n = v.len() as f64;
        if v.len() < 2 {
            return f64::NAN;
        }
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Histogram of `√n θ̃_n(coordinate)` for algorithm `k`.
pub fn histogram(
    set: &TrialSet,
    k: usize,
    coordinate: usize,
    n: usize,
    theta_star: &Vector,
    bins: usize,
) -> Result<Histogram> {
    let pos = set
        .plan
        .snapshot_index(n)
        .ok_or_else(|| Error::InvalidArgument(format!("{n} is not a snapshot index")))?;
    if coordinate >= theta_star.len() {
        return Err(Error::InvalidArgument(format!(
            "coordinate {coordinate} out of range"
        )));
    }
    let root = (n as f64).sqrt();
    let values: Vec<(usize, f64)> = set
        .results
        .iter()
        .filter_map(|r| {
            r.traces[k]
                .at(pos)
                .map(|s| (r.trial, root * (s.theta[coordinate] - theta_star[coordinate])))
        })
        .collect();
    let (edges, counts) = bin(&values.iter().map(|v| v.1).collect::<Vec<_>>(), bins.max(1));
    Ok(Histogram {
        coordinate,
        n,
        values,
        edges,
        counts,
    })
}

fn bin(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    if values.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return (vec![lo, hi], vec![values.len()]);
    }
    let w = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let i = (((v - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    (edges, counts)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Mean Bellman error of algorithm `k` across trials at each snapshot.
/// Trials that diverged before a snapshot are left out of its mean.
pub fn bellman_trajectory(set: &TrialSet, k: usize, mdp: &Mdp) -> Vec<(usize, f64)> {
    set.plan
        .snapshots
        .iter()
        .enumerate()
        .map(|(pos, &n)| {
            let errs: Vec<f64> = set
                .results
                .iter()
                .filter_map(|r| r.traces[k].at(pos))
                .map(|s| bellman_error(mdp, &s.theta))
                .collect();
            let mean = if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().sum::<f64>() / errs.len() as f64
            };
            (n, mean)
        })
        .collect()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("writing CSV: {e}"))
}

/// `zeta,n,mean,median,diverged`
pub fn write_coupling_csv(path: &Path, curve: &CouplingCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["zeta", "n", "mean", "median", "diverged"])
        .map_err(csv_err)?;
    for r in &curve.rows {
        w.write_record([
            r.zeta.to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
            r.diverged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// `n,block,i,j,estimate,target,stderr`; a missing target is left empty.
pub fn write_covariance_csv(path: &Path, report: &CovarianceReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["n", "block", "i", "j", "estimate", "target", "stderr"])
        .map_err(csv_err)?;
    for row in &report.rows {
        for b in Block::ALL {
            let e = row.block(b);
            let (r, c) = e.estimate.shape();
            for i in 0..r {
                for j in 0..c {
                    let target = e
                        .target
                        .as_ref()
                        .map(|t| t[(i, j)].to_string())
                        .unwrap_or_default();
                    w.write_record([
                        row.n.to_string(),
                        b.name().to_string(),
                        i.to_string(),
                        j.to_string(),
                        e.estimate[(i, j)].to_string(),
                        target,
                        e.stderr[(i, j)].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(csv_err)
}

/// `trial,coordinate,value`
pub fn write_hist_csv(path: &Path, hists: &[Histogram]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["trial", "coordinate", "value"]).map_err(csv_err)?;
    for h in hists {
        for (t, v) in &h.values {
            w.write_record([t.to_string(), h.coordinate.to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// `algorithm,n,error`
pub fn write_bellman_csv(path: &Path, series: &[(String, Vec<(usize, f64)>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["algorithm", "n", "error"]).map_err(csv_err)?;
    for (label, s) in series {
        for (n, e) in s {
            w.write_record([label.clone(), n.to_string(), e.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_model::{preset, scalar_model};
    use crate::mdp::q_value_iteration;
    use crate::rl::QAlgorithm;

    fn linear_plan(trials: usize, n: usize) -> TrialPlan {
        let m = Arc::new(preset("fig2-d4").unwrap());
        let a_inv = m.a_mean().clone().try_inverse().unwrap();
        let mut p = TrialPlan::new(
            Problem::Linear(m),
            vec![
                AlgoSpec::new("snr*", Algorithm::SnrIdealized { a_inv }),
                AlgoSpec::new("polsa", Algorithm::polsa(1.0)),
            ],
            n,
            trials,
        );
        p.base_seed = 17;
        p
    }

    #[test]
    fn zero_steps_gives_initial_snapshots() {
        let set = run_trials(&linear_plan(1, 0)).unwrap();
        assert_eq!(set.results.len(), 1);
        for tr in &set.results[0].traces {
            assert_eq!(tr.snapshots.len(), 1);
            assert_eq!(tr.snapshots[0].n, 0);
        }
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let p = linear_plan(4, 300);
        let a = run_trials(&p).unwrap();
        let b = run_trials(&p).unwrap();
        assert_eq!(a.results, b.results);
        let one = run_trial(&p, 2).unwrap();
        assert_eq!(one, a.results[2]);
    }

    #[test]
    fn shared_streams_have_equal_checksums() {
        let set = run_trials(&linear_plan(3, 200)).unwrap();
        for r in &set.results {
            assert_eq!(r.traces[0].checksum, r.traces[1].checksum);
        }
        let mut p = linear_plan(3, 200);
        p.shared_stream = false;
        let set = run_trials(&p).unwrap();
        for r in &set.results {
            assert_ne!(r.traces[0].checksum, r.traces[1].checksum);
        }
    }

    #[test]
    fn coupling_is_zero_at_the_root_without_noise() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5]);
        let ts = Vector::from_vec(vec![1.0, -2.0]);
        let m = LinearModelSpec::new(
            a.clone(),
            &a * &ts,
            Mat::zeros(2, 2),
            vec![],
            crate::linear_model::NoiseKind::Gaussian,
        )
        .unwrap();
        let mut p = TrialPlan::new(
            Problem::Linear(Arc::new(m)),
            vec![
                AlgoSpec::new("snr*", Algorithm::SnrIdealized { a_inv: a.try_inverse().unwrap() }),
                AlgoSpec::new("polsa", Algorithm::polsa(1.0)),
            ],
            500,
            2,
        );
        p.theta0 = ts;
        let set = run_trials(&p).unwrap();
        let c = coupling_curve(&set, 0, &[(1.0, 1)]);
        assert!(c.rows.iter().all(|r| r.mean == 0.0 && r.median == 0.0));
        let self_pair = coupling_curve(&set, 1, &[(1.0, 1)]);
        assert!(self_pair.rows.iter().all(|r| r.mean == 0.0));
    }

    #[test]
    fn divergence_is_recorded() {
        let m = Arc::new(preset("fig2-d4").unwrap());
        let p = TrialPlan::new(
            Problem::Linear(m),
            vec![AlgoSpec::new("polsa", Algorithm::polsa(2.1))],
            20_000,
            2,
        );
        let set = run_trials(&p).unwrap();
        assert_eq!(set.divergence_count(0), 2);
        let c = coupling_curve(&set, 0, &[(2.1, 0)]);
        assert!(c.rows.last().unwrap().diverged == 2);
    }

    #[test]
    fn covariance_of_exact_root_is_zero() {
        let set = run_trials(&linear_plan(3, 0)).unwrap();
        let ts = Vector::zeros(4);
        let rep = estimate_covariance(&set, 0, &ts, &CovarianceTargets::default());
        let row = &rep.rows[0];
        for b in Block::ALL {
            assert_eq!(row.block(b).estimate, Mat::zeros(4, 4));
        }
    }

    #[test]
    fn single_trial_flags_infinite_stderr() {
        let set = run_trials(&linear_plan(1, 50)).unwrap();
        let rep = estimate_covariance(&set, 0, &Vector::from_element(4, 1.0), &CovarianceTargets::default());
        let row = rep.rows.last().unwrap();
        assert!(row.degenerate());
        assert!(row.s11.stderr.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn two_half_aggregation_matches() {
        let set = run_trials(&linear_plan(10, 100)).unwrap();
        let ts = Vector::from_element(4, 1.0);
        let all = accumulate_moments(&set, 1, &ts, 0..10);
        let mut a = accumulate_moments(&set, 1, &ts, 0..4);
        let b = accumulate_moments(&set, 1, &ts, 4..10);
        for (x, y) in a.iter_mut().zip(&b) {
            for i in 0..3 {
                x[i].merge(&y[i]);
            }
        }
        for (x, y) in a.iter().zip(&all) {
            for i in 0..3 {
                assert!((x[i].mean() - y[i].mean()).norm() <= 1e-12 * (1.0 + y[i].mean().norm()));
            }
        }
    }

    #[test]
    fn idealized_snr_scalar_covariance() {
        // a = −1, σ² = 1 ⇒ Σ* = 1
        let m = LinearModelSpec::new(
            Mat::from_element(1, 1, -1.0),
            Vector::from_element(1, -1.0),
            Mat::from_element(1, 1, 1.0),
            vec![],
            crate::linear_model::NoiseKind::Gaussian,
        )
        .unwrap();
        let mut p = TrialPlan::new(
            Problem::Linear(Arc::new(m)),
            vec![AlgoSpec::new(
                "snr*",
                Algorithm::SnrIdealized {
                    a_inv: Mat::from_element(1, 1, -1.0),
                },
            )],
            2000,
            2000,
        );
        p.snapshots = vec![2000];
        let set = run_trials(&p).unwrap();
        let rep = estimate_covariance(&set, 0, &Vector::from_element(1, 1.0), &CovarianceTargets::default());
        let s = rep.rows[0].s11.estimate[(0, 0)];
        assert!((s - 1.0).abs() < 0.1, "{s}");
        let _ = scalar_model();
    }

    #[test]
    fn histogram_and_ks() {
        let h = bin(&[2.0, 2.0, 2.0], 10);
        assert_eq!(h.1, vec![3]);
        let a = [0.1, 0.4, 0.3, 0.9];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_distance(&[0.0, 2.0], &[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bellman_trajectory_shapes() {
        let mdp = Arc::new(crate::mdp::preset("six").unwrap());
        let q = q_value_iteration(&mdp, 1e-12).unwrap();
        let mut p = TrialPlan::new(
            Problem::QLearning {
                mdp: mdp.clone(),
                exploration: ExplorationKind::Clock,
            },
            vec![
                AlgoSpec::new("watkins", QAlgorithm::Watkins.algorithm()),
                AlgoSpec::new("polsa-d", QAlgorithm::PolSaD.algorithm()),
            ],
            1000,
            2,
        );
        p.theta0 = q;
        let set = run_trials(&p).unwrap();
        let s = bellman_trajectory(&set, 0, &mdp);
        assert_eq!(s.len(), p.snapshots.len());
        // θ₀ = Q* is an exact fixed point of the clock iteration's mean only;
        // a sampled step moves it, but the first snapshot is exact.
        assert!(s[0].1 < 1e-11);
        assert!(s.iter().all(|(_, e)| e.is_finite()));
        assert!(set.results[0].traces[0].visits.iter().all(|&v| v > 0));
    }

    #[test]
    fn geometric_grid_shape() {
        assert_eq!(geometric_grid(0, 4), vec![0]);
        let g = geometric_grid(1000, 4);
        assert_eq!(g.first(), Some(&0));
        assert_eq!(g.last(), Some(&1000));
        assert!(g.contains(&100) && g.contains(&178));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_plans() {
        let mut p = linear_plan(0, 10);
        assert!(run_trials(&p).is_err());
        p.trials = 1;
        p.snapshots = vec![5, 3];
        assert!(run_trials(&p).is_err());
        let mut p = linear_plan(1, 10);
        p.algorithms.push(AlgoSpec::new("d", Algorithm::PolSaD));
        assert!(run_trials(&p).is_err());
    }

    #[test]
    fn csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let set = run_trials(&linear_plan(2, 20)).unwrap();
        let c = coupling_curve(&set, 0, &[(1.0, 1)]);
        let path = dir.path().join("coupling.csv");
        write_coupling_csv(&path, &c).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("zeta,n,mean,median,diverged\n"));
        let rep = estimate_covariance(&set, 1, &Vector::from_element(4, 1.0), &CovarianceTargets::default());
        let path = dir.path().join("covariance.csv");
        write_covariance_csv(&path, &rep).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n,block,i,j,estimate,target,stderr\n"));
    }
}
