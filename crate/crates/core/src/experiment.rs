//! Single runs, threshold sweeps and policy comparisons, with CSV output.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::Error;
use crate::metrics::{MetricsError, ResponseStats};
use crate::model::{SimOptions, Simulation};
use crate::policy::PolicyKind;
use crate::radio::FachDiscipline;
use crate::trace::TraceSink;

pub const CSV_HEADER: &str = "policy,scheduler,n_tcp,n_dch,s,t_h,t_l,t_out,seed,duration_s,n_bursts,mean_response_s,slowdown_aggregate,slowdown_per_burst,util_fach,util_dch,switches_per_flow";

/// Threshold values swept by default, in packets.
pub const DEFAULT_THRESHOLDS: [u64; 11] = [1, 2, 4, 6, 8, 10, 12, 15, 20, 25, 30];

/// Formats with six significant digits; the output depends only on the value.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Round in scientific notation first so the digit count is decided on
    // the rounded value (9.9999996 becomes 10.0000, not 9.99999).
    let rounded: f64 = format!("{x:.5e}").parse().expect("scientific notation parses");
    let magnitude = rounded.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{rounded:.decimals$}")
}

/// One CSV row: the outcome of a single run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub scheduler: FachDiscipline,
    pub n_tcp: usize,
    pub n_dch: usize,
    pub s: u64,
    pub t_h: u64,
    pub t_l: u64,
    pub t_out: f64,
    pub seed: u64,
    pub duration_s: f64,
    /// Post-warmup bursts, including those still unfinished at the end.
    pub n_bursts: u64,
    /// Post-warmup bursts still unfinished at the end; their response time
    /// runs to the end of the simulation.
    pub n_censored: u64,
    pub mean_response_s: f64,
    pub slowdown_aggregate: f64,
    pub slowdown_per_burst: f64,
    pub util_fach: f64,
    pub util_dch: f64,
    /// Switches started per burst generated, both counted after warmup.
    pub switches_per_flow: f64,
    pub warmup_cutoff_s: f64,
}

impl RunSummary {
    /// False when no burst was generated after the warmup cutoff.
    pub fn has_data(&self) -> bool {
        self.n_bursts > 0
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.scheduler,
            self.n_tcp,
            self.n_dch,
            self.s,
            self.t_h,
            self.t_l,
            fmt_sig(self.t_out),
            self.seed,
            fmt_sig(self.duration_s),
            self.n_bursts,
            fmt_sig(self.mean_response_s),
            fmt_sig(self.slowdown_aggregate),
            fmt_sig(self.slowdown_per_burst),
            fmt_sig(self.util_fach),
            fmt_sig(self.util_dch),
            fmt_sig(self.switches_per_flow),
        )
    }
}

/// Executes one simulation and condenses it into a summary.
///
/// A run in which no burst is generated after warmup is still a result: it
/// comes back with `n_bursts == 0` and NaN response metrics (see
/// [`RunSummary::has_data`]).
pub fn run(cfg: &ScenarioConfig, trace: TraceSink) -> Result<RunSummary, Error> {
    let outcome = Simulation::new(cfg.clone(), SimOptions { trace, ..Default::default() })?.run()?;
    let stats = match outcome.response {
        Ok(stats) => stats,
        Err(MetricsError::NoRecords) => ResponseStats {
            n_bursts: 0,
            n_censored: 0,
            mean_response: f64::NAN,
            mean_size: f64::NAN,
            slowdown_aggregate: f64::NAN,
            slowdown_per_burst: f64::NAN,
        },
        Err(e) => return Err(e.into()),
    };
    let st = &outcome.stats;
    let switches_per_flow = if st.bursts_after_warmup == 0 {
        0.0
    } else {
        st.switches_after_warmup as f64 / st.bursts_after_warmup as f64
    };
    Ok(RunSummary {
        policy: cfg.policy,
        scheduler: cfg.scheduler,
        n_tcp: cfg.n_tcp,
        n_dch: cfg.n_dch,
        s: cfg.s,
        t_h: cfg.t_h,
        t_l: cfg.t_l,
        t_out: cfg.t_out,
        seed: cfg.seed,
        duration_s: cfg.duration_s,
        n_bursts: stats.n_bursts,
        n_censored: stats.n_censored,
        mean_response_s: stats.mean_response,
        slowdown_aggregate: stats.slowdown_aggregate,
        slowdown_per_burst: stats.slowdown_per_burst,
        util_fach: st.util_fach,
        util_dch: st.util_dch,
        switches_per_flow,
        warmup_cutoff_s: cfg.warmup_cutoff_s(),
    })
}

/// A policy together with the FACH discipline it runs with (e.g. FS+LAS).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolicyVariant {
    pub kind: PolicyKind,
    /// `None` keeps the base configuration's discipline.
    pub scheduler: Option<FachDiscipline>,
}

impl PolicyVariant {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyVariant { kind, scheduler: None }
    }

    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        cfg.policy = self.kind;
        if let Some(d) = self.scheduler {
            cfg.scheduler = d;
        }
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scheduler {
            Some(d) => write!(f, "{}+{}", self.kind, d),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl FromStr for PolicyVariant {
    type Err = String;

    /// `qs`, `fsdch`, or `<kind>+<ps|las>` such as `fs+las`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('+') {
            Some((kind, sched)) => Ok(PolicyVariant { kind: kind.parse()?, scheduler: Some(sched.parse()?) }),
            None => Ok(PolicyVariant::new(s.parse()?)),
        }
    }
}

/// Which configuration field(s) a sweep value is written to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    S,
    Th,
    /// The threshold(s) the policy actually reads: T_h for QS and MT, s for
    /// FS, both for QSFS and FS-DCH.
    Threshold,
}

impl SweepParam {
    pub fn apply(self, cfg: &mut ScenarioConfig, value: u64) {
        match self {
            SweepParam::S => cfg.s = value,
            SweepParam::Th => cfg.t_h = value,
            SweepParam::Threshold => match cfg.policy {
                PolicyKind::Qs | PolicyKind::Mt => cfg.t_h = value,
                PolicyKind::Fs => cfg.s = value,
                PolicyKind::Qsfs | PolicyKind::FsDch => {
                    cfg.t_h = value;
                    cfg.s = value;
                }
            },
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::S => "s",
            SweepParam::Th => "t_h",
            SweepParam::Threshold => "threshold",
        })
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(SweepParam::S),
            "t_h" | "th" => Ok(SweepParam::Th),
            "threshold" => Ok(SweepParam::Threshold),
            other => Err(format!("unknown sweep parameter `{other}` (expected s, t_h or threshold)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<u64>,
    pub policies: Vec<PolicyVariant>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.values.is_empty() {
            return Err(Error::Sweep("sweep needs at least one threshold value".into()));
        }
        if let Some(v) = self.values.iter().find(|v| **v == 0) {
            return Err(Error::Sweep(format!("threshold values must be positive, got {v}")));
        }
        if self.policies.is_empty() {
            return Err(Error::Sweep("sweep needs at least one policy".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Sweep("sweep needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Mean and standard error of one cell across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAggregate {
    pub policy: PolicyVariant,
    pub scheduler: FachDiscipline,
    pub value: u64,
    /// Runs that contributed to the means.
    pub n_seeds: usize,
    /// Runs in which no post-warmup burst completed.
    pub n_missing: usize,
    pub mean_response_s: f64,
    /// `None` with a single seed.
    pub stderr_response_s: Option<f64>,
    pub slowdown_aggregate: f64,
    pub stderr_slowdown: Option<f64>,
    pub slowdown_per_burst: f64,
    pub util_fach: f64,
    pub util_dch: f64,
    pub switches_per_flow: f64,
    /// Share of post-warmup bursts unfinished at the end, pooled over runs.
    pub censored_fraction: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    if xs.is_empty() {
        return (f64::NAN, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

impl CellAggregate {
    fn from_rows(policy: PolicyVariant, value: u64, all: &[&RunSummary]) -> Self {
        let scheduler = all[0].scheduler;
        let rows: Vec<&RunSummary> = all.iter().copied().filter(|r| r.has_data()).collect();
        let col = |f: fn(&RunSummary) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        let (mean_response_s, stderr_response_s) = mean_and_stderr(&col(|r| r.mean_response_s));
        let (slowdown_aggregate, stderr_slowdown) = mean_and_stderr(&col(|r| r.slowdown_aggregate));
        CellAggregate {
            policy,
            scheduler,
            value,
            n_seeds: rows.len(),
            n_missing: all.len() - rows.len(),
            mean_response_s,
            stderr_response_s,
            slowdown_aggregate,
            stderr_slowdown,
            slowdown_per_burst: mean_and_stderr(&col(|r| r.slowdown_per_burst)).0,
            util_fach: mean_and_stderr(&col(|r| r.util_fach)).0,
            util_dch: mean_and_stderr(&col(|r| r.util_dch)).0,
            switches_per_flow: mean_and_stderr(&col(|r| r.switches_per_flow)).0,
            censored_fraction: {
                let total: u64 = rows.iter().map(|r| r.n_bursts).sum();
                let cut: u64 = rows.iter().map(|r| r.n_censored).sum();
                if total == 0 { f64::NAN } else { cut as f64 / total as f64 }
            },
        }
    }
}

pub const AGGREGATE_HEADER: &str = "policy,scheduler,param,value,n_seeds,n_missing,mean_response_s,stderr_response_s,slowdown_aggregate,stderr_slowdown_aggregate,slowdown_per_burst,util_fach,util_dch,switches_per_flow,censored_fraction";

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub param: SweepParam,
    /// One row per (policy, value, seed) in that order.
    pub rows: Vec<RunSummary>,
    /// One entry per (policy, value).
    pub cells: Vec<CellAggregate>,
}

impl SweepResult {
    /// Per-run rows, a blank line, then the per-cell aggregates.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out.push('\n');
        out.push_str(AGGREGATE_HEADER);
        out.push('\n');
        let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.policy.kind,
                c.scheduler,
                self.param,
                c.value,
                c.n_seeds,
                c.n_missing,
                fmt_sig(c.mean_response_s),
                opt(c.stderr_response_s),
                fmt_sig(c.slowdown_aggregate),
                opt(c.stderr_slowdown),
                fmt_sig(c.slowdown_per_burst),
                fmt_sig(c.util_fach),
                fmt_sig(c.util_dch),
                fmt_sig(c.switches_per_flow),
                fmt_sig(c.censored_fraction),
            )
            .expect("writing to a String");
        }
        out
    }

    /// The cell with the lowest mean response time for `policy`. Cells with
    /// a missing run are skipped: averaging only the runs that produced data
    /// would flatter exactly the settings that starve.
    pub fn best_cell(&self, policy: PolicyVariant) -> Option<&CellAggregate> {
        self.cells
            .iter()
            .filter(|c| c.policy == policy && c.n_missing == 0)
            .min_by(|a, b| a.mean_response_s.total_cmp(&b.mean_response_s))
    }

    pub fn cells_for(&self, policy: PolicyVariant) -> impl Iterator<Item = &CellAggregate> {
        self.cells.iter().filter(move |c| c.policy == policy)
    }
}

/// Runs every (policy, value, seed) combination. Runs execute in parallel;
/// rows come back in deterministic order regardless.
pub fn sweep(spec: &SweepSpec, base: &ScenarioConfig) -> Result<SweepResult, Error> {
    spec.validate()?;
    base.validate()?;
    let mut jobs = Vec::new();
    for policy in &spec.policies {
        for &value in &spec.values {
            for &seed in &spec.seeds {
                let mut cfg = base.clone();
                policy.apply(&mut cfg);
                spec.param.apply(&mut cfg, value);
                cfg.seed = seed;
                cfg.validate()?;
                jobs.push(cfg);
            }
        }
    }
    let rows = jobs.par_iter().map(|cfg| run(cfg, TraceSink::Off)).collect::<Result<Vec<_>, _>>()?;

    let per_cell = spec.seeds.len();
    let mut cells = Vec::new();
    let mut chunks = rows.chunks(per_cell);
    for policy in &spec.policies {
        for &value in &spec.values {
            let chunk: Vec<&RunSummary> = chunks.next().expect("one chunk per cell").iter().collect();
            cells.push(CellAggregate::from_rows(*policy, value, &chunk));
        }
    }
    Ok(SweepResult { param: spec.param, rows, cells })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub policy: PolicyVariant,
    pub best: CellAggregate,
    /// (T_this - T_best) / T_this: how much faster the overall best policy is.
    pub gain_of_best: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Index into `rows` of the policy with the lowest response time.
    pub best: usize,
    pub warnings: Vec<String>,
    pub sweep: SweepResult,
}

pub const COMPARISON_HEADER: &str = "policy,scheduler,best_threshold,n_seeds,mean_response_s,stderr_response_s,slowdown_aggregate,slowdown_per_burst,gain_of_best_pct";

impl Comparison {
    pub fn best_row(&self) -> &ComparisonRow {
        &self.rows[self.best]
    }

    pub fn row(&self, policy: PolicyVariant) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.policy.kind,
                r.best.scheduler,
                r.best.value,
                r.best.n_seeds,
                fmt_sig(r.best.mean_response_s),
                r.best.stderr_response_s.map(fmt_sig).unwrap_or_default(),
                fmt_sig(r.best.slowdown_aggregate),
                fmt_sig(r.best.slowdown_per_burst),
                fmt_sig(100.0 * r.gain_of_best),
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Sweeps each policy over its thresholds and ranks policies by their best
/// mean response time.
pub fn compare(
    policies: &[PolicyVariant],
    base: &ScenarioConfig,
    seeds: &[u64],
    values: &[u64],
) -> Result<Comparison, Error> {
    if policies.len() < 2 {
        return Err(Error::Sweep("comparison needs at least two policies".into()));
    }
    let spec = SweepSpec {
        param: SweepParam::Threshold,
        values: values.to_vec(),
        policies: policies.to_vec(),
        seeds: seeds.to_vec(),
    };
    let sweep = sweep(&spec, base)?;
    let mut warnings = Vec::new();
    if seeds.len() == 1 {
        warnings.push("single seed: standard errors are not available".to_string());
    }
    for c in sweep.cells.iter().filter(|c| c.n_missing > 0) {
        warnings.push(format!(
            "{} at threshold {}: {} of {} runs had no post-warmup burst; cell left out of the ranking",
            c.policy,
            c.value,
            c.n_missing,
            c.n_missing + c.n_seeds
        ));
    }
    let bests: Vec<CellAggregate> = policies
        .iter()
        .map(|p| sweep.best_cell(*p).cloned().ok_or(Error::Metrics(MetricsError::NoRecords)))
        .collect::<Result<_, _>>()?;
    for c in bests.iter().filter(|c| c.censored_fraction > 0.01) {
        warnings.push(format!(
            "{}: {:.1}% of bursts were unfinished at the end; its mean response time is a lower bound",
            c.policy,
            100.0 * c.censored_fraction
        ));
    }
    let best = bests
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_response_s.total_cmp(&b.1.mean_response_s))
        .map(|(i, _)| i)
        .expect("at least two policies");
    let t_best = bests[best].mean_response_s;
    let rows = policies
        .iter()
        .zip(bests)
        .map(|(p, cell)| ComparisonRow {
            policy: *p,
            gain_of_best: (cell.mean_response_s - t_best) / cell.mean_response_s,
            best: cell,
        })
        .collect();
    Ok(Comparison { rows, best, warnings, sweep })
}
