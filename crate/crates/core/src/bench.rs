//! Benchmark harness: query workloads, repeated-run variance, convergence
//! by index of dispersion, accuracy against a baseline, and CSV reports.
//!
//! Every run draws from a stream addressed by `(method, pair, step, repeat)`,
//! so results do not depend on the number of worker threads or on which
//! other estimators are part of the run.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bfs_sharing::{
    build_index, query, refresh_index, BfsSharing, EdgeBitIndex, DEFAULT_WIDTH,
};
use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator, Method};
use crate::graph::{NodeId, UncertainGraph};
use crate::lazy::{LpLegacy, LpPlus};
use crate::mc::Mc;
use crate::oracle::exact_reliability;
use crate::probtree::{build_fwd_index, ProbTree, ProbTreeIndex};
use crate::rhh::{Rhh, RhhParams};
use crate::rng::RandomStream;
use crate::rss::{Rss, RssParams};

/// One query pair with the hop distance between its endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryPair {
    pub source: NodeId,
    pub target: NodeId,
    pub hops: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub pairs: Vec<QueryPair>,
    pub seed: u64,
}

impl Workload {
    /// `source target` per line, using the graph's labels.
    pub fn to_text(&self, graph: &UncertainGraph) -> String {
        self.pairs
            .iter()
            .map(|p| format!("{} {}\n", graph.label(p.source), graph.label(p.target)))
            .collect()
    }

    /// Parses `source target` lines (`#` comments allowed) against the
    /// graph's labels; hop distances are recomputed.
    pub fn parse(text: &str, graph: &UncertainGraph) -> Result<Workload> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [s, t] = fields[..] else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                });
            };
            let (source, target) = (graph.node_id(s)?, graph.node_id(t)?);
            let hops = graph.hop_distances(source)[target];
            pairs.push(QueryPair {
                source,
                target,
                hops,
            });
        }
        Ok(Workload { pairs, seed: 0 })
    }
}

/// `n_pairs` distinct sources in random order, each with a target chosen
/// uniformly among the nodes exactly `hops` forward BFS steps away.
pub fn generate_workload(
    graph: &UncertainGraph,
    n_pairs: usize,
    hops: usize,
    rng: &mut RandomStream,
) -> Result<Workload> {
    if hops == 0 {
        return Err(Error::InvalidParameter(
            "hop distance must be at least 1".into(),
        ));
    }
    let mut sources: Vec<NodeId> = (0..graph.node_count()).collect();
    sources.shuffle(rng);
    let mut pairs = Vec::with_capacity(n_pairs);
    for s in sources {
        if pairs.len() == n_pairs {
            break;
        }
        let dist = graph.hop_distances(s);
        let targets: Vec<NodeId> = (0..graph.node_count())
            .filter(|&v| dist[v] == hops)
            .collect();
        if targets.is_empty() {
            continue;
        }
        let target = targets[rng.random_range(0..targets.len())];
        pairs.push(QueryPair {
            source: s,
            target,
            hops,
        });
    }
    if pairs.len() < n_pairs {
        return Err(Error::Exhausted {
            found: pairs.len(),
            requested: n_pairs,
        });
    }
    Ok(Workload {
        pairs,
        seed: rng.seed(),
    })
}

/// Mean and spread of `T` independent runs of one estimator on one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSample {
    pub mean: f64,
    /// Unbiased, `T - 1` in the denominator.
    pub variance: f64,
    /// Every run returned exactly 0.
    pub all_zero: bool,
    /// Summed online time of the runs.
    pub elapsed: Duration,
}

/// Runs `estimator` `repeats` times, run `i` drawing from `rng.split(i)`.
pub fn estimate_variance(
    estimator: &dyn Estimator,
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    repeats: usize,
    rng: &RandomStream,
) -> Result<VarianceSample> {
    if repeats < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 repeats are needed".into(),
        ));
    }
    let mut values = Vec::with_capacity(repeats);
    let mut elapsed = Duration::ZERO;
    for i in 0..repeats {
        let est = estimator.estimate(graph, s, t, k, &mut rng.split(i as u64))?;
        elapsed += est.elapsed;
        values.push(est.value);
    }
    let constant = values.iter().all(|&v| v == values[0]);
    let (mean, variance) = if constant {
        (values[0], 0.0)
    } else {
        let mean = values.iter().sum::<f64>() / repeats as f64;
        (
            mean,
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64,
        )
    };
    Ok(VarianceSample {
        mean,
        variance,
        all_zero: values.iter().all(|&v| v == 0.0),
        elapsed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceConfig {
    pub start_k: usize,
    pub step: usize,
    pub rho_threshold: f64,
    /// Number of K values tried before giving up.
    pub max_steps: usize,
    /// Runs per pair and K (`T`).
    pub repeats: usize,
    /// Worker threads.
    pub jobs: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            start_k: 250,
            step: 250,
            rho_threshold: 0.001,
            max_steps: 20,
            repeats: 100,
            jobs: 1,
        }
    }
}

impl ConvergenceConfig {
    fn validate(&self) -> Result<()> {
        if self.start_k == 0 || self.step == 0 || self.max_steps == 0 || self.jobs == 0 {
            return Err(Error::InvalidParameter(
                "start K, step, step cap and jobs must be positive".into(),
            ));
        }
        if self.rho_threshold.is_nan() || self.rho_threshold <= 0.0 {
            return Err(Error::InvalidParameter(
                "rho threshold must be positive".into(),
            ));
        }
        if self.repeats < 2 {
            return Err(Error::InvalidParameter(
                "at least 2 repeats are needed".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub k: usize,
    /// Mean reliability over pairs.
    pub r_k: f64,
    /// Mean variance over pairs.
    pub v_k: f64,
    /// `V_K / R_K`; 0 when every run returned 0 and infinite when
    /// `R_K = 0` otherwise.
    pub rho: f64,
    pub seconds: f64,
    pub ms_per_sample: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub estimator: String,
    pub rows: Vec<ConvergenceRow>,
    pub converged_k: usize,
    /// Converged because every run returned 0 at two consecutive K.
    pub converged_at_zero: bool,
    /// Per-pair mean estimate at `converged_k`.
    pub pair_means: Vec<f64>,
}

/// Evaluates `f(i)` for `i in 0..n` on up to `jobs` threads, results in
/// index order.
fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                results.lock().expect("worker panicked")[i] = Some(value);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|v| v.expect("every index evaluated"))
        .collect()
}

/// Increases K by `step` from `start_k` until the index of dispersion
/// `V_K / R_K` falls below the threshold. `V_K` and `R_K` are averaged over
/// the pairs before dividing.
pub fn run_convergence(
    estimator: &dyn Estimator,
    graph: &UncertainGraph,
    workload: &Workload,
    config: &ConvergenceConfig,
    rng: &RandomStream,
) -> Result<ConvergenceReport> {
    config.validate()?;
    if workload.pairs.is_empty() {
        return Err(Error::InvalidParameter("workload has no pairs".into()));
    }
    let pairs = workload.pairs.len();
    let mut rows = Vec::new();
    let mut zero_streak = 0;
    for step in 0..config.max_steps {
        let k = config.start_k + step * config.step;
        let samples = parallel_map(pairs, config.jobs, |i| {
            let p = workload.pairs[i];
            let stream = rng.split_path(&[i as u64, step as u64]);
            estimate_variance(
                estimator,
                graph,
                p.source,
                p.target,
                k,
                config.repeats,
                &stream,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let r_k = samples.iter().map(|s| s.mean).sum::<f64>() / pairs as f64;
        let v_k = samples.iter().map(|s| s.variance).sum::<f64>() / pairs as f64;
        let all_zero = samples.iter().all(|s| s.all_zero);
        let rho = if r_k > 0.0 {
            v_k / r_k
        } else if all_zero {
            0.0
        } else {
            f64::INFINITY
        };
        let seconds: f64 = samples.iter().map(|s| s.elapsed.as_secs_f64()).sum();
        let draws = (pairs * config.repeats * k) as f64;
        rows.push(ConvergenceRow {
            k,
            r_k,
            v_k,
            rho,
            seconds,
            ms_per_sample: seconds * 1e3 / draws,
        });
        zero_streak = if r_k == 0.0 && all_zero {
            zero_streak + 1
        } else {
            0
        };
        let at_zero = zero_streak >= 2;
        if (r_k > 0.0 && rho < config.rho_threshold) || at_zero {
            return Ok(ConvergenceReport {
                estimator: estimator.name(),
                rows,
                converged_k: k,
                converged_at_zero: at_zero,
                pair_means: samples.iter().map(|s| s.mean).collect(),
            });
        }
    }
    let last = rows.last().expect("at least one step ran");
    Err(Error::NonConvergent {
        last_k: last.k,
        rho: last.rho,
    })
}

/// Mean over pairs of `|estimate - baseline| / baseline`.
pub fn relative_error(estimates: &[f64], baseline: &[f64]) -> Result<f64> {
    if estimates.len() != baseline.len() || estimates.is_empty() {
        return Err(Error::InvalidParameter(
            "estimates and baseline must be non-empty and of equal length".into(),
        ));
    }
    let zero: Vec<usize> = (0..baseline.len())
        .filter(|&i| baseline[i].is_nan() || baseline[i] <= 0.0)
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroBaseline { pairs: zero });
    }
    Ok(estimates
        .iter()
        .zip(baseline)
        .map(|(e, b)| (e - b).abs() / b)
        .sum::<f64>()
        / estimates.len() as f64)
}

/// `1 / (k (k - 1)) * sum_i sum_j |RE_i - RE_j|` over `k` relative errors.
pub fn pairwise_deviation(relative_errors: &[f64]) -> Result<f64> {
    let k = relative_errors.len();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "pairwise deviation needs at least 2 values".into(),
        ));
    }
    let total: f64 = relative_errors
        .iter()
        .flat_map(|a| relative_errors.iter().map(move |b| (a - b).abs()))
        .sum();
    Ok(total / (k * (k - 1)) as f64)
}

/// The exact oracle behind the estimator interface; always returns the
/// true reliability, so its variance is 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct Exact;

impl Estimator for Exact {
    fn name(&self) -> String {
        "exact".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        check_query(graph, s, t, k)?;
        let start = Instant::now();
        let value = exact_reliability(graph, s, t)?;
        Ok(Estimate::new(value, k, start.elapsed(), rng.seed()))
    }
}

/// Tuning shared by the estimators a benchmark builds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub rhh: RhhParams,
    pub rss: RssParams,
    /// Estimator run on the probabilistic tree's query graph.
    pub inner: Method,
    pub width: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            rhh: RhhParams::default(),
            rss: RssParams::default(),
            inner: Method::Mc,
            width: 2,
        }
    }
}

/// Estimator for `method` on `graph`. A probabilistic tree needs an index,
/// passed in or built here.
pub fn build_estimator(
    method: Method,
    graph: &UncertainGraph,
    config: &EstimatorConfig,
    index: Option<Arc<ProbTreeIndex>>,
) -> Result<Arc<dyn Estimator>> {
    Ok(match method {
        Method::Mc => Arc::new(Mc),
        Method::BfsSharing => Arc::new(BfsSharing::default()),
        Method::Rhh => Arc::new(Rhh { params: config.rhh }),
        Method::Rss => Arc::new(Rss { params: config.rss }),
        Method::LpPlus => Arc::new(LpPlus),
        Method::LpLegacy => Arc::new(LpLegacy),
        Method::ProbTree => {
            if config.inner == Method::ProbTree {
                return Err(Error::InvalidParameter(
                    "the inner estimator cannot be probtree".into(),
                ));
            }
            let index = match index {
                Some(index) => {
                    index.check_graph(graph)?;
                    index
                }
                None => Arc::new(build_fwd_index(graph, config.width, false)?),
            };
            let inner = build_estimator(config.inner, graph, config, None)?;
            Arc::new(ProbTree::new(index, inner))
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    pub estimator: String,
    pub k: usize,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexRow {
    pub method: String,
    pub build: Duration,
    pub load: Duration,
    pub size_bytes: usize,
    pub refresh_per_query: Duration,
}

/// Times build, serialization size, reload and (for the bit index) the
/// refresh between queries.
pub fn measure_indexes(
    graph: &UncertainGraph,
    workload: &Workload,
    methods: &[Method],
    width: usize,
    rng: &RandomStream,
) -> Result<(Vec<IndexRow>, Option<Arc<ProbTreeIndex>>)> {
    let mut rows = Vec::new();
    let mut tree = None;
    if methods.contains(&Method::BfsSharing) {
        let mut stream = rng.split(0);
        let start = Instant::now();
        let mut index = build_index(graph, DEFAULT_WIDTH, &mut stream)?;
        let build = start.elapsed();
        let mut bytes = Vec::new();
        index.write_to(&mut bytes)?;
        let start = Instant::now();
        let loaded = EdgeBitIndex::read_from(&bytes[..])?;
        let load = start.elapsed();
        debug_assert_eq!(loaded, index);
        let mut refresh = Duration::ZERO;
        for p in &workload.pairs {
            let start = Instant::now();
            refresh_index(&mut index, graph, &mut stream)?;
            refresh += start.elapsed();
            query(&index, graph, p.source, p.target, DEFAULT_WIDTH)?;
        }
        rows.push(IndexRow {
            method: Method::BfsSharing.to_string(),
            build,
            load,
            size_bytes: bytes.len(),
            refresh_per_query: refresh / workload.pairs.len().max(1) as u32,
        });
    }
    if methods.contains(&Method::ProbTree) {
        let index = build_fwd_index(graph, width, false)?;
        let mut bytes = Vec::new();
        index.write_to(&mut bytes)?;
        let start = Instant::now();
        ProbTreeIndex::read_from(&bytes[..])?;
        let load = start.elapsed();
        rows.push(IndexRow {
            method: Method::ProbTree.to_string(),
            build: index.build_time(),
            load,
            size_bytes: bytes.len(),
            refresh_per_query: Duration::ZERO,
        });
        tree = Some(Arc::new(index));
    }
    Ok((rows, tree))
}

/// Everything one benchmark run produces.
#[derive(Debug)]
pub struct BenchReport {
    pub convergence: Vec<ConvergenceReport>,
    /// Relative errors against Monte Carlo at convergence, or why they
    /// could not be computed.
    pub accuracy: Result<Vec<AccuracyRow>>,
    pub index: Vec<IndexRow>,
}

impl BenchReport {
    /// Spread of the relative errors across estimators.
    pub fn deviation(&self) -> Option<f64> {
        let rows = self.accuracy.as_ref().ok()?;
        pairwise_deviation(&rows.iter().map(|r| r.relative_error).collect::<Vec<_>>()).ok()
    }
}

/// Runs the convergence protocol for each method, then scores every
/// converged estimate against Monte Carlo at its own convergence point.
pub fn run_bench(
    graph: &UncertainGraph,
    workload: &Workload,
    methods: &[Method],
    estimators: &EstimatorConfig,
    config: &ConvergenceConfig,
    rng: &RandomStream,
) -> Result<BenchReport> {
    let (index, tree) = measure_indexes(
        graph,
        workload,
        methods,
        estimators.width,
        &rng.split(u64::MAX),
    )?;
    let stream_of = |m: Method| {
        rng.split(
            Method::ALL
                .iter()
                .position(|&x| x == m)
                .expect("known method") as u64,
        )
    };
    let mut convergence = Vec::with_capacity(methods.len());
    for &m in methods {
        let estimator = build_estimator(m, graph, estimators, tree.clone())?;
        convergence.push(run_convergence(
            estimator.as_ref(),
            graph,
            workload,
            config,
            &stream_of(m),
        )?);
    }
    let baseline = match methods.iter().position(|&m| m == Method::Mc) {
        Some(i) => Ok(convergence[i].pair_means.clone()),
        None => run_convergence(&Mc, graph, workload, config, &stream_of(Method::Mc))
            .map(|r| r.pair_means),
    };
    let accuracy = baseline.and_then(|base| {
        convergence
            .iter()
            .map(|r| {
                Ok(AccuracyRow {
                    estimator: r.estimator.clone(),
                    k: r.converged_k,
                    relative_error: relative_error(&r.pair_means, &base)?,
                })
            })
            .collect()
    });
    Ok(BenchReport {
        convergence,
        accuracy,
        index,
    })
}

fn secs(d: f64, timing: bool) -> String {
    if timing {
        d.to_string()
    } else {
        "0".into()
    }
}

/// `estimator,K,R_K,V_K,rho,seconds,ms_per_sample`. Without `timing` the
/// time columns are written as 0 so that reruns compare byte for byte.
pub fn write_convergence_csv<W: Write>(
    out: W,
    reports: &[ConvergenceReport],
    timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "estimator",
        "K",
        "R_K",
        "V_K",
        "rho",
        "seconds",
        "ms_per_sample",
    ])?;
    for report in reports {
        for row in &report.rows {
            w.write_record([
                report.estimator.clone(),
                row.k.to_string(),
                row.r_k.to_string(),
                row.v_k.to_string(),
                row.rho.to_string(),
                secs(row.seconds, timing),
                secs(row.ms_per_sample, timing),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `estimator,K,RE`.
pub fn write_accuracy_csv<W: Write>(out: W, rows: &[AccuracyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "K", "RE"])?;
    for row in rows {
        w.write_record([
            row.estimator.clone(),
            row.k.to_string(),
            row.relative_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `method,build_s,load_s,size_bytes,refresh_s_per_query`.
pub fn write_index_csv<W: Write>(out: W, rows: &[IndexRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "build_s",
        "load_s",
        "size_bytes",
        "refresh_s_per_query",
    ])?;
    for row in rows {
        w.write_record([
            row.method.clone(),
            secs(row.build.as_secs_f64(), timing),
            secs(row.load.as_secs_f64(), timing),
            row.size_bytes.to_string(),
            secs(row.refresh_per_query.as_secs_f64(), timing),
        ])?;
    }
    w.flush()?;
    Ok(())
}
