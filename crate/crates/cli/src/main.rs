use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use st_reliability::bench::{
    build_estimator, generate_workload, pairwise_deviation, run_bench, write_accuracy_csv,
    write_convergence_csv, write_index_csv, ConvergenceConfig, EstimatorConfig, Workload,
};
use st_reliability::bfs_sharing::{self, EdgeBitIndex, DEFAULT_WIDTH};
use st_reliability::graph::{
    assign_probabilities, parse_weighted_edge_list, read_graph, ProbabilityModel,
};
use st_reliability::oracle::exact_reliability;
use st_reliability::probtree::{build_fwd_index, ProbTreeIndex};
use st_reliability::rhh::RhhParams;
use st_reliability::rss::RssParams;
use st_reliability::{Error, Method, RandomStream};

const USAGE: u8 = 2;
const DATA: u8 = 3;
const NON_CONVERGENT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "strel",
    version,
    about = "s-t reliability estimation over uncertain graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SeedArg {
    /// Seed for every random draw of the command.
    #[arg(long, env = "STREL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct QueryArgs {
    /// Graph file with `source target probability` lines.
    #[arg(long)]
    graph: PathBuf,
    /// Source label.
    #[arg(long)]
    s: String,
    /// Target label.
    #[arg(long)]
    t: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    InverseOutDegree,
    Uniform,
    Exponential,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IndexKind {
    BfsSharing,
    Probtree,
}

#[derive(clap::Args)]
struct Tuning {
    /// Edges per stratification step for rss.
    #[arg(long, default_value_t = 50)]
    r: usize,
    /// Budgets at or below this are sampled directly by rhh and rss.
    #[arg(long, default_value_t = 5)]
    threshold: usize,
    /// Estimator run on the query graph of probtree.
    #[arg(long, default_value = "mc", value_parser = parse_method)]
    inner: Method,
    /// Width of a probtree index built on the fly.
    #[arg(long, default_value_t = 2)]
    tree_width: usize,
}

impl Tuning {
    fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            rhh: RhhParams {
                threshold: self.threshold,
                ..RhhParams::default()
            },
            rss: RssParams {
                r: self.r,
                threshold: self.threshold,
            },
            inner: self.inner,
            width: self.tree_width,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Turn a weighted edge list into an uncertain graph.
    AssignProbs {
        /// Edge list with `source target weight` lines.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        /// Values for the uniform model.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001])]
        values: Vec<f64>,
        /// Scale of the exponential model.
        #[arg(long, default_value_t = 20.0)]
        mu: f64,
        /// Probability of the fixed model.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Draw query pairs at a fixed hop distance.
    GenWorkload {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 2)]
        hops: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Build and save an index.
    BuildIndex {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum)]
        method: IndexKind,
        /// Worlds per edge for bfs-sharing (default 1500), bag width for
        /// probtree (default 2).
        #[arg(long)]
        width: Option<usize>,
        /// Allow probtree widths above 2.
        #[arg(long)]
        lossy: bool,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Estimate the reliability of one pair.
    Query {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_parser = parse_method)]
        estimator: Method,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        /// Saved index for bfs-sharing or probtree.
        #[arg(long)]
        index: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Exact reliability by enumerating possible worlds (small graphs only).
    Exact {
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Run the convergence protocol over a workload and write CSV reports.
    Bench {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Comma separated estimator names, or `all` for every compared
        /// estimator.
        #[arg(long, default_value = "all")]
        estimators: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 250)]
        start_k: usize,
        #[arg(long, default_value_t = 250)]
        step: usize,
        #[arg(long, default_value_t = 20)]
        max_steps: usize,
        /// Runs per pair and K.
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0.001)]
        rho: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write zeros in the time columns so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_methods(list: &str) -> Result<Vec<Method>, Error> {
    if list == "all" {
        return Ok(Method::COMPARED.to_vec());
    }
    list.split(',').map(|m| m.trim().parse()).collect()
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum IndexFile {
    Bits(EdgeBitIndex),
    Tree(ProbTreeIndex),
}

fn load_index(path: &Path, estimator: Method) -> Result<IndexFile, Error> {
    let input = BufReader::new(File::open(path)?);
    match estimator {
        Method::BfsSharing => Ok(IndexFile::Bits(EdgeBitIndex::read_from(input)?)),
        Method::ProbTree => Ok(IndexFile::Tree(ProbTreeIndex::read_from(input)?)),
        other => Err(Error::InvalidParameter(format!(
            "estimator {other} does not use an index"
        ))),
    }
}

/// Peak resident set size in kB, where the platform reports it.
fn peak_rss_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::AssignProbs {
            input,
            model,
            values,
            mu,
            p,
            output: path,
            seed,
        } => {
            let raw = parse_weighted_edge_list(&fs::read_to_string(input)?)?;
            let model = match model {
                Model::InverseOutDegree => ProbabilityModel::InverseOutDegree,
                Model::Uniform => ProbabilityModel::UniformChoice(values),
                Model::Exponential => ProbabilityModel::ExponentialCdf { mu },
                Model::Fixed => ProbabilityModel::Fixed(p),
            };
            let graph = assign_probabilities(&raw, &model, &mut RandomStream::new(seed.seed))?;
            let mut out = output(path.as_deref())?;
            out.write_all(graph.to_edge_list().as_bytes())?;
            out.flush()?;
        }
        Command::GenWorkload {
            graph,
            pairs,
            hops,
            output: path,
            seed,
        } => {
            let graph = read_graph(graph)?;
            let workload =
                generate_workload(&graph, pairs, hops, &mut RandomStream::new(seed.seed))?;
            let mut out = output(path.as_deref())?;
            out.write_all(workload.to_text(&graph).as_bytes())?;
            out.flush()?;
        }
        Command::BuildIndex {
            graph,
            method,
            width,
            lossy,
            output: path,
            seed,
        } => {
            let graph = read_graph(graph)?;
            let mut out = BufWriter::new(File::create(&path)?);
            let start = Instant::now();
            match method {
                IndexKind::BfsSharing => {
                    let width = width.unwrap_or(DEFAULT_WIDTH);
                    let index =
                        bfs_sharing::build_index(&graph, width, &mut RandomStream::new(seed.seed))?;
                    index.write_to(&mut out)?;
                }
                IndexKind::Probtree => {
                    let index = build_fwd_index(&graph, width.unwrap_or(2), lossy)?;
                    index.write_to(&mut out)?;
                    eprintln!("bags {}, height {}", index.bags().len(), index.height());
                }
            }
            out.flush()?;
            eprintln!(
                "built in {:.3} s, {} bytes",
                start.elapsed().as_secs_f64(),
                fs::metadata(&path)?.len()
            );
        }
        Command::Query {
            query: q,
            estimator,
            k,
            index,
            tuning,
            seed,
        } => {
            let graph = read_graph(&q.graph)?;
            let (s, t) = (graph.node_id(&q.s)?, graph.node_id(&q.t)?);
            let mut rng = RandomStream::new(seed.seed);
            let config = tuning.config();
            let index = index.map(|p| load_index(&p, estimator)).transpose()?;
            let estimate = match index {
                Some(IndexFile::Bits(bits)) => bfs_sharing::query(&bits, &graph, s, t, k)?,
                Some(IndexFile::Tree(tree)) => {
                    build_estimator(estimator, &graph, &config, Some(Arc::new(tree)))?
                        .estimate(&graph, s, t, k, &mut rng)?
                }
                None => build_estimator(estimator, &graph, &config, None)?
                    .estimate(&graph, s, t, k, &mut rng)?,
            };
            eprintln!("elapsed {:.6} s", estimate.elapsed.as_secs_f64());
            println!("{}", estimate.value);
        }
        Command::Exact { query: q } => {
            let graph = read_graph(&q.graph)?;
            let (s, t) = (graph.node_id(&q.s)?, graph.node_id(&q.t)?);
            println!("{}", exact_reliability(&graph, s, t)?);
        }
        Command::Bench {
            graph,
            workload,
            estimators,
            out_dir,
            start_k,
            step,
            max_steps,
            repeats,
            rho,
            jobs,
            no_timing,
            tuning,
            seed,
        } => {
            let graph = read_graph(graph)?;
            let workload = Workload::parse(&fs::read_to_string(workload)?, &graph)?;
            let methods = parse_methods(&estimators)?;
            let config = ConvergenceConfig {
                start_k,
                step,
                rho_threshold: rho,
                max_steps,
                repeats,
                jobs,
            };
            let report = run_bench(
                &graph,
                &workload,
                &methods,
                &tuning.config(),
                &config,
                &RandomStream::new(seed.seed),
            )?;
            fs::create_dir_all(&out_dir)?;
            let timing = !no_timing;
            write_convergence_csv(
                File::create(out_dir.join("convergence.csv"))?,
                &report.convergence,
                timing,
            )?;
            write_index_csv(
                File::create(out_dir.join("index.csv"))?,
                &report.index,
                timing,
            )?;
            for r in &report.convergence {
                println!("{}: converged at K = {}", r.estimator, r.converged_k);
            }
            if let Some(kb) = peak_rss_kb() {
                eprintln!("peak RSS {kb} kB (informational)");
            }
            let accuracy = report.accuracy?;
            write_accuracy_csv(File::create(out_dir.join("accuracy.csv"))?, &accuracy)?;
            let errors: Vec<f64> = accuracy.iter().map(|a| a.relative_error).collect();
            if let Ok(d) = pairwise_deviation(&errors) {
                println!("pairwise deviation of relative errors: {d}");
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergent { .. } => NON_CONVERGENT,
        Error::InvalidParameter(_) | Error::UnknownNode(_) | Error::NodeOutOfRange { .. } => USAGE,
        _ => DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
