//! The `treeval` command-line front end.
//!
//! Each verb reads JSON inputs, runs one computation and prints a single
//! report object on standard output. Exit status: 0 success, 2 invalid
//! input, 3 solver failure, 4 failed axiom check.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::dual::{dual_sup, primal_from_dual, DualDensity, DualFunction, DualSolverOptions, EntropicDual, NumericConjugate};
use crate::error::{Error, Result};
use crate::families::{ui_dc_counterexample, Utility};
use crate::io::{self, cash_map, node_map, num, nums, FamilyDescriptor, LoadedFamily, TreeFile};
use crate::market::{extract_state_price_density, market_value, round_trip_residual, MarketFamily};
use crate::risksharing::{share_value, stability_check, Subsidiaries};
use crate::tree::{CashBalance, NodeId, Tree};
use crate::valuation::{check_axioms, AxiomConfig, AxiomReport, Valuation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_AXIOM_FAILURE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "treeval", version, about = "Dynamic concave valuations on finite scenario trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value a cash balance at a node.
    Value(ValueArgs),
    /// Evaluate the convex dual at a density and optionally recover the primal value from it.
    Dual(DualArgs),
    /// Share a cash balance among several subsidiaries.
    Share(ShareArgs),
    /// Value a cash balance with access to the assets listed in the tree file.
    Hedge(ValueArgs),
    /// Extract a state-price density from one-step prices.
    Spd(SpdArgs),
    /// Fuzz a family against the valuation axioms.
    Check(CheckArgs),
    /// Search for a dynamic-consistency violation of indifference prices.
    Counterexample(CounterexampleArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration budget of each solver call.
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Also print a table on standard error.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct ValueArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub cash: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    /// Node label; defaults to the root.
    #[arg(long)]
    pub node: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DualArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    /// Density on the node and its descendants; defaults to the tree weights.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// Cash balance whose value is recovered from the dual.
    #[arg(long)]
    pub cash: Option<PathBuf>,
    #[arg(long)]
    pub node: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ShareArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub cash: PathBuf,
    /// Subsidiary family descriptor; repeatable.
    #[arg(long = "family")]
    pub family: Vec<PathBuf>,
    /// Further subsidiary descriptors.
    pub families: Vec<PathBuf>,
    #[arg(long)]
    pub node: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SpdArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// One-step prices: node label to one weight per child.
    #[arg(long)]
    pub prices: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub family: PathBuf,
    /// Tree file; a random tree drawn from the seed when absent.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    /// Indifference-family descriptor; CRRA with R = 2, x0 = 2 when absent.
    #[arg(long)]
    pub family: Option<PathBuf>,
    /// Sample budget.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// A finished computation.
pub struct Outcome {
    pub report: Value,
    pub exit: i32,
}

/// Inputs read so far, for the digest.
#[derive(Default)]
struct Inputs {
    files: Vec<(String, String, String)>,
    hasher: Sha256,
}

impl Inputs {
    fn read(&mut self, role: &str, path: &Path) -> Result<String> {
        let text = io::read_file(path)?;
        let digest = hex(&Sha256::digest(text.as_bytes()));
        self.hasher.update(role.as_bytes());
        self.hasher.update([0]);
        self.hasher.update(text.as_bytes());
        self.hasher.update([0]);
        self.files.push((role.to_owned(), path.display().to_string(), digest));
        Ok(text)
    }

    fn tree(&mut self, path: &Path) -> Result<(TreeFile, Arc<Tree>)> {
        let file = TreeFile::parse(&self.read("tree", path)?)?;
        let tree = Arc::new(file.tree()?);
        Ok((file, tree))
    }

    fn family(&mut self, path: &Path) -> Result<FamilyDescriptor> {
        FamilyDescriptor::parse(&self.read("family", path)?)
    }

    fn cash(&mut self, tree: &Tree, path: &Path) -> Result<CashBalance> {
        io::parse_cash(tree, &self.read("cash", path)?)
    }

    fn to_value(&self) -> Value {
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(role, path, digest)| json!({ "role": role, "path": path, "sha256": digest }))
            .collect();
        json!({ "sha256": hex(&self.hasher.clone().finalize()), "files": files })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn solver_options(args: &SolverArgs) -> DualSolverOptions {
    let mut opts = DualSolverOptions::default();
    if let Some(t) = args.tol {
        opts.tolerance = t;
    }
    if let Some(n) = args.max_iter {
        opts.max_iterations = n;
        opts.ascent.max_iterations = n;
    }
    opts
}

fn node_or_root(tree: &Tree, node: &Option<String>) -> Result<NodeId> {
    match node {
        Some(label) => tree.node(label),
        None => Ok(tree.root()),
    }
}

fn report(results: Value, residuals: Value, timing: Value) -> Value {
    json!({ "results": results, "residuals": residuals, "timing": timing })
}

fn run_value(args: &ValueArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let (_, tree) = inputs.tree(&args.tree)?;
    let cash = inputs.cash(&tree, &args.cash)?;
    let desc = inputs.family(&args.family)?;
    let x = node_or_root(&tree, &args.node)?;
    let family = desc.build(tree.clone())?;
    let values = family.valuation().values(&cash)?;
    let mut residuals = Map::new();
    if let LoadedFamily::Entropic(_) = &family {
        let recursive = family.assembled()?.values(&cash)?;
        let gap = tree.descendants(x).iter().map(|y| (values[y.0] - recursive[y.0]).abs()).fold(0.0, f64::max);
        residuals.insert("closed_form_vs_recursion".into(), num(gap));
    }
    let results = json!({
        "node": tree.label(x),
        "family": desc.tag(),
        "value": num(values[x.0]),
        "values": node_map(&tree, tree.descendants(x).iter().map(|&y| (y, values[y.0]))),
    });
    Ok(Outcome { report: report(results, Value::Object(residuals), json!({ "solver_iterations": 0 })), exit: EXIT_OK })
}

fn run_dual(args: &DualArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let opts = solver_options(&args.solver);
    opts.validate()?;
    let (_, tree) = inputs.tree(&args.tree)?;
    let desc = inputs.family(&args.family)?;
    let x = node_or_root(&tree, &args.node)?;
    let lambda = match &args.density {
        Some(p) => DualDensity::from_map(&tree, x, &io::parse_node_map(&tree, &inputs.read("density", p)?)?)?,
        None => DualDensity::reference(&tree, x),
    };
    let cash = match &args.cash {
        Some(p) => Some(inputs.cash(&tree, p)?),
        None => None,
    };
    let family = desc.build(tree.clone())?;
    let below = tree.descendants(x);

    let sup = dual_sup(family.valuation(), x, lambda.values(), vec![0.0; below.len()], &opts.ascent)?;
    let mut results = Map::new();
    let mut residuals = Map::new();
    results.insert("node".into(), json!(tree.label(x)));
    results.insert("family".into(), json!(desc.tag()));
    results.insert("density".into(), node_map(&tree, below.iter().copied().zip(lambda.values().iter().copied())));
    results.insert("dual_value".into(), num(sup.value));
    if let LoadedFamily::Entropic(f) = &family {
        let closed = f.entropic_dual(x, lambda.values());
        results.insert("closed_form".into(), num(closed));
        residuals.insert("numeric_vs_closed_form".into(), num((sup.value - closed).abs()));
    }
    if sup.value.is_finite() {
        results.insert("maximizer".into(), node_map(&tree, below.iter().copied().zip(sup.maximizer.iter().copied())));
    }

    let mut simplex_iterations = 0;
    if let Some(cash) = &cash {
        let k = cash.restrict(&tree, x);
        let direct = family.valuation().value(x, cash)?;
        let recovery = match &family {
            LoadedFamily::Entropic(f) => primal_from_dual(&mut EntropicDual::at(f, x), &k, &opts)?,
            LoadedFamily::Assembled(f) => {
                let mut conj = NumericConjugate::new(f, x, opts.ascent.clone());
                let dual: &mut dyn DualFunction = &mut conj;
                primal_from_dual(dual, &k, &opts)?
            }
        };
        simplex_iterations = recovery.iterations;
        let k_at_x: f64 = cash[x];
        results.insert(
            "primal".into(),
            json!({
                "cash_at_node": num(k_at_x),
                "recovered": num(recovery.value),
                "direct": num(direct),
                "minimizing_density": node_map(&tree, below.iter().copied().zip(recovery.density.iter().copied())),
            }),
        );
        residuals.insert("primal_gap".into(), num(recovery.gap));
        residuals.insert("primal_vs_direct".into(), num((recovery.value - direct).abs()));
    }
    let timing = json!({ "ascent_iterations": sup.iterations, "simplex_iterations": simplex_iterations });
    Ok(Outcome { report: report(Value::Object(results), Value::Object(residuals), timing), exit: EXIT_OK })
}

fn run_share(args: &ShareArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let opts = solver_options(&args.solver);
    opts.validate()?;
    let (_, tree) = inputs.tree(&args.tree)?;
    let cash = inputs.cash(&tree, &args.cash)?;
    let paths: Vec<&PathBuf> = args.family.iter().chain(&args.families).collect();
    if paths.is_empty() {
        return Err(Error::Invalid("`share` needs at least one family descriptor".into()));
    }
    let mut tags = Vec::new();
    let mut members = Vec::new();
    for p in paths {
        let desc = inputs.family(p)?;
        tags.push(desc.tag());
        members.push(desc.build(tree.clone())?.into_subsidiary());
    }
    let subs = Subsidiaries::new(members)?;
    let x = node_or_root(&tree, &args.node)?;
    let shared = share_value(&subs, x, &cash, &opts)?;

    let valuations = subs.valuations();
    let mut stability = Vec::new();
    let mut worst_stability: f64 = 0.0;
    for &y in tree.descendants(x) {
        if tree.is_leaf(y) {
            continue;
        }
        let s = stability_check(&valuations, &shared.allocation, y)?;
        worst_stability = worst_stability.max(s.residual);
        stability.push(json!({ "node": tree.label(y), "residual": num(s.residual), "scales": nums(&s.scales) }));
    }
    let allocation: Vec<Value> = shared
        .allocation
        .iter()
        .zip(&tags)
        .enumerate()
        .map(|(j, (k, tag))| {
            json!({
                "member": j,
                "family": tag,
                "cash": cash_map(&tree, k),
                "value": num(valuations[j].value(x, k).unwrap_or(f64::NAN)),
            })
        })
        .collect();
    let mut results = Map::new();
    results.insert("node".into(), json!(tree.label(x)));
    results.insert("method".into(), json!(shared.method.to_string()));
    results.insert("value".into(), num(shared.value));
    results.insert("value_of_sharing".into(), num(shared.value_of_sharing));
    results.insert("normalized".into(), num(shared.normalized));
    results.insert("allocation".into(), Value::Array(allocation));
    if let Some(d) = &shared.density {
        results.insert("density".into(), node_map(&tree, tree.descendants(x).iter().copied().zip(d.iter().copied())));
    }
    results.insert("stability".into(), Value::Array(stability));
    let residuals = json!({
        "feasibility": num(shared.feasibility_residual),
        "value": num(shared.value_residual),
        "stability": num(worst_stability),
    });
    Ok(Outcome { report: report(Value::Object(results), residuals, json!({ "solver_iterations": 0 })), exit: EXIT_OK })
}

fn run_hedge(args: &ValueArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let opts = solver_options(&args.solver);
    let (file, tree) = inputs.tree(&args.tree)?;
    let cash = inputs.cash(&tree, &args.cash)?;
    let desc = inputs.family(&args.family)?;
    let x = node_or_root(&tree, &args.node)?;
    let market = file
        .market(tree.clone())?
        .ok_or_else(|| Error::Invalid("the tree file lists no assets".into()))?;
    let family = desc.build(tree.clone())?;
    let base = family.assembled()?;
    let hedged = MarketFamily::new(&base, market.clone(), opts.ascent.clone())?;
    let value = hedged.value(x, &cash)?;
    let access = hedged.value(x, &CashBalance::zeros(&tree))?;
    let strategy = hedged.strategy(x, &cash)?;
    let direct = market_value(family.valuation(), &market, x, &cash, &opts.ascent)?;

    let mut holdings = Map::new();
    for (u, theta) in &strategy.holdings {
        let mut per_asset = Map::new();
        for (name, &t) in market.names().iter().zip(theta) {
            per_asset.insert(name.clone(), num(t));
        }
        holdings.insert(tree.label(*u).to_owned(), Value::Object(per_asset));
    }
    let results = json!({
        "node": tree.label(x),
        "family": desc.tag(),
        "assets": market.names(),
        "value": num(value),
        "access_value": num(access),
        "normalized": num(value - access),
        "without_market": num(family.valuation().value(x, &cash)?),
        "strategy": holdings,
    });
    let residuals = json!({
        "recursive_vs_direct": num((value - direct.value).abs()),
        "access_recursive_vs_direct": num((access - direct.access_value).abs()),
    });
    Ok(Outcome { report: report(results, residuals, json!({ "ascent_iterations": direct.iterations })), exit: EXIT_OK })
}

fn run_spd(args: &SpdArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let (file, tree) = inputs.tree(&args.tree)?;
    let prices = io::parse_one_step_prices(&tree, &inputs.read("prices", &args.prices)?)?;
    let spd = extract_state_price_density(&tree, &prices)?;
    let mut residuals = Map::new();
    residuals.insert("round_trip".into(), num(round_trip_residual(&tree, &prices, &spd)));
    if let Some(market) = file.market(tree.clone())? {
        // Assets priced by the density satisfy S_x = Σ_z w_x(z) S_z.
        let w = spd.one_step_prices(&tree);
        let mut worst: f64 = 0.0;
        for a in 0..market.assets() {
            for (x, wx) in &w {
                let fwd: f64 = tree.children(*x).iter().zip(wx).map(|(&z, w)| w * market.price(a, z)).sum();
                worst = worst.max((fwd - market.price(a, *x)).abs());
            }
        }
        residuals.insert("asset_pricing".into(), num(worst));
    }
    let results = json!({
        "zeta": node_map(&tree, tree.preorder().iter().map(|&y| (y, spd.get(y)))),
    });
    Ok(Outcome { report: report(results, Value::Object(residuals), json!({ "solver_iterations": 0 })), exit: EXIT_OK })
}

fn axiom_report_value(tree: &Tree, rep: &AxiomReport) -> Value {
    let outcomes: Vec<Value> = rep
        .outcomes
        .iter()
        .map(|o| {
            let witness = match &o.witness {
                Some(w) => json!({
                    "node": tree.label(w.node),
                    "cash": w.cash.iter().map(|k| cash_map(tree, k)).collect::<Vec<_>>(),
                    "detail": w.detail,
                }),
                None => Value::Null,
            };
            json!({
                "axiom": o.axiom.code(),
                "passed": o.passed,
                "worst_residual": num(o.worst_residual),
                "checks": o.checks,
                "witness": witness,
            })
        })
        .collect();
    json!({
        "passed": rep.passed(),
        "trials": rep.trials,
        "seed": rep.seed,
        "tolerance": num(rep.tolerance),
        "outcomes": outcomes,
    })
}

fn run_check(args: &CheckArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let desc = inputs.family(&args.family)?;
    let tree = match &args.tree {
        Some(p) => inputs.tree(p)?.1,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            Arc::new(Tree::random(&mut rng, 3, 3)?)
        }
    };
    let family = desc.build(tree.clone())?;
    let mut cfg = AxiomConfig::new(args.trials, args.seed);
    if let Some(t) = args.solver.tol {
        cfg = cfg.with_tolerance(t);
    }
    let rep = check_axioms(family.valuation(), &cfg)?;
    let results = json!({
        "family": desc.tag(),
        "tree_nodes": tree.len(),
        "horizon": tree.horizon(),
        "axioms": axiom_report_value(&tree, &rep),
    });
    let residuals = json!({ "worst": num(rep.worst_residual()) });
    let exit = if rep.passed() { EXIT_OK } else { EXIT_AXIOM_FAILURE };
    Ok(Outcome { report: report(results, residuals, json!({ "trials": args.trials })), exit })
}

fn run_counterexample(args: &CounterexampleArgs, inputs: &mut Inputs) -> Result<Outcome> {
    let (utility, x0) = match &args.family {
        Some(p) => inputs
            .family(p)?
            .utility()?
            .ok_or_else(|| Error::Invalid("`counterexample` needs an indifference (`ui`) family".into()))?,
        None => (Utility::crra(2.0)?, 2.0),
    };
    let cx = ui_dc_counterexample(utility, x0, args.trials, args.seed)?;
    let leaves = cx.tree.leaves();
    let claim = node_map(&cx.tree, leaves.iter().copied().zip(cx.claim.iter().copied()));
    let other = node_map(&cx.tree, leaves.iter().copied().zip(cx.other.iter().copied()));
    let utility_value = match utility {
        Utility::Crra { r } => json!({ "utility": "crra", "R": num(r) }),
        Utility::Exponential { gamma } => json!({ "utility": "exponential", "gamma": num(gamma) }),
    };
    let results = json!({
        "utility": utility_value,
        "x0": num(x0),
        "gap": num(cx.gap),
        "claim": claim,
        "other": other,
        "time1_prices": nums(&cx.time1_prices),
        "time0_prices": nums(&[cx.time0_prices.0, cx.time0_prices.1]),
    });
    let residuals = json!({ "time1_mismatch": num(cx.time1_mismatch) });
    Ok(Outcome { report: report(results, residuals, json!({ "samples": cx.samples })), exit: EXIT_OK })
}

fn pretty_args(cmd: &Command) -> bool {
    match cmd {
        Command::Value(a) | Command::Hedge(a) => a.solver.pretty,
        Command::Dual(a) => a.solver.pretty,
        Command::Share(a) => a.solver.pretty,
        Command::Spd(a) => a.solver.pretty,
        Command::Check(a) => a.solver.pretty,
        Command::Counterexample(a) => a.solver.pretty,
    }
}

fn verb(cmd: &Command) -> &'static str {
    match cmd {
        Command::Value(_) => "value",
        Command::Dual(_) => "dual",
        Command::Share(_) => "share",
        Command::Hedge(_) => "hedge",
        Command::Spd(_) => "spd",
        Command::Check(_) => "check",
        Command::Counterexample(_) => "counterexample",
    }
}

/// Run a parsed command; `argv` is echoed into the report.
pub fn execute(cmd: &Command, argv: &[String]) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let mut out = match cmd {
        Command::Value(a) => run_value(a, &mut inputs)?,
        Command::Dual(a) => run_dual(a, &mut inputs)?,
        Command::Share(a) => run_share(a, &mut inputs)?,
        Command::Hedge(a) => run_hedge(a, &mut inputs)?,
        Command::Spd(a) => run_spd(a, &mut inputs)?,
        Command::Check(a) => run_check(a, &mut inputs)?,
        Command::Counterexample(a) => run_counterexample(a, &mut inputs)?,
    };
    let Value::Object(body) = std::mem::take(&mut out.report) else { unreachable!() };
    let mut full = Map::new();
    full.insert("command".into(), json!({ "verb": verb(cmd), "args": argv }));
    full.insert("inputs".into(), inputs.to_value());
    full.extend(body);
    out.report = Value::Object(full);
    Ok(out)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoConvergence { .. } | Error::Unbounded { .. } => EXIT_NO_CONVERGENCE,
        _ => EXIT_INVALID,
    }
}

fn print_table(report: &Value, elapsed: f64) {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::Array(a) if a.iter().any(|v| v.is_object()) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), v, out);
                }
            }
            other => out.push((prefix.to_owned(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    for section in ["results", "residuals", "timing"] {
        if let Some(v) = report.get(section) {
            walk(section, v, &mut rows);
        }
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        eprintln!("{k:<width$}  {v}");
    }
    eprintln!("{:<width$}  {elapsed:.3}s", "wall_clock");
}

/// Parse `args` (including the program name), run, print, and return the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let started = Instant::now();
    match execute(&cli.command, &argv) {
        Ok(out) => {
            print!("{}", io::to_report_string(&out.report));
            if pretty_args(&cli.command) {
                print_table(&out.report, started.elapsed().as_secs_f64());
            }
            out.exit
        }
        Err(e) => {
            eprintln!("treeval {}: {e}", verb(&cli.command));
            exit_code(&e)
        }
    }
}
