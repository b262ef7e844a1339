use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use permfield::lattice::LatticeKernel;
use permfield::markov::{potential_kernel, MarkovModel, PotentialKernel};
use permfield::measure::Measure;
use permfield::moments::{alpha_permanental_moment, isomorphism_sides, mu_moment, q_rho_phi_moment, qxy_moment, MomentReport};
use permfield::norms::{proper_constant_probe, NormKind, StateNorms};
use permfield::{fixtures, io, loops, verify, Error};

#[derive(Parser)]
#[command(name = "permfield", version, about = "Loop soups, permanental fields and their moment engines")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact moment tables for a model and a list of measures.
    Moments(MomentsArgs),
    /// Monte Carlo verification suite; exit 0 iff every check passes.
    Verify(VerifyArgs),
    /// Sample loop soups.
    Soup(SoupArgs),
    /// Evaluate norms of each measure.
    Norms(NormsArgs),
    /// Fourier-side report for a lattice kernel.
    LevyReport(LevyArgs),
    /// Oscillation of translated occupation fields (diagnostic).
    CafDemo(CafArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measures: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Largest moment order tabulated.
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    /// Model file (default: the two-state fixture).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    measures: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.1,0.02")]
    delta_schedule: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20000)]
    samples: usize,
    /// Scale the kernel used for the closed forms by `1 + eps`.
    #[arg(long, hide = true)]
    perturb_kernel: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SoupArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent soups.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct NormsArgs {
    /// State-space model (exclusive with --kernel).
    #[arg(long, conflicts_with = "kernel")]
    model: Option<PathBuf>,
    /// Lattice kernel spec; state names are `x0, x1, ...` in flattened order.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    measures: PathBuf,
    /// Restrict to these norms.
    #[arg(long, value_delimiter = ',')]
    norm: Vec<String>,
    /// Also probe the proper constant of each norm with this many trials per order.
    #[arg(long)]
    probe: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct LevyArgs {
    #[arg(long)]
    kernel: PathBuf,
    /// Measures on the torus (default: the atom at the origin).
    #[arg(long)]
    measures: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CafArgs {
    #[arg(long)]
    kernel: PathBuf,
    #[arg(long)]
    measures: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sample paths.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,inf")]
    times: Vec<f64>,
    #[command(flatten)]
    output: Output,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnderflowBridge { .. }
            | Error::QuadratureFailure(_)
            | Error::NotPositiveDefinite(_)
            | Error::NotSectorial(_)
            | Error::HeavyTail(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<bool, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool configured once");
    }
    let result = match cli.command {
        Command::Moments(a) => cmd_moments(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Soup(a) => cmd_soup(a),
        Command::Norms(a) => cmd_norms(a),
        Command::LevyReport(a) => cmd_levy_report(a),
        Command::CafDemo(a) => cmd_caf_demo(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn require_seed(seed: Option<u64>) -> Result<u64, Failure> {
    seed.ok_or_else(|| Failure::Usage("--seed is required for stochastic commands".into()))
}

fn require_samples(n: usize) -> Result<usize, Failure> {
    if n == 0 {
        return usage("--samples must be positive");
    }
    Ok(n)
}

fn emit(output: &Output, json_value: &impl Serialize, csv: impl FnOnce() -> String) -> Result<(), Failure> {
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(json_value).map_err(|e| Failure::Numeric(e.to_string()))? + "\n",
        Format::Csv => csv(),
    };
    match &output.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MomentRow {
    kind: &'static str,
    measures: Vec<String>,
    states: Vec<String>,
    value: f64,
}

fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i, cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, &mut cur, &mut out);
    out
}

fn cmd_moments(a: MomentsArgs) -> CmdResult {
    let model = io::load_model(&a.model)?;
    let named = io::load_measures(&a.measures, &model)?;
    if !(a.alpha > 0.0) {
        return Err(Error::InvalidAlpha(a.alpha).into());
    }
    let u = potential_kernel(&model)?;
    let names: Vec<String> = named.iter().map(|n| n.0.clone()).collect();
    let ms: Vec<Measure> = named.iter().map(|n| n.1.clone()).collect();
    let pick = |t: &[usize]| -> (Vec<String>, Vec<Measure>) {
        (t.iter().map(|i| names[*i].clone()).collect(), t.iter().map(|i| ms[*i].clone()).collect())
    };
    let mut rows = Vec::new();
    if !ms.is_empty() {
        for k in 1..=a.order {
            for t in multisets(ms.len(), k) {
                let (labels, tuple) = pick(&t);
                rows.push(MomentRow { kind: "alpha_permanental", measures: labels.clone(), states: vec![], value: alpha_permanental_moment(&u, a.alpha, &tuple)? });
                rows.push(MomentRow { kind: "mu", measures: labels, states: vec![], value: mu_moment(&u, &tuple)? });
            }
        }
        for (i, nu) in ms.iter().enumerate() {
            for x in 0..model.len() {
                for y in 0..model.len() {
                    let states = vec![model.names()[x].clone(), model.names()[y].clone()];
                    rows.push(MomentRow { kind: "qxy", measures: vec![names[i].clone()], states, value: qxy_moment(&u, x, y, std::slice::from_ref(nu))? });
                }
            }
        }
        for t in multisets(ms.len(), 2) {
            let (labels, _) = pick(&t);
            rows.push(MomentRow { kind: "q_rho_phi", measures: labels, states: vec![], value: q_rho_phi_moment(&u, &ms[t[0]], &ms[t[1]], &[])? });
        }
    }
    let doc = json!({ "alpha": a.alpha, "rows": rows });
    emit(&a.output, &doc, || {
        let mut s = String::from("kind,measures,states,value\n");
        for r in &rows {
            let _ = writeln!(s, "{},{},{},{}", r.kind, r.measures.join(" "), r.states.join(" "), r.value);
        }
        s
    })?;
    Ok(true)
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let seed = require_seed(a.seed)?;
    let samples = require_samples(a.samples)?;
    if a.samples < 2 {
        return usage("--samples must be at least 2");
    }
    if !(a.alpha > 0.0) {
        return Err(Error::InvalidAlpha(a.alpha).into());
    }
    if a.delta_schedule.iter().any(|d| !(*d > 0.0)) {
        return usage("cutoffs in --delta-schedule must be positive");
    }
    let model: MarkovModel = match &a.model {
        Some(p) => io::load_model(p)?,
        None => fixtures::k2(),
    };
    let n = model.len();
    let measures: Vec<Measure> = match &a.measures {
        Some(p) => io::load_measures(p, &model)?.into_iter().map(|m| m.1).collect(),
        None if n >= 2 => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            w[1] = -1.0;
            vec![Measure::atom(n, 0), Measure::new(w)?]
        }
        None => vec![Measure::atom(n, 0)],
    };
    if measures.is_empty() {
        return usage("verification needs at least one measure");
    }
    let u = potential_kernel(&model)?;
    let lhs_kernel = match a.perturb_kernel {
        Some(eps) => Some(PotentialKernel::from_matrix(u.matrix() * (1.0 + eps))?),
        None => None,
    };
    let mut tuples = vec![vec![0, 0], vec![0, 0, 0], vec![0, 0, 0, 0]];
    if measures.len() > 1 {
        tuples.push(vec![1, 1]);
        tuples.push(vec![0, 1]);
    }
    let perm = verify::verify_permanental_moments(&model, a.alpha, &measures, &tuples, samples, &a.delta_schedule, seed)?;
    let rho = Measure::atom(n, 0);
    let phi = Measure::atom(n, n - 1);
    let delta = *a.delta_schedule.last().unwrap_or(&0.02);
    let mut iso = Vec::new();
    let mut closed = Vec::new();
    for deg in 0..=2 {
        let factors = vec![measures[0].abs(); deg];
        iso.push(verify::verify_isomorphism_mc(&model, a.alpha, &rho, &phi, &factors, delta, samples, seed ^ (deg as u64 + 1), lhs_kernel.as_ref())?);
        let (lhs, rhs) = isomorphism_sides(lhs_kernel.as_ref().unwrap_or(&u), &u, a.alpha, &rho, &phi, &factors)?;
        closed.push(MomentReport::new(lhs, rhs, json!({ "identity": "isomorphism_i", "degree": deg })));
    }
    let closed_pass = closed.iter().all(|r| r.passes(1e-9));
    let pass = perm.pass && iso.iter().all(|r| r.pass) && closed_pass;
    let doc = json!({ "pass": pass, "seed": seed, "permanental_moments": perm, "isomorphism_mc": iso, "isomorphism_closed_form": closed });
    emit(&a.output, &doc, || {
        let mut s = perm.csv();
        for r in &iso {
            s.push_str(r.csv().lines().skip(1).map(|l| format!("{l}\n")).collect::<String>().as_str());
        }
        s
    })?;
    if !pass {
        eprintln!("verification failed (seed {seed})");
    }
    Ok(pass)
}

fn cmd_soup(a: SoupArgs) -> CmdResult {
    let seed = require_seed(a.seed)?;
    let samples = require_samples(a.samples)?;
    let model = io::load_model(&a.model)?;
    if !(a.delta > 0.0) {
        return Err(Error::InvalidDelta(a.delta).into());
    }
    if !(a.alpha > 0.0) {
        return Err(Error::InvalidAlpha(a.alpha).into());
    }
    let sampler = loops::LoopSampler::new(&model, a.delta)?;
    let soups: Vec<_> = permfield::mc::par_samples(seed, samples, |_, rng| sampler.sample_soup(a.alpha, rng))
        .into_iter()
        .collect::<Result<Vec<_>, Error>>()?;
    let named: Vec<Value> = soups
        .iter()
        .map(|s| {
            let loops: Vec<Value> = s
                .loops
                .iter()
                .map(|l| json!({ "states": l.states.iter().map(|x| &model.names()[*x]).collect::<Vec<_>>(), "holding": l.holding }))
                .collect();
            json!({ "loops": loops })
        })
        .collect();
    let doc = json!({ "alpha": a.alpha, "delta": a.delta, "seed": seed, "mass": sampler.mass(), "soups": named });
    emit(&a.output, &doc, || {
        let mut s = String::from("soup,loop,root,lifetime,jumps\n");
        for (i, soup) in soups.iter().enumerate() {
            for (j, l) in soup.loops.iter().enumerate() {
                let _ = writeln!(s, "{i},{j},{},{},{}", model.names()[l.start()], l.lifetime(), l.jumps());
            }
        }
        s
    })?;
    Ok(true)
}

fn lattice_names(k: &LatticeKernel) -> Vec<String> {
    (0..k.sites()).map(|i| format!("x{i}")).collect()
}

fn lattice_measures(path: &PathBuf, k: &LatticeKernel) -> Result<Vec<(String, Measure)>, Failure> {
    let named: Vec<permfield::measure::NamedMeasure> = io::read_json(path)?;
    let names = lattice_names(k);
    let mut out = Vec::new();
    for nm in named {
        let mut w = vec![0.0; k.sites()];
        for (key, v) in &nm.atoms {
            let i = names.iter().position(|n| n == key).ok_or_else(|| Failure::from(Error::UnknownState(key.clone())))?;
            w[i] += v;
        }
        out.push((nm.name, Measure::new(w)?));
    }
    Ok(out)
}

fn cmd_norms(a: NormsArgs) -> CmdResult {
    let kinds: Vec<NormKind> = a.norm.iter().map(|s| s.parse()).collect::<Result<_, Error>>()?;
    if a.probe.is_some() {
        require_seed(a.seed)?;
    }
    let mut rows = Vec::new();
    let mut probes = Vec::new();
    if let Some(kp) = &a.kernel {
        let k = io::load_kernel(kp)?;
        let ms = lattice_measures(&a.measures, &k)?;
        let kinds: Vec<NormKind> = if kinds.is_empty() { vec![NormKind::Gamma2, NormKind::SqBracket2] } else { kinds };
        for (name, nu) in &ms {
            for kind in &kinds {
                let v = match kind {
                    NormKind::Gamma2 => k.norm_gamma2(nu).map(|v| json!(v)),
                    NormKind::SqBracket2 => k.norm_sect2(nu).map(|(v, c)| json!({ "value": v, "sectorial_constant": c })),
                    _ => Err(Error::UnknownNorm(format!("{kind} is not a lattice norm"))),
                };
                rows.push(norm_row(name, *kind, v));
            }
        }
        if let (Some(trials), Some(seed)) = (a.probe, a.seed) {
            if kinds.contains(&NormKind::Gamma2) {
                let u = k.kernel_matrix()?;
                probes.push(proper_constant_probe(&u, "gamma2", |nu| k.norm_gamma2(nu), 6, trials, seed, false)?);
            }
        }
    } else {
        let model = match &a.model {
            Some(p) => io::load_model(p)?,
            None => return usage("either --model or --kernel is required"),
        };
        let ms = io::load_measures(&a.measures, &model)?;
        let kinds: Vec<NormKind> = if kinds.is_empty() { NormKind::ALL.iter().copied().filter(|k| !k.is_lattice()).collect() } else { kinds };
        let mut norms = StateNorms::new(&model)?;
        for (name, nu) in &ms {
            for kind in &kinds {
                rows.push(norm_row(name, *kind, norms.eval(*kind, nu).map(|v| json!(v))));
            }
        }
        if let (Some(trials), Some(seed)) = (a.probe, a.seed) {
            for kind in &kinds {
                if kind.is_lattice() {
                    continue;
                }
                let mut local = StateNorms::new(&model)?;
                // Warm the cached kernels before sharing across threads.
                if local.eval(*kind, &Measure::atom(model.len(), 0)).is_err() {
                    continue;
                }
                let cache = std::sync::Mutex::new(local);
                let u = potential_kernel(&model)?;
                probes.push(proper_constant_probe(&u, kind.tag(), |nu| cache.lock().unwrap().eval(*kind, nu), 6, trials, seed, false)?);
            }
        }
    }
    let probe_summary: Vec<Value> = probes
        .iter()
        .map(|p| json!({ "norm_kind": p.norm_kind, "per_n": p.per_n, "fitted_c": p.fitted_c, "spread": p.spread, "pass": p.pass, "seed": p.seed, "trials": p.trials }))
        .collect();
    let doc = json!({ "norms": rows, "probes": probe_summary });
    emit(&a.output, &doc, || {
        let mut s = String::from("measure,norm,value,error\n");
        for r in &rows {
            let v = match &r["value"] {
                Value::Object(o) => o["value"].to_string(),
                Value::Null => String::new(),
                other => other.to_string(),
            };
            let _ = writeln!(s, "{},{},{},{}", r["measure"].as_str().unwrap_or(""), r["norm"].as_str().unwrap_or(""), v, r["error"].as_str().unwrap_or(""));
        }
        s
    })?;
    Ok(true)
}

fn norm_row(name: &str, kind: NormKind, v: Result<Value, Error>) -> Value {
    match v {
        Ok(v) => json!({ "measure": name, "norm": kind.tag(), "value": v, "error": null }),
        Err(e) => json!({ "measure": name, "norm": kind.tag(), "value": null, "error": e.to_string() }),
    }
}

fn modulus_deltas(n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut h = 1;
    while 2 * h <= n {
        out.push(h as f64 / n as f64);
        h *= 2;
    }
    out
}

fn cmd_levy_report(a: LevyArgs) -> CmdResult {
    let k = io::load_kernel(&a.kernel)?;
    let ms = match &a.measures {
        Some(p) => lattice_measures(p, &k)?,
        None => vec![("origin".to_string(), Measure::atom(k.sites(), 0))],
    };
    let (pu, pf) = k.parseval();
    let gamma = k.gamma();
    let sup_gamma = gamma.iter().cloned().fold(0.0, f64::max);
    let deltas = modulus_deltas(k.side());
    let mut per_measure = Vec::new();
    let mut csv_rows = Vec::new();
    for (name, nu) in &ms {
        let (sect, _) = k.norm_sect2(nu)?;
        let table = k.modulus_table(nu, &deltas)?;
        for (d, p, o) in &table {
            csv_rows.push(format!("{name},{d},{p},{o}"));
        }
        let b = k.b101_integral(nu)?;
        per_measure.push(json!({
            "name": name,
            "gamma2": k.norm_gamma2(nu)?,
            "sq_bracket2": sect,
            "b101": b,
            "modulus": table.iter().map(|(d, p, o)| json!({ "delta": d, "phi": p, "omega": o })).collect::<Vec<_>>(),
            "templates": k.continuity_templates(nu)?,
        }));
    }
    let doc = json!({
        "kernel": k.spec(),
        "dft_convention": "forward F(k) = sum_x f(x) exp(+2 pi i k.x/N); inverse carries N^-d; xi = 2 pi k, k wrapped to [-N/2, N/2)",
        "gamma": gamma,
        "sup_gamma": sup_gamma,
        "parseval": { "sum_u2": pu, "spectral": pf, "sup_gamma_over_u2": sup_gamma / pu },
        "sectorial_constant": k.sectorial_constant(),
        "tau_fit": k.tau_fit(),
        "measures": per_measure,
    });
    emit(&a.output, &doc, || {
        let mut s = String::from("measure,delta,phi,omega\n");
        for r in &csv_rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    })?;
    Ok(true)
}

fn cmd_caf_demo(a: CafArgs) -> CmdResult {
    let seed = require_seed(a.seed)?;
    let samples = require_samples(a.samples)?;
    let k = io::load_kernel(&a.kernel)?;
    let nu = match &a.measures {
        Some(p) => match lattice_measures(p, &k)?.into_iter().next() {
            Some(m) => m.1,
            None => return usage("measures file is empty"),
        },
        None => Measure::atom(k.sites(), 0),
    };
    if a.times.iter().any(|t| !(*t >= 0.0)) {
        return usage("times must be non-negative");
    }
    let report = verify::caf_field_demo(&k, &nu, &a.times, samples, seed)?;
    emit(&a.output, &report, || {
        let mut s = String::from("t,delta,omega,mean_oscillation,max_oscillation,ratio\n");
        for r in &report.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.t, r.delta, r.omega, r.mean_oscillation, r.max_oscillation, r.ratio);
        }
        s
    })?;
    Ok(true)
}
