//! `onda`: build, assemble, run and check programs for the reversible
//! quantum ISA.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use onda_core::asm::{assemble, disassemble, disassemble_listing};
use onda_core::compiler;
use onda_core::isa::{InstructionClass, Reg};
use onda_core::program::{emit_binary, load_binary, Program};
use onda_core::qvm::{sample_ensemble, Limits, Machine, QState, RunResult, SimError};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "onda", version, about = "Compiler, assembler and simulator for the ONDA quantum ISA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile ONDA source to a binary image.
    Build {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the generated assembly.
        #[arg(long, value_name = "PATH")]
        emit_asm: Option<PathBuf>,
    },
    /// Assemble a text file to a binary image.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print an image as assembly, one instruction per line with addresses.
    Disasm {
        input: PathBuf,
        /// Write plain re-assemblable text here instead of the listing.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate a program.
    Run {
        input: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long, default_value_t = 1000)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the top branches of every cycle as JSON lines.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        top_k: usize,
        /// Write a JSON report.
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
    /// Check reversibility, norm conservation and garbage hygiene.
    Check {
        input: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Cycles to run forward and then backward.
        #[arg(long, value_name = "K", default_value_t = 200)]
        reversibility: u64,
        /// End the forward window early at a measurement instead of failing.
        #[arg(long)]
        stop_at_meas: bool,
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_norm_drift: f64,
    },
}

#[derive(clap::Args)]
struct SimArgs {
    #[arg(long, default_value_t = 10_000_000)]
    max_cycles: u64,
    #[arg(long, default_value_t = 1e-12)]
    prune_eps: f64,
}

impl SimArgs {
    fn limits(&self) -> Result<Limits, Failure> {
        if !(0.0..=1e-6).contains(&self.prune_eps) {
            return Err(Failure::Usage(format!("--prune-eps must be in [0, 1e-6], got {}", self.prune_eps)));
        }
        Ok(Limits { max_cycles: self.max_cycles, prune_eps: self.prune_eps, ..Limits::default() })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Sample,
}

enum Failure {
    /// Bad input: diagnostics, unreadable files, invalid flags.
    Usage(String),
    /// The program ran but did not finish cleanly, or a check failed.
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

/// Loads a program from an image, assembly text (`.qs`) or source (`.onda`).
fn load(path: &Path) -> Result<Program, Failure> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("onda") => {
            let c = compiler::compile(&read_text(path)?).map_err(|d| Failure::Usage(d.render(&file_name(path))))?;
            Ok(c.program)
        }
        Some("qs") => assemble(&read_text(path)?).map_err(|d| Failure::Usage(d.render(&file_name(path)))),
        _ => load_binary(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build { input, output, emit_asm } => build(&input, &output, emit_asm.as_deref()),
        Command::Asm { input, output } => {
            let text = read_text(&input);
            text.and_then(|t| assemble(&t).map_err(|d| Failure::Usage(d.render(&file_name(&input)))))
                .and_then(|p| write(&output, emit_binary(&p)))
        }
        Command::Disasm { input, output } => load(&input).and_then(|p| match output {
            Some(o) => write(&o, disassemble(&p)),
            None => {
                let _ = write!(std::io::stdout(), "{}", disassemble_listing(&p));
                Ok(())
            }
        }),
        Command::Run { input, sim, mode, shots, seed, trace, top_k, stats } => {
            run(&input, &sim, mode, shots, seed, trace.as_deref(), top_k, stats.as_deref())
        }
        Command::Check { input, sim, reversibility, stop_at_meas, inject_norm_drift } => {
            check(&input, &sim, reversibility, stop_at_meas, inject_norm_drift)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", msg.trim_end());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {}", msg.trim_end());
            ExitCode::from(2)
        }
    }
}

fn build(input: &Path, output: &Path, emit_asm: Option<&Path>) -> Result<(), Failure> {
    let name = file_name(input);
    let c = compiler::compile(&read_text(input)?).map_err(|d| Failure::Usage(d.render(&name)))?;
    if !c.warnings.is_empty() {
        eprint!("{}", c.warnings.render(&name));
    }
    write(output, emit_binary(&c.program))?;
    if let Some(path) = emit_asm {
        write(path, c.asm())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    input: &Path,
    sim: &SimArgs,
    mode: Mode,
    shots: u64,
    seed: u64,
    trace: Option<&Path>,
    top_k: usize,
    stats: Option<&Path>,
) -> Result<(), Failure> {
    let limits = sim.limits()?;
    if mode == Mode::Sample && shots == 0 {
        return Err(Failure::Usage("--shots must be at least 1".into()));
    }
    let program = load(input)?;
    let machine = Machine::new(&program, limits);

    let mut trace_out = match trace {
        Some(p) => {
            Some(BufWriter::new(fs::File::create(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?))
        }
        None => None,
    };
    let mut trace_err = None;
    let result = machine.run_observed(|s| {
        if let Some(w) = trace_out.as_mut() {
            if let Err(e) = writeln!(w, "{}", trace_line(s, top_k)) {
                trace_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(mut w) = trace_out {
        if let Some(e) = trace_err.take().or_else(|| w.flush().err()) {
            return Err(Failure::Usage(format!("trace: {e}")));
        }
    }

    let sampled = (mode == Mode::Sample).then(|| sample_ensemble(&result, shots, seed));
    match &sampled {
        None => print_exact(&result),
        Some(s) => {
            for h in &s.histograms {
                out!("measurement {} at pc {} ({}), {} shots:", h.ordinal, h.pc, h.reg, s.shots);
                for (v, n) in &h.counts {
                    out!("  {v:>12}  {n}");
                }
            }
        }
    }
    out!(
        "cycles {}  peak branches {}  merges {}  pruned mass {:.3e}  unhalted mass {:.3e}  crashed mass {:.3e}",
        result.stats.cycles,
        result.stats.peak_branches,
        result.stats.merges,
        result.stats.pruned_mass,
        result.unhalted_mass,
        result.crashed_mass
    );

    if let Some(path) = stats {
        let mut report = serde_json::to_value(result.report()).expect("report serializes");
        report["mode"] = json!(if mode == Mode::Exact { "exact" } else { "sample" });
        if let Some(s) = &sampled {
            report["samples"] = serde_json::to_value(s).expect("samples serialize");
        }
        write(path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }

    if result.crashed_mass > 0.0 {
        return Err(Failure::Runtime(format!("crashed mass {:.3e}", result.crashed_mass)));
    }
    if result.unhalted_mass > 0.0 {
        return Err(Failure::Runtime(format!(
            "cycle limit {} reached with unhalted mass {:.6}",
            limits.max_cycles, result.unhalted_mass
        )));
    }
    Ok(())
}

fn print_exact(r: &RunResult) {
    for e in &r.events {
        out!("measurement {} at pc {} ({}), reached with probability {:.9}:", e.ordinal, e.pc, e.reg.alias(), e.reach);
        for (v, p) in &e.dist {
            out!("  {v:>12}  {p:.9}");
        }
    }
}

fn trace_line(s: &QState, k: usize) -> String {
    let mut top: Vec<_> = s.branches.iter().collect();
    top.sort_by(|a, b| b.1.norm_sqr().total_cmp(&a.1.norm_sqr()));
    let top: Vec<_> = top
        .into_iter()
        .take(k)
        .map(|(c, a)| {
            json!({
                "pc": c.pc,
                "ur": c.reg(Reg::UR) as i32,
                "re": a.re,
                "im": a.im,
                "prob": a.norm_sqr(),
                "halted": c.halted,
                "crashed": c.crashed,
            })
        })
        .collect();
    json!({ "cycle": s.cycle, "branches": s.len(), "norm": s.norm_sqr(), "top": top }).to_string()
}

const NORM_TOL: f64 = 1e-9;

fn check(input: &Path, sim: &SimArgs, k: u64, stop_at_meas: bool, drift: f64) -> Result<(), Failure> {
    if k == 0 {
        return Err(Failure::Usage("--reversibility must be at least 1".into()));
    }
    let limits = sim.limits()?;
    let program = load(input)?;
    let machine = Machine::new(&program, limits);
    let mut failures = Vec::new();

    // Reversibility: K cycles forward, K back.
    let init = machine.init_state()?;
    let mut s = init.clone();
    let mut done = 0;
    while done < k {
        let at_meas = s.branches.iter().find(|(c, _)| {
            c.is_active() && machine.fetch(c.pc).map(|i| i.class()) == Some(InstructionClass::Measurement)
        });
        if let Some((c, _)) = at_meas {
            if !stop_at_meas {
                failures.push(format!("cannot invert across measurement at pc {} (cycle {done})", c.pc));
            }
            break;
        }
        let next = machine.step(&s)?;
        if next.branches.iter().any(|(c, _)| !c.is_active()) {
            // Halted or crashed branches have no predecessor to step back to.
            break;
        }
        s = next;
        done += 1;
    }
    for _ in 0..done {
        match machine.step_inverse(&s) {
            Ok(prev) => s = prev,
            Err(e) => {
                failures.push(e.to_string());
                break;
            }
        }
    }
    if failures.is_empty() && !s.approx_eq(&init, 1e-12) {
        failures.push(format!("state after {done} forward and inverse cycles differs from the initial state"));
    }
    out!("reversibility: {done} cycles forward and back");

    // Norm and garbage over a full run.
    let mut worst = 0.0f64;
    let mut states = 0u64;
    let result = machine.run_observed(|s| {
        states += 1;
        worst = worst.max((s.norm_sqr() * (1.0 + drift).powi(2) - 1.0).abs());
    })?;
    out!("norm: {states} states, max |norm - 1| = {worst:.3e}");
    if worst > NORM_TOL {
        failures.push(format!("norm drift {worst:.3e} exceeds {NORM_TOL:e}"));
    }
    let mut dirty = 0;
    for m in &result.ensemble {
        for (c, _) in &m.state.branches {
            let grp = c.reg(Reg::GRP) as usize;
            if grp < program.garbage_base as usize || (grp..c.mem.len()).any(|a| c.mem.get(a) != 0) {
                dirty += 1;
            }
        }
    }
    out!("garbage: {dirty} final branches with non-zero words above the garbage pointer");
    if dirty > 0 {
        failures.push(format!("{dirty} branches have a dirty garbage region"));
    }
    if result.unhalted_mass > 0.0 || result.crashed_mass > 0.0 {
        failures.push(format!(
            "run did not halt cleanly (unhalted {:.3e}, crashed {:.3e})",
            result.unhalted_mass, result.crashed_mass
        ));
    }

    if failures.is_empty() {
        out!("check passed");
        Ok(())
    } else {
        Err(Failure::Runtime(failures.join("\n")))
    }
}
