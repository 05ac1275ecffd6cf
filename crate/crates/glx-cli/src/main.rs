//! `glx`: batch interface for graph-coupled boundary value problems.
//!
//! Exit codes: 0 = all checks passed, 1 = a mathematical check failed,
//! 2 = input or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glx_core::io::{dispersion_csv, parse_graph, parse_quantum_graph, spectrum_csv, GraphJson};
use glx_core::qgraph::{equilateral_spectrum, neumann_spectrum};
use glx_core::space::C64;
use glx_core::verify::run_suite;

#[derive(Parser)]
#[command(name = "glx", version, about = "graph-coupled boundary value problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Graph constructions, spectra and DtN operators.
    Graph(GraphArgs),
    /// Quantum-graph spectra and dispersion scans.
    Qg(QgArgs),
    /// Run a named verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the subdivision graph.
    #[arg(long, conflicts_with_all = ["line", "spectrum", "dtn"])]
    subdivision: bool,
    /// Emit the line graph.
    #[arg(long, conflicts_with_all = ["spectrum", "dtn"])]
    line: bool,
    /// Emit the normalised Laplacian spectrum (ascending).
    #[arg(long, conflicts_with = "dtn")]
    spectrum: bool,
    /// Emit the DtN operator at z (RE or RE,IM); needs a boundary in the input.
    #[arg(long, value_name = "Z")]
    dtn: Option<String>,
}

#[derive(Args)]
struct QgArgs {
    /// spectrum | equilateral | dispersion
    mode: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scan window (two values).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    window: Vec<f64>,
    #[arg(long, value_name = "X")]
    grid_step: Option<f64>,
    #[arg(long, value_name = "X", default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct VerifyArgs {
    /// krein | green | specrel | subdivision-corollary | edge-model |
    /// thm314 | thm35 | prop210 | thm42 | all
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GLX_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Graph(args) => cmd_graph(args),
        Command::Qg(args) => cmd_qg(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn read_input(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn parse_z(text: &str) -> Result<C64, String> {
    let parts: Vec<&str> = text.split(',').collect();
    match parts.as_slice() {
        [re] => re
            .trim()
            .parse::<f64>()
            .map(|x| C64::new(x, 0.0))
            .map_err(|e| format!("bad z value '{text}': {e}")),
        [re, im] => {
            let re = re.trim().parse::<f64>().map_err(|e| format!("bad z: {e}"))?;
            let im = im.trim().parse::<f64>().map_err(|e| format!("bad z: {e}"))?;
            Ok(C64::new(re, im))
        }
        _ => Err(format!("bad z value '{text}'")),
    }
}

fn cmd_graph(args: GraphArgs) -> Result<ExitCode, String> {
    let text = read_input(&args.input)?;
    let (graph, boundary) = parse_graph(&text).map_err(|e| e.to_string())?;
    if args.subdivision {
        let sg = graph.subdivision();
        let json = serde_json::to_string_pretty(&GraphJson::from_graph(&sg, None)).unwrap();
        emit(&args.out, &json)?;
    } else if args.line {
        let lg = graph.line_graph();
        let json = serde_json::to_string_pretty(&GraphJson::from_graph(&lg, None)).unwrap();
        emit(&args.out, &json)?;
    } else if args.spectrum {
        let spec = graph.spectrum().map_err(|e| e.to_string())?;
        emit(&args.out, &serde_json::to_string_pretty(&spec).unwrap())?;
    } else if let Some(ztext) = args.dtn {
        let z = parse_z(&ztext)?;
        let bd = boundary.ok_or("the input has no 'boundary' field")?;
        let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
        let pi = glx_core::abvp::graph_abvp(&graph, &ids).map_err(|e| e.to_string())?;
        let lam = pi.dtn(z).map_err(|e| e.to_string())?;
        let rows = glx_core::io::matrix_to_rows(lam.coeffs());
        emit(&args.out, &serde_json::to_string_pretty(&rows).unwrap())?;
    } else {
        return Err("choose one of --subdivision, --line, --spectrum, --dtn".into());
    }
    Ok(ExitCode::SUCCESS)
}

fn csv_path(out: &Path) -> PathBuf {
    let mut path = out.to_path_buf();
    path.set_extension("csv");
    path
}

fn cmd_qg(args: QgArgs) -> Result<ExitCode, String> {
    let text = read_input(&args.input)?;
    let qg = parse_quantum_graph(&text).map_err(|e| e.to_string())?;
    let window = match args.window.as_slice() {
        [lo, hi] if lo < hi => (*lo, *hi),
        [] => (0.0, 25.0),
        _ => return Err("--window needs LO < HI".into()),
    };
    let grid_step = args.grid_step.unwrap_or((window.1 - window.0) / 2000.0);
    if grid_step <= 0.0 || args.tol <= 0.0 {
        return Err("grid step and tolerance must be positive".into());
    }
    match args.mode.as_str() {
        "spectrum" => {
            let report =
                neumann_spectrum(&qg, window, grid_step, args.tol).map_err(|e| e.to_string())?;
            std::fs::write(&args.out, glx_core::io::spectrum_report_json(&report))
                .map_err(|e| e.to_string())?;
            std::fs::write(csv_path(&args.out), spectrum_csv(&report))
                .map_err(|e| e.to_string())?;
        }
        "equilateral" => {
            for (e, &l) in qg.lengths.iter().enumerate() {
                if (l - 1.0).abs() > 1e-12 {
                    return Err(format!("edge {e} has length {l}; equilateral needs 1"));
                }
                if (&qg.fibres[e] - &qg.fibres[0]).norm() > 1e-12 {
                    return Err("equilateral needs identical fibres".into());
                }
            }
            let report = equilateral_spectrum(&qg.graph, &qg.fibres[0], window)
                .map_err(|e| e.to_string())?;
            std::fs::write(&args.out, glx_core::io::spectrum_report_json(&report))
                .map_err(|e| e.to_string())?;
            std::fs::write(csv_path(&args.out), spectrum_csv(&report))
                .map_err(|e| e.to_string())?;
        }
        "dispersion" => {
            let csv = dispersion_csv(&qg, window, grid_step).map_err(|e| e.to_string())?;
            std::fs::write(&args.out, csv).map_err(|e| e.to_string())?;
        }
        other => return Err(format!("unknown qg mode '{other}'")),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, String> {
    let reports =
        run_suite(&args.suite, args.seed).ok_or(format!("unknown suite '{}'", args.suite))?;
    let json = serde_json::to_string_pretty(&reports).unwrap();
    if let Some(out) = &args.out {
        std::fs::write(out, &json).map_err(|e| e.to_string())?;
    }
    println!("{json}");
    let all_pass = reports.iter().all(|r| r.pass);
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
