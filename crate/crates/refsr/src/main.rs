use std::process::ExitCode;

use clap::{Parser, Subcommand};
use refsr::stages::{self, Ctx};

/// Reference-based image and video super-resolution (×4): matcher
/// training, SR training and inference, dataset tooling and evaluation.
///
/// Exit codes: 0 success, 2 missing input or upstream checkpoint, 3 metric
/// failure, 1 any other error.
#[derive(Parser, Debug)]
#[command(name = "refsr", version, after_help = "Environment:\n  REFSR_DATA_ROOT  base directory for relative paths inside manifests (default: the manifest's directory)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise homography pairs or translating clips.
    MakePairs(stages::MakePairsArgs),
    /// Build the small/medium/large transformation benchmark.
    MakeBenchmark(stages::MakeBenchmarkArgs),
    /// Pair curated queries with selected pool references.
    AssembleDataset(stages::AssembleArgs),
    /// Train the HR-HR teacher matcher.
    TrainTeacher(stages::TrainTeacherArgs),
    /// Train the LR-HR student matcher with distillation.
    TrainStudent(stages::TrainStudentArgs),
    /// Train reference-based image SR.
    TrainSr(stages::TrainSrArgs),
    /// Super-resolve one image.
    InferSr(stages::InferSrArgs),
    /// Train reference-based video SR.
    TrainVsr(stages::TrainVsrArgs),
    /// Super-resolve a clip.
    InferVsr(stages::InferVsrArgs),
    /// Evaluate weights on a manifest.
    Eval(stages::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { command_line: std::env::args().collect() };
    let res = match &cli.command {
        Command::MakePairs(a) => stages::make_pairs(&ctx, a),
        Command::MakeBenchmark(a) => stages::make_benchmark(&ctx, a),
        Command::AssembleDataset(a) => stages::assemble(&ctx, a),
        Command::TrainTeacher(a) => stages::train_teacher(&ctx, a),
        Command::TrainStudent(a) => stages::train_student(&ctx, a),
        Command::TrainSr(a) => stages::train_sr(&ctx, a),
        Command::InferSr(a) => stages::infer_sr(&ctx, a),
        Command::TrainVsr(a) => stages::train_vsr(&ctx, a),
        Command::InferVsr(a) => stages::infer_vsr(&ctx, a),
        Command::Eval(a) => stages::eval(&ctx, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
