//! `sacropipe`: orchestration binary for the anatomy-aware
//! pelvic-radiograph classification pipeline.

mod args;
mod stages;
mod svg;
mod util;

use clap::Parser;

use args::{Cli, Cmd};

fn run(cli: &Cli) -> sacropipe_core::Result<()> {
    util::init_threads()?;
    match &cli.cmd {
        Cmd::Generate(a) => stages::generate(a),
        Cmd::TrainSeg(a) => stages::train_seg(a),
        Cmd::Segment(a) => stages::segment(a),
        Cmd::Crop(a) => stages::crop(a),
        Cmd::TrainClf(a) => stages::train_clf(a),
        Cmd::CalibrateCutoff(a) => stages::calibrate_cutoff(a),
        Cmd::Evaluate(a) => stages::evaluate(a),
        Cmd::Compare(a) => stages::compare(a),
        Cmd::Followup(a) => stages::followup(a),
        Cmd::Explain(a) => stages::explain(a),
        Cmd::Report(a) => stages::report(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(util::exit_code(&e));
    }
}
