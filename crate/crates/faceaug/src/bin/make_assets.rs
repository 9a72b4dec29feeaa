//! Writes the bundled head shapes and blendshape deltas to a directory.

use clap::Parser;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "make-assets", about = "Generate the bundled mesh assets")]
struct Cli {
    #[arg(long, default_value = "assets")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = faceaug::assets::write_assets(&cli.out) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    eprintln!("wrote assets to {}", cli.out.display());
}
