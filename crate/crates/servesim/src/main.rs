use clap::Parser;
use servesim::cli::{execute, Cli};

fn main() -> anyhow::Result<()> {
    let line = execute(Cli::parse())?;
    println!("{line}");
    Ok(())
}
