use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    fcf_cli::run(fcf_cli::Cli::parse())?;
    Ok(())
}
