use clap::Parser;
use foba_select::{config_from_cli, execute, Cli};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOBA_SELECT_LOG", "warn"))
        .init();
    let cfg = config_from_cli(Cli::parse())?;
    execute(&cfg)
}
