use clap::Parser;

use kelp::cli::{run, usage_exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KELP_LOG", "warn")).init();
    let code = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            usage_exit_code(&e)
        }
    };
    std::process::exit(code);
}
