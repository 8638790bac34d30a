use clap::Parser;
use switchavg_cli::error::EXIT_CONFIG;
use switchavg_cli::{parse_config, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let (task, args) = cli.command.split();
    let outcome = parse_config(task, args).and_then(|config| {
        let summary = run(&config)?;
        Ok((config, summary))
    });
    match outcome {
        Ok((config, summary)) => {
            let note = if summary.certified { "" } else { " (uncertified)" };
            println!(
                "{}: wrote {} rows to {}{note} in {:.2}s",
                task.name(),
                summary.rows,
                config.out_dir.join(switchavg_cli::run::RESULTS_FILE).display(),
                summary.wall_clock_secs
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
