use clap::{Parser, Subcommand};
use fedgrid_cli::commands;

/// Simulation and federated reinforcement-learning harness for
/// adversarially attacked networked microgrids.
#[derive(Parser)]
#[command(name = "fedgrid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train resilient controllers (FedSAC or decentralized SAC).
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on held-out attack scenarios.
    Eval(commands::eval::EvalArgs),
    /// Run one episode without trained agents and export the voltage trace.
    Simulate(commands::simulate::SimulateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
