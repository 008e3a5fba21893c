use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ssrtb_core::bidder::{AmdpBidder, RmdpPolicy};
use ssrtb_core::dqn::{checkpoint, QNetwork, TrainingLog};
use ssrtb_core::harness::consistency::run_consistency;
use ssrtb_core::harness::convergence::emit_convergence;
use ssrtb_core::harness::experiments::{self, AMDP, KB, M_RMDP, RMDP};
use ssrtb_core::harness::{AlgoMetrics, ExperimentConfig, Lab, MetricsReport, Stream};
use ssrtb_core::multiagent::write_global_log;
use ssrtb_core::AuctionLog;

#[derive(Parser)]
#[command(name = "ssrtb", version, about = "Hour-level DQN bidding for sponsored search on a simulated market")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded days, calibrate every ad and replay KB.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one algorithm on the training days and save its checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a saved network on the test days against KB at equal cost.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// How the network bids: per-hour α or per-block direct price.
        #[arg(long, value_enum, default_value = "rmdp")]
        algo: Algo,
        /// Ad the network belongs to; the first configured ad by default.
        #[arg(long)]
        ad: Option<String>,
    },
    /// Train and compare all algorithms on the configured ads.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Shared-market comparison (KB, RMDP, M-RMDP) instead of single-agent.
        #[arg(long)]
        massive: bool,
    },
    /// Cross-day stability of the hour-level features.
    Consistency {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ad: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Algo {
    Rmdp,
    Amdp,
    MRmdp,
}

impl Algo {
    fn label(self) -> &'static str {
        match self {
            Algo::Rmdp => RMDP,
            Algo::Amdp => AMDP,
            Algo::MRmdp => M_RMDP,
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Algo::Rmdp => "rmdp",
            Algo::Amdp => "amdp",
            Algo::MRmdp => "m-rmdp",
        }
    }
}

/// Named checks whose failure turns the exit code non-zero.
#[derive(Default)]
struct Flags(Vec<(String, bool)>);

impl Flags {
    fn set(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push((name.into(), ok));
    }

    fn report(&self) -> bool {
        for (name, ok) in &self.0 {
            if !ok {
                eprintln!("invariant failed: {name}");
            }
        }
        self.0.iter().all(|(_, ok)| *ok)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut flags = Flags::default();
    match run(cli.command, &mut flags) {
        Ok(()) if flags.report() => ExitCode::SUCCESS,
        Ok(()) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, flags: &mut Flags) -> Result<()> {
    match command {
        Command::Simulate { config, out } => simulate(&prepare(&config)?, &out, flags),
        Command::Train { config, algo, out } => train(&prepare(&config)?, algo, &out, flags),
        Command::Eval { config, checkpoint, algo, ad } => eval(&prepare(&config)?, &checkpoint, algo, ad.as_deref(), flags),
        Command::Compare { config, massive } => compare(&prepare(&config)?, massive, flags),
        Command::Consistency { config, ad } => consistency(&prepare(&config)?, ad.as_deref(), flags),
    }
}

fn prepare(path: &Path) -> Result<Lab> {
    let config = ExperimentConfig::load(path)?;
    Ok(Lab::prepare(config)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn ad_index(lab: &Lab, ad: Option<&str>) -> Result<usize> {
    match ad {
        None => Ok(0),
        Some(id) => match (0..lab.ads.len()).find(|&i| lab.ad_id(i).as_str() == id) {
            Some(i) => Ok(i),
            None => bail!("ad {id} is not in the config"),
        },
    }
}

fn write_days(dir: &Path, split: &str, logs: &[Arc<AuctionLog>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (d, log) in logs.iter().enumerate() {
        log.write_jsonl(&dir.join(format!("{split}-{d:03}.jsonl")))?;
    }
    Ok(())
}

fn simulate(lab: &Lab, out: &Path, flags: &mut Flags) -> Result<()> {
    let train = lab.days(Stream::TrainDay, lab.config.train_days)?;
    let test = lab.days(Stream::TestDay, lab.config.test_days)?;
    write_days(&out.join("days"), "train", &train)?;
    write_days(&out.join("days"), "test", &test)?;
    serde_json::to_writer_pretty(create(out, "calibration.json")?, &lab.calibration)?;

    let mut w = create(out, "kb_episodes.jsonl")?;
    for (split, logs) in [("train", &train), ("test", &test)] {
        for (d, log) in logs.iter().enumerate() {
            for i in 0..lab.ads.len() {
                let r = lab.kb_episode(log, i)?;
                flags.set(format!("budget conserved: {} {split} day {d}", lab.ad_id(i)), r.budget_conserved());
                let line = json!({
                    "split": split,
                    "day": d,
                    "ad": lab.ad_id(i).as_str(),
                    "auctions": log.auctions.len(),
                    "budget": r.budget,
                    "cost": r.cost(),
                    "pur_amt": r.pur_amt(),
                    "clicks": r.totals.clicks,
                    "budget_left": r.final_budget_left,
                });
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()?;
    println!(
        "wrote {} train and {} test days for {} ads to {}",
        train.len(),
        test.len(),
        lab.ads.len(),
        out.display()
    );
    Ok(())
}

fn write_training(out: &Path, stem: &str, log: &TrainingLog) -> Result<()> {
    emit_convergence(log, create(out, &format!("{stem}-training.csv"))?)?;
    let mut w = create(out, &format!("{stem}-episodes.jsonl"))?;
    for e in &log.episodes {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

fn check_training(name: &str, net: &QNetwork, log: &TrainingLog, episodes: usize, flags: &mut Flags) {
    flags.set(format!("{name}: weights finite"), net.is_finite());
    flags.set(format!("{name}: ran {episodes} episodes"), log.episodes.len() == episodes);
}

fn train(lab: &Lab, algo: Algo, out: &Path, flags: &mut Flags) -> Result<()> {
    let logs = lab.days(Stream::TrainDay, lab.config.train_days)?;
    let stem = algo.file_stem();
    match algo {
        Algo::Rmdp | Algo::Amdp => {
            for i in 0..lab.ads.len() {
                let ad = lab.ad_id(i).to_string();
                let (_, budgets) = experiments::kb_baseline(lab, i, &logs)?;
                let (out_i, episodes) = if algo == Algo::Rmdp {
                    (experiments::train_rmdp(lab, i, &logs, &budgets)?, lab.config.trainer.episodes)
                } else {
                    (experiments::train_amdp(lab, i, &logs, &budgets)?.1, lab.config.amdp_trainer().episodes)
                };
                let name = format!("{stem}-{ad}");
                check_training(&name, &out_i.network, &out_i.log, episodes, flags);
                fs::create_dir_all(out)?;
                checkpoint::save(&out.join(format!("{name}.ckpt")), &out_i.network, Some(&out_i.optimizer))?;
                write_training(out, &name, &out_i.log)?;
                println!("{name}: {} batches, final checkpoint {name}.ckpt", out_i.log.batches.len());
            }
        }
        Algo::MRmdp => {
            let budgets: Vec<Vec<f64>> =
                experiments::shared_kb_days(lab, &logs)?.into_iter().map(|(_, b)| b).collect();
            let massive = experiments::train_m_rmdp(lab, &logs, &budgets)?;
            fs::create_dir_all(out)?;
            for (i, (net, log)) in massive.networks.iter().zip(&massive.logs).enumerate() {
                let name = format!("{stem}-{}", lab.ad_id(i));
                check_training(&name, net, log, lab.config.trainer.episodes, flags);
                checkpoint::save(&out.join(format!("{name}.ckpt")), net, None)?;
                write_training(out, &name, log)?;
            }
            write_global_log(&massive.global, create(out, "m-rmdp-global.csv")?)?;
            println!("trained {} agents jointly, checkpoints in {}", massive.networks.len(), out.display());
        }
    }
    Ok(())
}

fn report_flags(report: &MetricsReport, flags: &mut Flags) {
    flags.set("report: budgets conserved and metrics finite", report.invariants_hold());
}

fn emit_report(lab: &Lab, report: &MetricsReport, name: &str) -> Result<()> {
    println!("{report}");
    if let Some(dir) = &lab.config.output_dir {
        report.write_csv(create(dir, name)?)?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn eval(lab: &Lab, path: &Path, algo: Algo, ad: Option<&str>, flags: &mut Flags) -> Result<()> {
    let i = ad_index(lab, ad)?;
    let (net, _) = checkpoint::load(path)?;
    let logs = lab.days(Stream::TestDay, lab.config.test_days)?;
    let (kb_days, budgets) = experiments::kb_baseline(lab, i, &logs)?;
    let results = match algo {
        Algo::Rmdp | Algo::MRmdp => {
            let net = Arc::new(net);
            let states = lab.states(i)?;
            experiments::replay(lab, i, &logs, &budgets, || Ok(RmdpPolicy::new(net.clone(), states.clone())))?
        }
        Algo::Amdp => {
            // a saved network counts as trained
            let model = Arc::new(experiments::amdp_model(lab, i, net, 1)?);
            experiments::replay(lab, i, &logs, &budgets, || AmdpBidder::new(model.clone()))?
        }
    };
    let ad = lab.ad_id(i).to_string();
    let kb = AlgoMetrics::from_results(&kb_days);
    let mut report = MetricsReport::default();
    report.push(&ad, KB, "test", kb.clone(), &kb);
    report.push(&ad, algo.label(), "test", AlgoMetrics::from_results(&results), &kb);
    report_flags(&report, flags);
    emit_report(lab, &report, &format!("eval-{}-{ad}.csv", algo.file_stem()))
}

fn compare(lab: &Lab, massive: bool, flags: &mut Flags) -> Result<()> {
    if massive {
        let cmp = experiments::compare_massive(lab)?;
        report_flags(&cmp.report, flags);
        emit_report(lab, &cmp.report, "compare-massive.csv")?;
        if let Some(dir) = &lab.config.output_dir {
            for (i, out) in cmp.rmdp.iter().enumerate() {
                emit_convergence(&out.log, create(dir, &format!("shared-rmdp-{}-training.csv", lab.ad_id(i)))?)?;
            }
            for (i, log) in cmp.m_rmdp.logs.iter().enumerate() {
                emit_convergence(log, create(dir, &format!("m-rmdp-{}-training.csv", lab.ad_id(i)))?)?;
            }
            write_global_log(&cmp.m_rmdp.global, create(dir, "m-rmdp-global.csv")?)?;
        }
        println!(
            "mean PUR_AMT/COST: KB {:.4}, RMDP {:.4}, M-RMDP {:.4}",
            cmp.mean_headline(KB),
            cmp.mean_headline(RMDP),
            cmp.mean_headline(M_RMDP)
        );
    } else {
        let cmp = experiments::compare_single(lab)?;
        report_flags(&cmp.report, flags);
        emit_report(lab, &cmp.report, "compare.csv")?;
        if let Some(dir) = &lab.config.output_dir {
            for (i, run) in cmp.runs.iter().enumerate() {
                emit_convergence(&run.rmdp.log, create(dir, &format!("rmdp-{}-training.csv", lab.ad_id(i)))?)?;
                emit_convergence(&run.amdp.log, create(dir, &format!("amdp-{}-training.csv", lab.ad_id(i)))?)?;
            }
        }
        for split in ["train", "test"] {
            println!(
                "{split}: mean improvement over KB  RMDP {:+.2}%  AMDP {:+.2}%",
                100.0 * cmp.report.mean_improvement(RMDP, split),
                100.0 * cmp.report.mean_improvement(AMDP, split)
            );
        }
    }
    Ok(())
}

fn consistency(lab: &Lab, ad: Option<&str>, flags: &mut Flags) -> Result<()> {
    let i = ad_index(lab, ad)?;
    let run = run_consistency(lab, i)?;
    flags.set("η < 0.03 implies a substitutable ratio", run.chain_holds()?);
    println!(
        "{}: {} pairs, {} cells evaluated, {} excluded, {:.1}% stable",
        lab.ad_id(i),
        run.reports.len(),
        run.evaluated(),
        run.excluded(),
        100.0 * run.pass_rate()
    );
    if let Some(dir) = &lab.config.output_dir {
        let name = format!("consistency-{}.csv", lab.ad_id(i));
        run.write_csv(create(dir, &name)?)?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
