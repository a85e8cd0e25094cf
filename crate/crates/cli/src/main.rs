use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use perm_core::pipeline::{
    ability_trajectory_report, derive_seed, read_jsonl, sample_eval_levels, write_jsonl, Condition,
    Corpus, RunConfig, SessionLog, TeachMode,
};
use perm_core::students::StudentSpec;
use perm_core::{
    compare_curricula, evaluate, load_checkpoint, stage1_collect, stage2_teach,
    train_perm_from_corpus, TrainConfig,
};
use perm_tool::{router, AppState, ServerConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "perm",
    version,
    about = "Ability-matched level generation for Jumper"
)]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: play domain-randomized levels and write a corpus.
    Collect {
        #[arg(long, default_value_t = 15_000)]
        episodes: usize,
        /// `scripted:<skill>` or `learner`.
        #[arg(long)]
        student: StudentSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model on one or more corpora.
    TrainPerm {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// JSON training config; fields left out keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch ELBO trace (JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Stage 2: teach one student per seed and write the session logs.
    Teach {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "perm")]
        condition: Condition,
        #[arg(long, default_value = "learner")]
        student: StudentSpec,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// One attempt per level for this many attempts instead of the
        /// trial/10 levels/test session.
        #[arg(long)]
        continuous: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fresh student on held-out levels.
    Evaluate {
        #[arg(long, default_value = "learner")]
        student: StudentSpec,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train learners under every condition and compare them.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 2_000)]
        training_attempts: usize,
        #[command(flatten)]
        eval: EvalArgs,
        /// Per-seed table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ability trajectories by final-test performance group.
    Report {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve human-playable sessions over HTTP.
    Serve {
        #[arg(long, env = "PERM_MODEL")]
        model: PathBuf,
        #[arg(long, env = "PERM_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "PERM_HOST", default_value = "127.0.0.1")]
        host: String,
        /// Put every session in this condition instead of assigning at random.
        #[arg(long, env = "PERM_CONDITION")]
        condition: Option<Condition>,
        #[arg(long, env = "PERM_SEED", default_value_t = 0)]
        seed: u64,
        /// Write all session logs here (JSONL) on shutdown.
        #[arg(long, env = "PERM_DUMP")]
        dump: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = 20)]
    eval_levels: usize,
    #[arg(long, default_value_t = 9_999)]
    eval_seed: u64,
    #[arg(long, default_value_t = 15)]
    attempts_cap: usize,
}

/// What a command reports: a JSON value for `--json`, a line otherwise.
#[derive(Debug)]
struct Output {
    json: serde_json::Value,
    human: String,
}

fn output<T: Serialize>(value: &T, human: impl FnOnce() -> String) -> Result<Output> {
    Ok(Output {
        json: serde_json::to_value(value)?,
        human: human(),
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Serve {
            model,
            port,
            host,
            condition,
            seed,
            dump,
        } => return serve(model, &host, port, condition, seed, dump),
        command => run(command)?,
    };
    if cli.json {
        println!("{}", out.json);
    } else {
        println!("{}", out.human);
    }
    Ok(())
}

fn run(command: Command) -> Result<Output> {
    match command {
        Command::Collect {
            episodes,
            student,
            seed,
            out,
        } => {
            let corpus = stage1_collect(&student, episodes, seed)?;
            corpus.write_jsonl(&out)?;
            let summary = serde_json::json!({
                "records": corpus.len(),
                "normalizer": corpus.normalizer,
                "out": out,
            });
            output(&summary, || {
                format!("wrote {} records to {}", corpus.len(), out.display())
            })
        }
        Command::TrainPerm {
            corpus,
            config,
            seed,
            out,
            trace,
        } => {
            let parts = corpus
                .iter()
                .map(|p| Corpus::read_jsonl(p))
                .collect::<Result<Vec<_>, _>>()?;
            let corpus = Corpus::merge(parts)?;
            let mut cfg: TrainConfig = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (_, tr) = train_perm_from_corpus(&corpus, &cfg, Some(&out), trace.as_deref())?;
            let first = tr.initial.map(|e| e.total);
            let last = tr.totals().last().copied();
            let summary = serde_json::json!({
                "records": corpus.len(),
                "epochs": tr.epochs.len(),
                "initial_elbo": first,
                "final_elbo": last,
                "out": out,
            });
            output(&summary, || {
                format!(
                    "trained on {} records; ELBO {:.4} -> {:.4}; wrote {}",
                    corpus.len(),
                    first.unwrap_or(f64::NAN),
                    last.unwrap_or(f64::NAN),
                    out.display()
                )
            })
        }
        Command::Teach {
            model,
            condition,
            student,
            seeds,
            continuous,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let cfg = RunConfig {
                condition,
                seeds: seeds.clone(),
                ..RunConfig::default()
            };
            let mode = match continuous {
                Some(attempts) => TeachMode::Continuous { attempts },
                None => TeachMode::Session,
            };
            let mut logs = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let mut s = student.build();
                logs.push(stage2_teach(
                    &model,
                    &mut s,
                    &student.to_string(),
                    &cfg,
                    mode,
                    seed,
                )?);
            }
            write_jsonl(&out, &logs)?;
            let rows: Vec<_> = logs
                .iter()
                .map(|l| {
                    serde_json::json!({
                        "seed": l.seed,
                        "levels": l.levels.len(),
                        "attempts": l.all_levels().map(|x| x.attempts.len()).sum::<usize>(),
                        "test_completed": l.test.as_ref().map(|t| t.completed()),
                    })
                })
                .collect();
            output(&rows, || {
                format!(
                    "wrote {} {condition} session logs to {}",
                    logs.len(),
                    out.display()
                )
            })
        }
        Command::Evaluate {
            student,
            eval,
            seed,
        } => {
            let levels = sample_eval_levels(eval.eval_seed, eval.eval_levels)?;
            let mut s = student.build();
            let report = evaluate(&mut s, &levels, eval.attempts_cap, derive_seed(seed, 2))?;
            output(&report, || {
                format!(
                    "completion {:.3}, mean max depth {:.2}, mean steps {:.2}",
                    report.completion_rate, report.mean_max_depth, report.mean_steps_per_attempt
                )
            })
        }
        Command::Compare {
            model,
            seeds,
            training_attempts,
            eval,
            csv,
        } => {
            let model = load_checkpoint(&model)?;
            let cfg = RunConfig {
                seeds,
                training_attempts,
                eval_levels: eval.eval_levels,
                eval_seed: eval.eval_seed,
                attempts_cap: eval.attempts_cap,
                ..RunConfig::default()
            };
            let report = compare_curricula(&model, &cfg)?;
            if let Some(path) = &csv {
                std::fs::write(path, report.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            output(&report, || {
                report
                    .conditions
                    .iter()
                    .map(|c| {
                        format!(
                            "{:<7} completion {:.3}  max depth {:.2}  attempts {}",
                            c.condition,
                            c.report.completion_rate,
                            c.report.mean_max_depth,
                            c.training_attempts
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Report { logs, csv } => {
            let logs: Vec<SessionLog> = read_jsonl(&logs)?;
            if logs.is_empty() {
                bail!("no session logs");
            }
            let report = ability_trajectory_report(&logs);
            if let Some(path) = &csv {
                std::fs::write(path, report.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            output(&report, || report.to_csv().trim_end().to_string())
        }
        Command::Serve { .. } => bail!("serve runs from main"),
    }
}

#[tokio::main]
async fn serve(
    model: PathBuf,
    host: &str,
    port: u16,
    condition: Option<Condition>,
    seed: u64,
    dump: Option<PathBuf>,
) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let model = load_checkpoint(&model)?;
    let state = AppState::new(
        model,
        ServerConfig {
            condition_override: condition,
            seed,
        },
    );
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(path) = dump {
        let logs: Vec<SessionLog> = state.summaries().into_iter().map(|(_, l)| l).collect();
        write_jsonl(&path, &logs)?;
        tracing::info!("wrote {} session logs to {}", logs.len(), path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(dir: &std::path::Path, args: &[&str]) -> Result<serde_json::Value> {
        // Relative paths resolve inside `dir`.
        let args = args.iter().map(|a| {
            if std::path::Path::new(a).extension().is_some() {
                dir.join(a).display().to_string()
            } else {
                a.to_string()
            }
        });
        let cli = Cli::try_parse_from(std::iter::once("perm".to_string()).chain(args))?;
        Ok(run(cli.command)?.json)
    }

    #[test]
    fn collect_train_teach_report_evaluate_compare() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let c = perm(
            d,
            &[
                "collect",
                "--episodes",
                "120",
                "--student",
                "scripted:-1",
                "--out",
                "a.jsonl",
            ],
        )
        .unwrap();
        assert_eq!(c["records"], 120);
        perm(
            d,
            &[
                "collect",
                "--episodes",
                "120",
                "--student",
                "scripted:1",
                "--seed",
                "1",
                "--out",
                "b.jsonl",
            ],
        )
        .unwrap();

        std::fs::write(
            d.join("cfg.json"),
            r#"{"hidden": [8], "epochs": 4, "batch_size": 32}"#,
        )
        .unwrap();
        let t = perm(
            d,
            &[
                "train-perm",
                "--corpus",
                "a.jsonl",
                "b.jsonl",
                "--config",
                "cfg.json",
                "--out",
                "m.ckpt",
                "--trace",
                "trace.json",
            ],
        )
        .unwrap();
        assert_eq!(t["records"], 240);
        assert_eq!(t["epochs"], 4);
        assert!(d.join("m.ckpt").exists() && d.join("trace.json").exists());

        let logs = perm(
            d,
            &[
                "teach",
                "--model",
                "m.ckpt",
                "--student",
                "scripted:0",
                "--seeds",
                "0,1,2,3",
                "--out",
                "logs.jsonl",
            ],
        )
        .unwrap();
        let rows = logs.as_array().unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r["levels"] == 10));

        let report = perm(d, &["report", "--logs", "logs.jsonl", "--csv", "traj.csv"]).unwrap();
        assert_eq!(report["assignments"].as_array().unwrap().len(), 4);
        assert!(
            std::fs::read_to_string(d.join("traj.csv"))
                .unwrap()
                .lines()
                .count()
                > 1
        );

        let e = perm(
            d,
            &["evaluate", "--student", "scripted:40", "--eval-levels", "5"],
        )
        .unwrap();
        assert_eq!(e["completion_rate"], 1.0);

        let cmp = perm(
            d,
            &[
                "compare",
                "--model",
                "m.ckpt",
                "--seeds",
                "0,1",
                "--training-attempts",
                "50",
                "--eval-levels",
                "3",
                "--csv",
                "cmp.csv",
            ],
        )
        .unwrap();
        let conditions = cmp["conditions"].as_array().unwrap();
        assert_eq!(conditions.len(), 3);
        assert_eq!(conditions[2]["training_attempts"], 0);
        assert!(d.join("cmp.csv").exists());
    }

    #[test]
    fn bad_arguments_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        for args in [
            vec!["collect", "--student", "wizard", "--out", "x.jsonl"],
            vec!["teach", "--model", "missing.ckpt", "--out", "x.jsonl"],
            vec![
                "teach",
                "--model",
                "m.ckpt",
                "--condition",
                "hard",
                "--out",
                "x.jsonl",
            ],
            vec!["report", "--logs", "absent.jsonl"],
        ] {
            let err = perm(dir.path(), &args).unwrap_err();
            assert!(!err.to_string().is_empty(), "{args:?}");
        }
    }

    #[test]
    fn serve_reads_its_settings_from_the_environment() {
        std::env::set_var("PERM_CONDITION", "none");
        let cli =
            Cli::try_parse_from(["perm", "serve", "--model", "m.ckpt", "--port", "9000"]).unwrap();
        std::env::remove_var("PERM_CONDITION");
        match cli.command {
            Command::Serve {
                port, condition, ..
            } => {
                assert_eq!(port, 9000);
                assert_eq!(condition, Some(Condition::None));
            }
            _ => panic!("parsed the wrong command"),
        }
    }
}
