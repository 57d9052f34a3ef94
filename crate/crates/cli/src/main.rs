//! `svat`: synthetic markets, risk-aware ranking model training, daily top-k
//! backtesting, ranking-entropy risk tables and the built-in verification
//! suite. Every command is deterministic in `--seed`.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use config::{CommonArgs, RunConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use svat_core::backtest::{self, BacktestReport, DayScores, Strategy};
use svat_core::checkpoint::Checkpoint;
use svat_core::data::{
    build_examples, ingest_csv, normalize, panel_csv_paths, synth_market, write_panel_csvs,
    CalendarPolicy, DateRange, RegimeSpec, SplitSpec, StockPanel,
};
use svat_core::entropy::{quantify_day, EntropyConfig};
use svat_core::model::ModelConfig;
use svat_core::ranker::BackboneConfig;
use svat_core::trainer::{self, epoch_log_csv, TrainConfig};
use svat_core::vpg::VpgConfig;

#[derive(Parser)]
#[command(name = "svat", version, about = "Risk-aware stock ranking workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic market as per-symbol CSVs plus a manifest.
    Synth(SynthArgs),
    /// Train a model; writes best/final checkpoints and the epoch log.
    Train(TrainArgs),
    /// Backtest a checkpoint, a score file, or the buy-and-hold index.
    Backtest(BacktestArgs),
    /// Per-stock ranking-entropy risk table over the test split.
    Quantify(QuantifyArgs),
    /// Run the built-in verification suite; nonzero exit on any failure.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to score and backtest.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Pre-computed score file (date,symbol,score) to backtest instead.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// `topk` (default) or `buyhold`.
    #[arg(long, default_value = "topk")]
    strategy: String,
    /// Second score file; reports score correlation (PCC) and top-k
    /// selection difference (TSD) against the primary scores.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct QuantifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Synth(a) => cmd_synth(a)?,
        Cmd::Train(a) => cmd_train(a)?,
        Cmd::Backtest(a) => cmd_backtest(a)?,
        Cmd::Quantify(a) => cmd_quantify(a)?,
        Cmd::Verify(a) => return cmd_verify(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn required_out(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out.clone().ok_or_else(|| anyhow!("--out is required"))
}

fn load_panel(cfg: &RunConfig) -> Result<StockPanel> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("--data is required"))?;
    let paths = panel_csv_paths(dir)?;
    Ok(ingest_csv(&paths, CalendarPolicy::Union)?)
}

// ── synth ────────────────────────────────────────────────────────────

#[derive(serde::Serialize)]
struct Manifest<'a> {
    seed: u64,
    stocks: usize,
    days: usize,
    symbols: Vec<&'a str>,
    regime: &'a RegimeSpec,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let out = required_out(&cfg)?;
    if out.exists() && std::fs::read_dir(&out)?.next().is_some() && !args.force {
        bail!(
            "output directory {} is not empty (use --force to overwrite)",
            out.display()
        );
    }
    let regime = RegimeSpec::default();
    let panel = synth_market(cfg.seed, cfg.stocks, cfg.days, &regime)?;
    write_panel_csvs(&panel, &out)?;
    let manifest = Manifest {
        seed: cfg.seed,
        stocks: panel.n_stocks(),
        days: panel.n_days(),
        symbols: panel.stock_ids().iter().map(|s| s.as_str()).collect(),
        regime: &regime,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "wrote {} stocks x {} days to {}",
        panel.n_stocks(),
        panel.n_days(),
        out.display()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

fn split_from_config(panel: &StockPanel, cfg: &RunConfig) -> Result<SplitSpec> {
    let train_end = cfg
        .train_end
        .ok_or_else(|| anyhow!("--train-end is required"))?;
    let valid_end = cfg
        .valid_end
        .ok_or_else(|| anyhow!("--valid-end is required"))?;
    let cal = panel.calendar();
    let first = cal[0];
    let last = *cal.last().expect("non-empty calendar");
    let valid_start = cal
        .iter()
        .copied()
        .find(|&d| d > train_end)
        .ok_or_else(|| anyhow!("no trading day after --train-end {train_end}"))?;
    let test_start = cal
        .iter()
        .copied()
        .find(|&d| d > valid_end)
        .ok_or_else(|| anyhow!("no trading day after --valid-end {valid_end}"))?;
    if !(first <= train_end && train_end < valid_end && valid_end < last) {
        bail!("usage error: split dates must satisfy {first} <= train-end < valid-end < {last}");
    }
    Ok(SplitSpec::new(
        DateRange::new(first, train_end)?,
        DateRange::new(valid_start, valid_end)?,
        DateRange::new(test_start, last)?,
    )?)
}

fn model_config_from(cfg: &RunConfig) -> ModelConfig {
    ModelConfig {
        lookback: cfg.lookback,
        feature_dim: svat_core::data::FEATURE_DIM,
        backbone: BackboneConfig {
            psi_kind: cfg.backbone,
            embed_dim: cfg.embed_dim,
            head_hidden: vec![cfg.head_hidden],
        },
        vpg: VpgConfig {
            epsilon: cfg.epsilon,
            latent_dim: cfg.latent_dim,
            encoder_hidden: vec![cfg.vpg_hidden, cfg.vpg_hidden],
            prior_hidden: vec![cfg.vpg_hidden, cfg.vpg_hidden],
            decoder_hidden: vec![cfg.vpg_hidden, cfg.vpg_hidden],
        },
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let out = required_out(&cfg)?;
    let raw = load_panel(&cfg)?;
    let split = split_from_config(&raw, &cfg)?;
    let panel = normalize(&raw, &split.train)?;

    let train_config = TrainConfig {
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        epsilon: cfg.epsilon,
        lr: cfg.lr,
        epochs: cfg.epochs,
        lookback: cfg.lookback,
        seed: cfg.seed,
        pair_subsample: cfg.pair_subsample,
    };
    let outcome = trainer::train(
        &panel,
        &split,
        model_config_from(&cfg),
        train_config,
        cfg.k,
        cfg.rf,
    )?;
    std::fs::create_dir_all(&out)?;
    outcome.best.save(&out.join("checkpoint_best.svat"))?;
    outcome.last.save(&out.join("checkpoint_final.svat"))?;
    std::fs::write(out.join("train_log.csv"), epoch_log_csv(&outcome.log))?;
    let final_log = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs; best valid SR {} at epoch {}; outputs in {}",
        cfg.epochs,
        outcome
            .best
            .valid_sr
            .map(|v| v.to_string())
            .unwrap_or_else(|| "undefined".into()),
        outcome.best.epoch,
        out.display()
    );
    println!(
        "final epoch: L={} L_adv={} L_KL={} L_com={}",
        final_log.l, final_log.l_adv, final_log.l_kl, final_log.l_com
    );
    Ok(())
}

// ── backtest ─────────────────────────────────────────────────────────

fn score_file_rows(path: &Path, panel: &StockPanel) -> Result<Vec<DayScores>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scores {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("date,symbol,score") => {}
        other => bail!("score file must start with `date,symbol,score`, got {other:?}"),
    }
    let index: BTreeMap<&str, usize> = panel
        .stock_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut by_date: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (date, symbol, score) = (
            fields.next().unwrap_or(""),
            fields.next().unwrap_or(""),
            fields.next().unwrap_or(""),
        );
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .with_context(|| format!("line {}: bad date `{date}`", no + 2))?;
        let i = *index
            .get(symbol)
            .ok_or_else(|| anyhow!("line {}: unknown symbol `{symbol}`", no + 2))?;
        let score: f64 = score
            .parse()
            .with_context(|| format!("line {}: bad score `{score}`", no + 2))?;
        let slot = by_date
            .entry(date)
            .or_insert_with(|| vec![None; panel.n_stocks()]);
        slot[i] = Some(score);
    }
    let mut out = Vec::with_capacity(by_date.len());
    for (date, scores) in by_date {
        let scores: Option<Vec<f64>> = scores.into_iter().collect();
        let scores =
            scores.ok_or_else(|| anyhow!("{date}: score file misses some panel symbols"))?;
        out.push(DayScores { date, scores });
    }
    Ok(out)
}

/// Clean scores from a checkpoint over its test range, dated by selection day.
fn checkpoint_scores(ck: &Checkpoint, raw: &StockPanel) -> Result<(StockPanel, Vec<DayScores>)> {
    let panel = normalize(raw, &ck.split.train)?;
    let batches = build_examples(&panel, ck.train_config.lookback, &ck.split.test)?;
    if batches.is_empty() {
        bail!("test range yields no day batches");
    }
    let mut out = Vec::with_capacity(batches.len());
    for batch in &batches {
        let scores = trainer::score_day_batch(&ck.model, batch)?;
        out.push(DayScores {
            date: panel.date(batch.target_day - 1),
            scores,
        });
    }
    Ok((panel, out))
}

fn report_text(report: &BacktestReport, extra: &[String]) -> String {
    let sr = report
        .sr
        .map(|v| v.to_string())
        .unwrap_or_else(|| "undefined".into());
    let mut out = format!(
        "irr_total={}\nsr={}\nmdd={}%\nn_days={}\nk={}\nr_f={}\n",
        report.irr_total,
        sr,
        report.mdd,
        report.daily.len(),
        report.k,
        report.r_f
    );
    for line in extra {
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn daily_csv(report: &BacktestReport) -> String {
    let mut out = String::from("date,irr_t,selected_symbols\n");
    for d in &report.daily {
        out.push_str(&format!(
            "{},{},{}\n",
            d.date.format("%Y-%m-%d"),
            d.irr,
            d.selected.join("|")
        ));
    }
    out
}

fn scores_csv(day_scores: &[DayScores], panel: &StockPanel) -> String {
    let mut out = String::from("date,symbol,score\n");
    for ds in day_scores {
        for (i, s) in ds.scores.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                ds.date.format("%Y-%m-%d"),
                panel.stock_ids()[i],
                s
            ));
        }
    }
    out
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let out = required_out(&cfg)?;
    let raw = load_panel(&cfg)?;
    std::fs::create_dir_all(&out)?;

    if args.strategy == "buyhold" {
        // The index needs no model; its range comes from the checkpoint's
        // test split when one is given, otherwise the whole panel.
        let range = match &args.checkpoint {
            Some(p) => Checkpoint::load(p)?.split.test,
            None => DateRange::new(raw.date(0), raw.date(raw.n_days() - 1))?,
        };
        let report = backtest::buy_and_hold(&raw, &range, cfg.rf)?;
        std::fs::write(out.join("report.txt"), report_text(&report, &[]))?;
        std::fs::write(out.join("daily.csv"), daily_csv(&report))?;
        println!(
            "buy&hold: irr_total={} sr={:?} mdd={}%",
            report.irr_total, report.sr, report.mdd
        );
        return Ok(());
    }
    if args.strategy != "topk" {
        bail!("unknown strategy `{}` (use topk or buyhold)", args.strategy);
    }

    let (panel, day_scores) = match (&args.checkpoint, &args.scores) {
        (Some(path), None) => {
            let ck = Checkpoint::load(path)?;
            let (panel, scores) = checkpoint_scores(&ck, &raw)?;
            std::fs::write(out.join("scores.csv"), scores_csv(&scores, &panel))?;
            (panel, scores)
        }
        (None, Some(path)) => {
            let scores = score_file_rows(path, &raw)?;
            (raw, scores)
        }
        _ => bail!("exactly one of --checkpoint or --scores is required"),
    };

    let mut extra = Vec::new();
    if let Some(other) = &args.compare {
        let other_scores = score_file_rows(other, &panel)?;
        let pcc = backtest::pcc(&day_scores, &other_scores)?;
        let sel_a = backtest::selections(&day_scores, cfg.k)?;
        let sel_b = backtest::selections(&other_scores, cfg.k)?;
        let tsd = backtest::tsd(&sel_a, &sel_b, cfg.k)?;
        extra.push(format!("pcc={pcc}"));
        extra.push(format!("tsd_k{}={tsd}", cfg.k));
    }

    let ks: Vec<usize> = match cfg.sweep_k {
        Some((lo, hi)) => (lo..=hi).collect(),
        None => vec![cfg.k],
    };
    for &k in &ks {
        let report = backtest::run_backtest(&day_scores, &panel, Strategy { k }, cfg.rf)?;
        let (report_name, daily_name) = if ks.len() == 1 {
            ("report.txt".to_string(), "daily.csv".to_string())
        } else {
            (format!("report_k{k}.txt"), format!("daily_k{k}.csv"))
        };
        std::fs::write(out.join(report_name), report_text(&report, &extra))?;
        std::fs::write(out.join(daily_name), daily_csv(&report))?;
        println!(
            "k={k}: irr_total={} sr={} mdd={}% over {} days",
            report.irr_total,
            report
                .sr
                .map(|v| v.to_string())
                .unwrap_or_else(|| "undefined".into()),
            report.mdd,
            report.daily.len()
        );
    }
    Ok(())
}

// ── quantify ─────────────────────────────────────────────────────────

fn cmd_quantify(args: QuantifyArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let out = required_out(&cfg)?;
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| anyhow!("--checkpoint is required"))?;
    let ck = Checkpoint::load(path)?;
    let raw = load_panel(&cfg)?;
    let panel = normalize(&raw, &ck.split.train)?;
    let batches = build_examples(&panel, ck.train_config.lookback, &ck.split.test)?;
    if batches.is_empty() {
        bail!("test range yields no day batches");
    }
    let entropy_config = EntropyConfig {
        samples: cfg.samples,
        seed: cfg.seed,
    };
    let mut rows = String::from("date,symbol,entropy,clean_rank,realized_return\n");
    let mut n_rows = 0usize;
    for batch in &batches {
        let risks = quantify_day(batch, &ck.model, &entropy_config)?;
        let date = panel.date(batch.target_day);
        for r in &risks {
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                date.format("%Y-%m-%d"),
                panel.stock_ids()[r.stock_index],
                r.entropy,
                r.clean_rank,
                r.realized_return
            ));
            n_rows += 1;
        }
    }
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("entropy.csv"), rows)?;
    println!(
        "wrote {} risk rows ({} days x {} stocks) to {}",
        n_rows,
        batches.len(),
        panel.n_stocks(),
        out.join("entropy.csv").display()
    );
    Ok(())
}

// ── verify ───────────────────────────────────────────────────────────

fn cmd_verify(_args: VerifyArgs) -> Result<ExitCode> {
    let results = svat_core::verify::run_all();
    let mut failed = 0usize;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {} tolerance={} observed={}",
            r.name, r.tolerance, r.observed
        );
        if !r.pass {
            failed += 1;
        }
    }
    println!("summary: {}/{} checks passed", results.len() - failed, results.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
