//! Subcommand implementations.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use logitsep_core::bench::{fit_cost_model, run_bench, BenchConfig};
use logitsep_core::data::{load_uri, split, DatasetUri, SplitTag};
use logitsep_core::losses::{loss_dispatch, LossConfig, LossKind};
use logitsep_core::network::MlpModel;
use logitsep_core::pols::{
    check_alignment, counterexample_ce, counterexample_margin, separation, AlignmentOptions,
    AlignmentReport, Verdict,
};
use logitsep_core::slc_eval::{evaluate_slc, separation_on_dataset};
use logitsep_core::trainer::grid_search;

use crate::config::{load_config, RunConfig};
use crate::{CounterexampleArg, Failure, ModeArg};

const OUT_DIR_ENV: &str = "LOGITSEP_OUT_DIR";

fn resolve_out(flag: Option<PathBuf>, from_config: Option<&RunConfig>) -> Result<PathBuf, Failure> {
    let dir = flag
        .or_else(|| from_config.and_then(|c| c.output.dir.clone()))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::config(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut f = File::create(path)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::config(format!("serialization: {e}")))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn parse_uri(uri: &str) -> Result<DatasetUri, Failure> {
    uri.parse::<DatasetUri>().map_err(Failure::from)
}

// ---- train ------------------------------------------------------------------

pub fn train(config_path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let out_dir = resolve_out(out, Some(&config))?;

    // resolve the dataset before any compute
    let full = load_uri(&config.dataset.uri, config.dataset.csv_header, SplitTag::Train)
        .map_err(Failure::from)?;
    let (train_set, val_set) = split(
        &full,
        config.dataset.validation_fraction,
        config.dataset.split_seed,
    )
    .map_err(Failure::from)?;

    let train_config = config.train_config();
    let outcome = grid_search(&train_config, &train_set, &val_set).map_err(Failure::from)?;

    let ckpt_path = out_dir.join(&config.train.checkpoint);
    outcome
        .model
        .save(&ckpt_path, Some(&config.loss))
        .map_err(Failure::from)?;

    let history_path = out_dir.join("history.csv");
    let mut f = File::create(&history_path)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", history_path.display())))?;
    outcome.history.write_csv(&mut f).map_err(Failure::from)?;

    let manifest = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(&config).map_err(|e| Failure::config(e.to_string()))?,
        "overrides": overrides,
        "seeds": {
            "train": config.train.seed,
            "split": config.dataset.split_seed,
            "mc": config.loss.mc_seed,
        },
        "best_lr": outcome.best_lr,
        "lr_summaries": serde_json::to_value(&outcome.summaries)
            .map_err(|e| Failure::config(e.to_string()))?,
        "checkpoint": ckpt_path,
        "history": history_path,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;

    println!("trained {} (best lr {})", config.loss.kind.name(), outcome.best_lr);
    for s in &outcome.summaries {
        match (s.diverged, s.val_acc) {
            (true, _) => println!(
                "  lr {:<8} diverged at step {}",
                s.lr,
                s.divergence_step.unwrap_or(0)
            ),
            (false, Some(acc)) => println!("  lr {:<8} val_acc {:.4}", s.lr, acc),
            _ => {}
        }
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

// ---- eval --------------------------------------------------------------------

pub fn eval(
    checkpoint: &Path,
    dataset: Option<String>,
    config_path: Option<PathBuf>,
    csv_header: bool,
    mode: Option<ModeArg>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let config = config_path
        .map(|p| load_config(&p, &[]))
        .transpose()?;
    let out_dir = resolve_out(out, config.as_ref())?;
    let (model, _loss) = MlpModel::load(checkpoint).map_err(Failure::from)?;
    let uri = match (&dataset, &config) {
        (Some(d), _) => parse_uri(d)?,
        (None, Some(cfg)) => cfg
            .eval
            .dataset
            .clone()
            .unwrap_or_else(|| cfg.dataset.uri.clone()),
        (None, None) => {
            return Err(Failure::config("eval needs --dataset or --config".into()))
        }
    };
    let data = load_uri(&uri, csv_header, SplitTag::Test).map_err(Failure::from)?;
    if data.k() != model.num_classes() {
        return Err(Failure::config(format!(
            "checkpoint has {} classes but dataset has {}",
            model.num_classes(),
            data.k()
        )));
    }
    let eval_mode = match mode {
        Some(ModeArg::SingleLogit) => logitsep_core::slc_eval::EvalMode::SingleLogit,
        Some(ModeArg::AllLogits) => logitsep_core::slc_eval::EvalMode::AllLogitsSoftmax,
        None => config
            .as_ref()
            .map(|c| c.eval.mode.into())
            .unwrap_or(logitsep_core::slc_eval::EvalMode::SingleLogit),
    };
    let report = evaluate_slc(&model, &data, eval_mode).map_err(Failure::from)?;
    let sep = separation_on_dataset(&model, &data).map_err(Failure::from)?;

    write_json(
        &out_dir.join("eval_manifest.json"),
        &json!({
            "command": "eval",
            "version": env!("CARGO_PKG_VERSION"),
            "checkpoint": checkpoint,
            "dataset": uri.to_string(),
            "csv_header": csv_header,
            "mode": serde_json::to_value(eval_mode).map_err(|e| Failure::config(e.to_string()))?,
        }),
    )?;
    write_json(
        &out_dir.join("slc_report.json"),
        &serde_json::to_value(&report).map_err(|e| Failure::config(e.to_string()))?,
    )?;
    write_json(
        &out_dir.join("separation_report.json"),
        &serde_json::to_value(&sep).map_err(|e| Failure::config(e.to_string()))?,
    )?;

    println!(
        "macro:           AUPRC {:.6}  P@0.90 {:.6}  P@0.99 {:.6}",
        report.macro_avg.auprc, report.macro_avg.p_at_090, report.macro_avg.p_at_099
    );
    println!(
        "one minus macro: AUPRC {:.6}  P@0.90 {:.6}  P@0.99 {:.6}",
        report.one_minus_macro.auprc, report.one_minus_macro.p_at_090, report.one_minus_macro.p_at_099
    );
    println!(
        "separation: margin {:.4} (min true {:.4}, max false {:.4}), violating pairs {:.4}%",
        sep.margin,
        sep.min_true_logit,
        sep.max_false_logit,
        100.0 * sep.violating_pair_fraction
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

// ---- diagnose -----------------------------------------------------------------

pub struct DiagnoseArgs {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<String>,
    pub csv_header: bool,
    pub counterexample: Option<CounterexampleArg>,
    pub alpha: f64,
    pub gamma: f64,
    pub check_alignment: bool,
    pub trials: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn loss_config_for(kind: LossKind, gamma: f64) -> LossConfig {
    let mut cfg = LossConfig::new(kind);
    cfg.gamma = gamma;
    cfg
}

pub fn diagnose(args: DiagnoseArgs) -> Result<(), Failure> {
    let out_dir = resolve_out(args.out.clone(), None)?;
    let mut output = serde_json::Map::new();

    if let Some(which) = args.counterexample {
        let lm = match which {
            CounterexampleArg::Ce => counterexample_ce(args.alpha).map_err(Failure::from)?,
            CounterexampleArg::Margin => {
                counterexample_margin(args.gamma).map_err(Failure::from)?
            }
        };
        let rep = separation(&lm).map_err(Failure::from)?;
        println!(
            "counter-example ({}): margin {:.4}, min true {:.4}, max false {:.4}",
            match which {
                CounterexampleArg::Ce => "ce",
                CounterexampleArg::Margin => "margin",
            },
            rep.margin,
            rep.min_true_logit,
            rep.max_false_logit
        );
        println!("per-loss values on this configuration:");
        let mut losses = serde_json::Map::new();
        for kind in LossKind::ALL {
            let value = loss_dispatch(&loss_config_for(kind, args.gamma), &lm)
                .map_err(Failure::from)?;
            println!("  {:<18} {:.6e}", kind.name(), value.loss);
            losses.insert(kind.name().into(), json!(value.loss));
        }
        output.insert(
            "counterexample".into(),
            json!({
                "kind": match which { CounterexampleArg::Ce => "ce", CounterexampleArg::Margin => "margin" },
                "alpha": args.alpha,
                "gamma": args.gamma,
                "separation": serde_json::to_value(&rep).map_err(|e| Failure::config(e.to_string()))?,
                "loss_values": losses,
            }),
        );
    }

    if let Some(ckpt) = &args.checkpoint {
        let (model, _) = MlpModel::load(ckpt).map_err(Failure::from)?;
        let uri = args
            .dataset
            .as_deref()
            .ok_or_else(|| Failure::config("--checkpoint diagnosis needs --dataset".into()))?;
        let data = load_uri(&parse_uri(uri)?, args.csv_header, SplitTag::Test)
            .map_err(Failure::from)?;
        let rep = separation_on_dataset(&model, &data).map_err(Failure::from)?;
        println!(
            "checkpoint separation: margin {:.4}, violating pairs {:.4}% ({} true / {} false logits)",
            rep.margin,
            100.0 * rep.violating_pair_fraction,
            rep.n_true,
            rep.n_false
        );
        output.insert(
            "separation".into(),
            serde_json::to_value(&rep).map_err(|e| Failure::config(e.to_string()))?,
        );
    }

    if args.check_alignment {
        let opts = AlignmentOptions {
            trials: args.trials,
            steps: args.steps,
            step_size: args.step_size,
            seed: args.seed,
            ..AlignmentOptions::default()
        };
        let mut reports: Vec<AlignmentReport> = Vec::new();
        for kind in LossKind::ALL {
            let cfg = loss_config_for(kind, args.gamma);
            reports.push(check_alignment(&cfg, &opts).map_err(Failure::from)?);
        }
        // per-example losses first, then the separation-aware ones,
        // mirroring the usual presentation
        println!("alignment verdicts ({} trials, {} steps):", args.trials, args.steps);
        let dashed_after = [LossKind::Ce, LossKind::MaxMargin];
        for report in reports.iter().filter(|r| dashed_after.contains(&r.kind)) {
            print_verdict(report);
        }
        println!("  ------------------------------------------");
        for report in reports.iter().filter(|r| !dashed_after.contains(&r.kind)) {
            print_verdict(report);
        }
        output.insert(
            "alignment".into(),
            serde_json::to_value(&reports).map_err(|e| Failure::config(e.to_string()))?,
        );
    }

    if output.is_empty() {
        return Err(Failure::config(
            "nothing to diagnose: pass --counterexample, --checkpoint or --check-alignment".into(),
        ));
    }
    output.insert(
        "options".into(),
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "alpha": args.alpha,
            "gamma": args.gamma,
            "trials": args.trials,
            "steps": args.steps,
            "step_size": args.step_size,
            "seed": args.seed,
        }),
    );
    write_json(&out_dir.join("diagnosis.json"), &serde_json::Value::Object(output))?;
    Ok(())
}

fn print_verdict(report: &AlignmentReport) {
    let worst = report
        .trials
        .iter()
        .map(|t| t.final_margin)
        .fold(f64::INFINITY, f64::min);
    println!(
        "  {:<18} {:<12} worst final margin {:+.4}",
        report.kind.name(),
        match report.verdict {
            Verdict::Aligned => "aligned",
            Verdict::NotAligned => "NOT aligned",
            Verdict::Inconclusive => "inconclusive",
        },
        worst
    );
}

// ---- bench -------------------------------------------------------------------

pub struct BenchArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub classes: Option<String>,
    pub backbone: Option<String>,
    pub input_dim: Option<usize>,
    pub batch: Option<usize>,
    pub reps: Option<usize>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Failure::config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

pub fn bench(args: BenchArgs) -> Result<(), Failure> {
    let (mut bench_cfg, run_cfg) = match &args.config {
        Some(path) => {
            let cfg = load_config(path, &args.overrides)?;
            (cfg.bench.clone(), Some(cfg))
        }
        None => (BenchConfig::default(), None),
    };
    if let Some(classes) = &args.classes {
        bench_cfg.classes = parse_usize_list(classes, "class count")?;
    }
    if let Some(backbone) = &args.backbone {
        bench_cfg.hidden = if backbone == "none" {
            Vec::new()
        } else {
            parse_usize_list(backbone, "backbone width")?
        };
    }
    if let Some(d) = args.input_dim {
        bench_cfg.input_dim = d;
    }
    if let Some(b) = args.batch {
        bench_cfg.batch_size = b;
    }
    if let Some(r) = args.reps {
        bench_cfg.repetitions = r;
    }
    if let Some(w) = args.warmup {
        bench_cfg.warmup = w;
    }
    if let Some(s) = args.seed {
        bench_cfg.seed = s;
    }

    let out_dir = resolve_out(args.out, run_cfg.as_ref())?;
    let report = run_bench(&bench_cfg).map_err(Failure::from)?;

    println!("{:>10}  {:>16}  {:>10}", "classes", "time/example [s]", "speedup");
    for row in &report.rows {
        println!(
            "{:>10}  {:>16.3e}  {:>10}",
            row.classes,
            row.time_per_example_s,
            if row.classes == 1 { "---".to_string() } else { format!("x{:.2}", row.speedup) }
        );
    }
    if let Ok(fit) = fit_cost_model(&report) {
        println!(
            "cost model: time(k) = {:.3e} + {:.3e} * k  (R^2 = {:.4})",
            fit.fixed_cost, fit.per_class_cost, fit.r_squared
        );
    }
    if report.low_confidence {
        eprintln!(
            "warning: timer resolution {:.1e}s is coarser than 1% of the smallest measured interval; timings are low-confidence",
            report.timer_resolution_s
        );
    }

    write_json(
        &out_dir.join("bench.json"),
        &json!({
            "command": "bench",
            "version": env!("CARGO_PKG_VERSION"),
            "config": serde_json::to_value(&bench_cfg).map_err(|e| Failure::config(e.to_string()))?,
            "report": serde_json::to_value(&report).map_err(|e| Failure::config(e.to_string()))?,
        }),
    )?;
    let csv_path = out_dir.join("bench.csv");
    let mut f = File::create(&csv_path)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", csv_path.display())))?;
    report.write_csv(&mut f).map_err(Failure::from)?;
    Ok(())
}

