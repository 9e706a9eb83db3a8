use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use reloop_core::feedback::{FactBagScorer, TokenF1Scorer};
use reloop_core::harness::{
    demo_config, evaluate_checkpoint, inject_answer_noise, inject_teacher_noise, read_jsonl, synth_dataset,
    train_and_evaluate, write_jsonl, Protocol, RunSummary, WorldConfig,
};
use reloop_core::pseudo::AttentionDump;
use reloop_core::train::{TrainConfig, EPOCH_CSV_HEADER};
use reloop_core::{Checkpoint, Sample, Vocab};

#[derive(Parser)]
#[command(
    name = "reloop",
    version,
    about = "Closed-loop consistency training on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSONL.
    Synth {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        contrastive_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint.json, metrics.csv and trace.jsonl.
    Train {
        /// TOML config; omitted keys keep their defaults. Without it the
        /// bundled demo config is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Training data; defaults to the bundled dataset for the config seed.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and write a one-row metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train clean and corrupted runs on the same seeds and compare them.
    Stress {
        #[arg(long, value_enum)]
        mode: StressMode,
        #[arg(long, default_value_t = 0.15)]
        fraction: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Turn an attention dump into a pseudo heatmap CSV and a JSON sidecar.
    PseudoAttn {
        #[arg(long)]
        dump: PathBuf,
        /// CSV path; the sidecar goes next to it with a `.json` extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StressMode {
    Teacher,
    Answer,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            n,
            seed,
            contrastive_frac,
            out,
        } => {
            let data = synth_dataset(n, &WorldConfig::default(), contrastive_frac, seed)?;
            write_jsonl(&out, &data)?;
            eprintln!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train {
            config,
            out_dir,
            data,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let protocol = Protocol::default();
            let train = match data {
                Some(p) => read_jsonl(&p)?,
                None => protocol.train_set(cfg.seed)?,
            };
            let heldout = protocol.heldout_set(cfg.seed)?;
            let summary = train_run(&cfg, &train, &heldout, &out_dir)?;
            print_report(&summary);
        }
        Command::Eval {
            ckpt,
            data,
            report,
            seed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let samples = read_jsonl(&data)?;
            let vocab = ck.vocab()?;
            let r = evaluate_checkpoint(
                &ck,
                &samples,
                &TokenF1Scorer,
                &FactBagScorer::new(vocab),
                Default::default(),
                seed,
            )?;
            write_file(&report, &r.to_csv())?;
            eprintln!("halluc_rate {:.4} over {} probes", r.halluc_rate.value, r.probes);
        }
        Command::Stress {
            mode,
            fraction,
            config,
            data,
            heldout,
            out_dir,
            overrides,
        } => stress(
            mode,
            fraction,
            config.as_deref(),
            data.as_deref(),
            heldout.as_deref(),
            &out_dir,
            &overrides,
        )?,
        Command::PseudoAttn { dump, out } => {
            let text = fs::read_to_string(&dump).with_context(|| format!("reading {}", dump.display()))?;
            let dump: AttentionDump =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", dump.display()))?;
            let (map, side) = dump.build(&Vocab::standard())?;
            let grid = map.grid();
            let mut csv = String::new();
            for r in 0..grid.rows() {
                let row: Vec<String> = (0..grid.cols()).map(|c| format!("{:.17e}", grid.get(r, c))).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            write_file(&out, &csv)?;
            write_file(&out.with_extension("json"), &serde_json::to_string_pretty(&side)?)?;
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => demo_config(),
    };
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One training run with its artifacts written under `out_dir`.
fn train_run(cfg: &TrainConfig, train: &[Sample], heldout: &[Sample], out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_file(&out_dir.join("config.toml"), &cfg.to_toml())?;
    let trace_path = out_dir.join("trace.jsonl");
    let mut trace =
        BufWriter::new(File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?);
    let mut io_err = None;
    let summary = train_and_evaluate(cfg, train, heldout, &mut |r| {
        let line = serde_json::to_string(r).map_err(|e| reloop_core::Error::InvalidState(e.to_string()))?;
        if let Err(e) = writeln!(trace, "{line}") {
            io_err.get_or_insert(e);
        }
        Ok(())
    })?;
    if let Some(e) = io_err {
        return Err(e).with_context(|| format!("writing {}", trace_path.display()));
    }
    trace
        .flush()
        .with_context(|| format!("writing {}", trace_path.display()))?;
    summary.checkpoint.save(&out_dir.join("checkpoint.json"))?;
    let mut epochs = String::from(EPOCH_CSV_HEADER);
    epochs.push('\n');
    for e in &summary.epochs {
        epochs.push_str(&e.csv_row());
        epochs.push('\n');
    }
    write_file(&out_dir.join("metrics.csv"), &epochs)?;
    write_file(&out_dir.join("eval.csv"), &summary.report.to_csv())?;
    Ok(summary)
}

fn print_report(s: &RunSummary) {
    let r = &s.report;
    eprintln!(
        "halluc_rate {:.4} (object {:.4}, attribute {:.4}, relation {:.4}, event {:.4}) over {} probes",
        r.halluc_rate.value,
        r.halluc_object.value,
        r.halluc_attribute.value,
        r.halluc_relation.value,
        r.halluc_event.value,
        r.probes
    );
}

const STRESS_HEADER: &str = "run,halluc_rate,halluc_object,halluc_attribute,halluc_relation,halluc_event,\
train_visual_similarity,gamma_high,gamma_medium,gamma_low";

fn stress_row(name: &str, s: &RunSummary) -> String {
    let r = &s.report;
    let (h, m, l) = s.train_gamma;
    format!(
        "{name},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}",
        r.halluc_rate.value,
        r.halluc_object.value,
        r.halluc_attribute.value,
        r.halluc_relation.value,
        r.halluc_event.value,
        s.train_visual_similarity,
        h,
        m,
        l
    )
}

fn stress(
    mode: StressMode,
    fraction: f64,
    config: Option<&Path>,
    data: Option<&Path>,
    heldout: Option<&Path>,
    out_dir: &Path,
    overrides: &[String],
) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        bail!("--fraction must lie in [0, 1], got {fraction}");
    }
    let cfg = load_config(config, overrides)?;
    let protocol = Protocol::default();
    let clean = match data {
        Some(p) => read_jsonl(p)?,
        None => protocol.train_set(cfg.seed)?,
    };
    let heldout = match heldout {
        Some(p) => read_jsonl(p)?,
        None => protocol.heldout_set(cfg.seed)?,
    };
    let (name, noised) = match mode {
        StressMode::Teacher => ("teacher", inject_teacher_noise(&clean, fraction, cfg.seed)?),
        StressMode::Answer => ("answer", inject_answer_noise(&clean, fraction, cfg.seed)?),
    };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_jsonl(&out_dir.join(format!("{name}_noised.jsonl")), &noised)?;
    let a = train_run(&cfg, &clean, &heldout, &out_dir.join("clean"))?;
    let b = train_run(&cfg, &noised, &heldout, &out_dir.join(name))?;
    let table = format!(
        "{STRESS_HEADER}\n{}\n{}\n",
        stress_row("clean", &a),
        stress_row(name, &b)
    );
    write_file(&out_dir.join("stress.csv"), &table)?;
    print!("{table}");
    Ok(())
}
