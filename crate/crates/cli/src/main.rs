use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use blockdiff::backbone::{load_checkpoint, Model};
use blockdiff::exec::Execution;
use blockdiff::harness::config::parse_kv;
use blockdiff::harness::{
    ablate, checkpoint_run_config, evaluate, problem_for, read_records, run_cost, task_affinity, train, RunConfig, TrainOptions,
};
use blockdiff::maskgen::training_mask;
use blockdiff::samplers::{decode, Problem};
use blockdiff::tasks::dataset::write_atomic;
use blockdiff::tasks::{read_jsonl, read_meta, verify, write_jsonl, write_meta, Example, Meta, Task};
use blockdiff::Paradigm;

#[derive(Parser)]
#[command(name = "blockdiff", version, about = "Sequence-generation paradigms on a shared transformer backbone")]
struct Cli {
    /// Run batch work on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/valid JSONL splits for a task.
    GenData {
        task: Task,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Training examples when the config leaves `train_size` at 0.
        #[arg(long, default_value_t = 10_000)]
        default_train: usize,
    },
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on a JSONL dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of examples to score (default: all).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Decode prompts with a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// A JSONL dataset, or one prompt per line as token ids.
        #[arg(long)]
        prompt_file: PathBuf,
        /// Print every model call as `step=<n> pos=<list> tok=<list>`.
        #[arg(long)]
        trace: bool,
        /// Print the paradigm's training attention mask as a 1/0 grid.
        #[arg(long)]
        dump_mask: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Task affinity and hardness from a directory of runs.
    Affinity {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        runs: PathBuf,
        /// Diffusion paradigm to compare against AR (default: the cheapest).
        #[arg(long)]
        diff: Option<Paradigm>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run a sweep file.
    Ablate {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a JSONL dataset against its task's ground truth.
    Verify {
        #[arg(long)]
        data: PathBuf,
        /// Config describing the task (default: the sibling meta.json).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.cmd {
        Cmd::GenData { task, config, seed, out, default_train } => gen_data(task, config, seed, &out, default_train),
        Cmd::Train { config, seed, out, resume, quiet } => {
            let cfg = read_config(&config)?;
            let opts = TrainOptions { exec, resume, verbose: !quiet, stop_after: None };
            let res = train(&cfg, seed, &out, opts)?;
            let last = res.records.last().context("no records")?;
            println!("{}", serde_json::to_string(last)?);
            Ok(())
        }
        Cmd::Eval { ckpt, data, size } => {
            let ck = load_checkpoint(&ckpt)?;
            let mut cfg = checkpoint_run_config(&ck)?;
            let examples = read_jsonl(&data)?;
            cfg.eval_size = size.unwrap_or(examples.len());
            let model = Model::from_params(ck.config, ck.params)?;
            let metrics = evaluate(&model, &cfg, &examples, exec)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
        Cmd::Sample { ckpt, prompt_file, trace, dump_mask, steps, temperature, seed } => {
            sample(&ckpt, &prompt_file, trace, dump_mask, steps, temperature, seed)
        }
        Cmd::Affinity { task, runs, diff, threshold } => affinity_cmd(task, &runs, diff, threshold),
        Cmd::Ablate { sweep, out, quiet } => {
            let text = std::fs::read_to_string(&sweep).with_context(|| format!("reading {}", sweep.display()))?;
            let runs = ablate(&text, &out, exec, !quiet)?;
            for r in &runs {
                println!("{} seed={} final={:?}", r.dir.display(), r.seed, r.final_metric());
            }
            println!("summary: {}", out.join("results.csv").display());
            Ok(())
        }
        Cmd::Verify { data, config } => {
            let cfg = match config {
                Some(p) => read_config(&p)?,
                None => {
                    let dir = data.parent().unwrap_or(Path::new("."));
                    let meta = read_meta(dir).with_context(|| format!("no --config and no meta.json in {}", dir.display()))?;
                    RunConfig::from_kv(&meta.config)?
                }
            };
            let examples = read_jsonl(&data)?;
            let report = verify(&cfg.task, &examples);
            for v in &report.violations {
                println!("violation: {v}");
            }
            println!("checked {} examples, {} violations", report.checked, report.violations.len());
            if !report.ok() {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}

fn gen_data(task: Task, config: Option<PathBuf>, seed: u64, out: &Path, default_train: usize) -> Result<()> {
    let mut kv = match &config {
        Some(p) => parse_kv(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => BTreeMap::new(),
    };
    if let Some(t) = kv.get("task") {
        if t.parse::<Task>()? != task {
            bail!("config is for task {t}, not {task}");
        }
    }
    kv.insert("task".into(), task.name().into());
    kv.entry("paradigm".into()).or_insert_with(|| "ar".into());
    let cfg = RunConfig::from_kv(&kv)?;
    let n_train = if cfg.train_size > 0 { cfg.train_size } else { default_train };
    std::fs::create_dir_all(out)?;
    let mut counts = BTreeMap::new();
    for (split, n) in [("train", n_train), ("valid", cfg.valid_size)] {
        let examples = (0..n as u64).map(|i| cfg.task.generate(seed, split, i)).collect::<blockdiff::Result<Vec<Example>>>()?;
        let report = verify(&cfg.task, &examples);
        if !report.ok() {
            bail!("generated {split} data failed verification: {:?}", report.violations);
        }
        write_jsonl(&out.join(format!("{split}.jsonl")), &examples)?;
        counts.insert(split.to_string(), n);
    }
    let mut config_kv = cfg.to_kv();
    config_kv.remove("data_dir");
    write_meta(out, &Meta { task: task.name().into(), seed, config: config_kv, counts: counts.clone() })?;
    println!("wrote {} to {}", counts.iter().map(|(k, v)| format!("{v} {k}")).collect::<Vec<_>>().join(", "), out.display());
    Ok(())
}

fn read_prompts(path: &Path, cfg: &RunConfig) -> Result<Vec<Problem>> {
    if let Ok(examples) = read_jsonl(path) {
        return examples.iter().map(|e| Ok(problem_for(cfg, e)?)).collect();
    }
    let vocab = cfg.task.vocab().context("token prompts need a token task; pass a JSONL dataset instead")?;
    let resp = cfg.seq_len() - cfg.task.prompt_len();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let prompt = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: expected token ids", path.display(), i + 1))?;
        if prompt.len() != cfg.task.prompt_len() {
            bail!("{}:{}: prompt has {} tokens, expected {}", path.display(), i + 1, prompt.len(), cfg.task.prompt_len());
        }
        out.push(Problem::tokens(&prompt, resp, &vocab).with_coords(cfg.task.coords()));
    }
    Ok(out)
}

fn sample(
    ckpt: &Path,
    prompt_file: &Path,
    trace: bool,
    dump_mask: bool,
    steps: Option<usize>,
    temperature: f64,
    seed: u64,
) -> Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let cfg = checkpoint_run_config(&ck)?;
    if dump_mask {
        let m = training_mask(cfg.paradigm, cfg.seq_len(), cfg.task.prompt_len(), cfg.block_size)?;
        print!("{}", m.to_grid());
    }
    let model = Model::from_params(ck.config, ck.params)?;
    let mut dcfg = cfg.decode_config()?;
    if let Some(t) = steps {
        dcfg.steps = t;
    }
    dcfg.temperature = temperature;
    dcfg.seed = seed;
    dcfg.validate()?;
    for (i, p) in read_prompts(prompt_file, &cfg)?.iter().enumerate() {
        let t = decode(&model, p, &dcfg)?;
        if trace {
            print!("{}", t.dump());
        }
        let resp: Vec<String> = match &t.final_ {
            blockdiff::samplers::Decoded::Tokens(s) => s.response().iter().map(|x| x.to_string()).collect(),
            blockdiff::samplers::Decoded::Hybrid(h) => h.target_values().iter().map(|y| format!("{y:.6}")).collect(),
        };
        println!("sample={i} nfe={} response={}", t.nfe, resp.join(","));
    }
    Ok(())
}

/// Every directory under `root` holding both `run.jsonl` and `config.txt`.
fn find_runs(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if root.join("run.jsonl").exists() && root.join("config.txt").exists() {
        out.push(root.to_path_buf());
    }
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_runs(&path, out)?;
        }
    }
    Ok(())
}

fn affinity_cmd(task: Task, root: &Path, diff: Option<Paradigm>, threshold: Option<f64>) -> Result<()> {
    let mut dirs = Vec::new();
    find_runs(root, &mut dirs)?;
    dirs.sort();
    let mut found = Vec::new();
    let mut runs = Vec::new();
    for dir in dirs {
        let cfg = read_config(&dir.join("config.txt"))?;
        if cfg.task.task() == task {
            runs.push((cfg, read_records(&dir.join("run.jsonl"))?));
            found.push(dir);
        }
    }
    let (report, th) = task_affinity(task, &runs, diff, threshold)?;
    for ((cfg, records), dir) in runs.iter().zip(&found) {
        let c = run_cost(cfg, records, &th);
        println!("{:<8} {} {:>12.4e}{}", cfg.paradigm, dir.display(), c.flops, if c.censored { " (censored)" } else { "" });
    }
    println!("threshold: {} {:?} {}", th.metric, th.direction, th.value);
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    write_atomic(&root.join(format!("affinity-{}.json", task.name())), json.as_bytes())?;
    Ok(())
}
