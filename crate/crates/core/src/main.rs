use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::Digest;

use scsinet::channel::{generate_channels, ChannelParams};
use scsinet::config::RunConfig;
use scsinet::dataset::{build_dataset, read_dataset, split_by_drop, write_dataset, Dataset};
use scsinet::etype2::{default_sweep, Etype2Config};
use scsinet::model::{load_checkpoint, save_checkpoint, ParamStore};
use scsinet::report::{self, dataset_hash, to_csv, Meta};
use scsinet::train::{run_all, run_stage1, run_stage2, run_stage3, EpochStats};
use scsinet::{Error, Result};

#[derive(Parser)]
#[command(name = "scsinet", version, about = "Scalable eigenvector CSI feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelPreset {
    /// UEs anywhere in a +-60 degree sector.
    Wide,
    /// Narrow sector and low angular spread for short training runs.
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate channels and write an eigenvector dataset.
    GenData {
        #[arg(long)]
        drops: usize,
        #[arg(long)]
        ues: usize,
        #[arg(long, default_value_t = 32)]
        nt: usize,
        #[arg(long, default_value_t = 48)]
        nc: usize,
        #[arg(long, default_value_t = 12)]
        nsb: usize,
        #[arg(long, default_value_t = 4)]
        nri: usize,
        #[arg(long, default_value_t = 4)]
        nr: usize,
        #[arg(long, value_enum, default_value = "wide")]
        channel: ChannelPreset,
        /// Snapshots per UE (preset value if omitted).
        #[arg(long)]
        samples_per_ue: Option<usize>,
        /// Half-width of the UE direction range in radians.
        #[arg(long)]
        sector: Option<f64>,
        #[arg(long)]
        angle_spread: Option<f64>,
        #[arg(long)]
        delay_spread: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Estimation SNR in dB; ideal eigenvectors if omitted.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also split by drop and write the held-out part here.
        #[arg(long)]
        test_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Run one or all training stages.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training datasets, one per antenna count.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        ckpt_in: Option<PathBuf>,
        #[arg(long)]
        ckpt_out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// SGCS of a checkpoint per antenna count, payload and layer.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Payloads to evaluate; defaults to every branch in the checkpoint.
        #[arg(long, value_delimiter = ',')]
        payloads: Vec<usize>,
        /// Evaluate rank-adaptive allocation instead (needs --alloc-config).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        alloc_config: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SGCS of the DFT-codebook baseline for one configuration.
    BaselineEval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        amp_bits: u32,
        #[arg(long)]
        phase_bits: u32,
        #[arg(long, default_value_t = 1)]
        oversampling: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Model against the best baseline configuration at matched payloads.
    Compare {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        payloads: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// FLOP and parameter tables from the analytic counters.
    Complexity {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the full-size architecture instead of the config file.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::preset("desk"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_datasets(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths.iter().map(read_dataset).collect()
}

fn combined_hash(datasets: &[Dataset]) -> String {
    datasets.iter().map(dataset_hash).collect::<Vec<_>>().join("+")
}

fn epoch_line(s: &EpochStats) -> String {
    let sgcs: Vec<String> = s.mean_sgcs.iter().map(|(k, v)| format!("{k}:{v:.6}")).collect();
    format!("{},{},{:.12e},{:.6e},{}\n", s.stage, s.epoch, s.mean_loss, s.last_lr, sgcs.join(" "))
}

fn gen_data(args: Command) -> Result<()> {
    let Command::GenData {
        drops,
        ues,
        nt,
        nc,
        nsb,
        nri,
        nr,
        channel,
        samples_per_ue,
        sector,
        angle_spread,
        delay_spread,
        paths,
        snr_db,
        seed,
        out,
        test_out,
        train_fraction,
    } = args
    else {
        unreachable!()
    };
    let mut params = match channel {
        ChannelPreset::Wide => ChannelParams { n_t: nt, ..ChannelParams::default() },
        ChannelPreset::Desk => ChannelParams::desk(nt),
    };
    params.n_r = nr;
    params.n_c = nc;
    params.n_sb = nsb;
    params.snr_db = snr_db;
    if let Some(v) = samples_per_ue {
        params.samples_per_ue = v;
    }
    if let Some(v) = sector {
        params.sector = v;
    }
    if let Some(v) = angle_spread {
        params.angle_spread = v;
    }
    if let Some(v) = delay_spread {
        params.delay_spread = v;
    }
    if let Some(v) = paths {
        params.n_paths = v;
    }
    let channels = generate_channels(&params, drops, ues, seed)?;
    let ds = build_dataset(&channels, nsb, nri, seed)?;
    match test_out {
        Some(test_path) => {
            let (train, test) = split_by_drop(&ds, train_fraction)?;
            write_dataset(&train, &out)?;
            write_dataset(&test, &test_path)?;
            eprintln!("wrote {} train and {} test samples", train.len(), test.len());
        }
        None => {
            write_dataset(&ds, &out)?;
            eprintln!("wrote {} samples", ds.len());
        }
    }
    Ok(())
}

fn train(args: Command) -> Result<()> {
    let Command::Train { stage, config, data, ckpt_in, ckpt_out, seed, log } = args else { unreachable!() };
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let mut by_antenna: BTreeMap<usize, Dataset> = BTreeMap::new();
    for ds in load_datasets(&data)? {
        if by_antenna.insert(ds.n_t, ds).is_some() {
            return Err(Error::InvalidConfig("two datasets share an antenna count".into()));
        }
    }
    let mut store = match &ckpt_in {
        Some(p) => load_checkpoint(p)?,
        None => ParamStore::new(cfg.model.clone(), cfg.train.seed)?,
    };
    let mut lines = String::from("stage,epoch,mean_loss,last_lr,mean_sgcs\n");
    let mut on_epoch = |s: &EpochStats| {
        let line = epoch_line(s);
        eprint!("{line}");
        lines.push_str(&line);
    };
    let base = cfg.train.base_antenna;
    let dataset = |p: usize| {
        by_antenna.get(&p).ok_or_else(|| Error::Empty(format!("no training dataset for N_t = {p}")))
    };
    match stage {
        StageArg::One => {
            run_stage1(&mut store, dataset(base)?, &cfg.train, &mut on_epoch)?;
        }
        StageArg::Two => {
            let others: Vec<usize> = by_antenna.keys().copied().filter(|&p| p != base).collect();
            if others.is_empty() {
                return Err(Error::Empty("stage 2 needs a non-base antenna dataset".into()));
            }
            for p in others.into_iter().rev() {
                run_stage2(&mut store, dataset(p)?, p, &cfg.train, &mut on_epoch)?;
            }
        }
        StageArg::Three => {
            run_stage3(&mut store, &by_antenna, &cfg.train, &mut on_epoch)?;
        }
        StageArg::All => {
            run_all(&mut store, &by_antenna, &cfg.train, &mut on_epoch)?;
        }
    }
    save_checkpoint(&store, &ckpt_out)?;
    if let Some(path) = log {
        let header = format!("# config_hash={}\n# seed={}\n", cfg.hash(), cfg.train.seed);
        write_text(&path, &(header + &lines))?;
    }
    Ok(())
}

fn eval(args: Command) -> Result<()> {
    let Command::Eval { ckpt, data, payloads, rank, alloc_config, config, out } = args else { unreachable!() };
    let cfg = load_config(config.as_deref())?;
    let store = load_checkpoint(&ckpt)?;
    let datasets = load_datasets(&data)?;
    let meta = Meta::new()
        .with("config_hash", cfg.hash())
        .with("dataset_hash", combined_hash(&datasets))
        .with("seed", cfg.train.seed);
    let text = match (rank, alloc_config) {
        (Some(r), Some(c)) => {
            let mut rows = Vec::new();
            for ds in &datasets {
                rows.extend(report::evaluate_rank(&store, ds, c, r)?);
            }
            to_csv(&rows, &meta.with("alloc_config", c).with("rank", r))?
        }
        (None, None) => {
            let payloads = if payloads.is_empty() { store.hp.payloads.clone() } else { payloads };
            let refs: Vec<&Dataset> = datasets.iter().collect();
            to_csv(&report::evaluate(&store, &refs, &payloads)?, &meta)?
        }
        _ => return Err(Error::InvalidConfig("--rank and --alloc-config go together".into())),
    };
    write_text(&out, &text)
}

fn baseline_eval(args: Command) -> Result<()> {
    let Command::BaselineEval { data, l, p, amp_bits, phase_bits, oversampling, report: out } = args else {
        unreachable!()
    };
    let ds = read_dataset(&data)?;
    let cfg = Etype2Config { l, p, amp_bits, phase_bits, oversampling };
    let rows = report::evaluate_baseline(&ds, &cfg)?;
    let config_hash = hex::encode(sha2::Sha256::digest(serde_json::to_vec(&cfg).expect("serializable")));
    let meta = Meta::new().with("config_hash", config_hash).with("dataset_hash", dataset_hash(&ds));
    write_text(&out, &to_csv(&rows, &meta)?)
}

fn compare(args: Command) -> Result<()> {
    let Command::Compare { ckpt, data, payloads, config, report: out } = args else { unreachable!() };
    let cfg = load_config(config.as_deref())?;
    let store = load_checkpoint(&ckpt)?;
    let ds = read_dataset(&data)?;
    let payloads = if payloads.is_empty() { store.hp.payloads.clone() } else { payloads };
    let rows = report::compare(&store, &ds, &payloads, &default_sweep(ds.n_t, ds.n_sb))?;
    let meta = Meta::new()
        .with("config_hash", cfg.hash())
        .with("dataset_hash", dataset_hash(&ds))
        .with("seed", cfg.train.seed);
    write_text(&out, &to_csv(&rows, &meta)?)
}

fn complexity(args: Command) -> Result<()> {
    let Command::Complexity { config, full, out } = args else { unreachable!() };
    let cfg = if full { RunConfig::preset("full")? } else { load_config(config.as_deref())? };
    let rows = report::complexity(&cfg.model)?;
    write_text(&out, &to_csv(&rows, &Meta::new().with("config_hash", cfg.hash()))?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        c @ Command::GenData { .. } => gen_data(c),
        c @ Command::Train { .. } => train(c),
        c @ Command::Eval { .. } => eval(c),
        c @ Command::BaselineEval { .. } => baseline_eval(c),
        c @ Command::Compare { .. } => compare(c),
        c @ Command::Complexity { .. } => complexity(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
