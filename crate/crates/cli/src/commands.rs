use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rdm_core::embedding::{encode_embeddings, load_embedding_file, Query};
use rdm_core::evalkit::{
    gen_toy_world, run_style_comparison, train_style_classifier, ClassifierConfig, StyleEvalReport, ToyWorld,
    ToyWorldSpec,
};
use rdm_core::pipeline::{
    sample_postfix_baseline, sample_with_database, train_rdm, Checkpoint, ExperimentConfig,
    SampleOutput, SampleProvenance, TrainOptions,
};
use rdm_core::vectordb::{load_database, save_database, DbRecord, IvfParams, VectorDatabase};
use rdm_core::{write_dir_atomic, Exec, RdmError, Result};
use serde::Serialize;

use crate::{Cli, Command, QueryArgs, VERSION};

struct Ctx {
    out: PathBuf,
    config: ExperimentConfig,
    seed: Option<u64>,
    exec: Exec,
}

impl Ctx {
    fn world_dir(&self) -> PathBuf {
        self.out.join("world")
    }

    fn db_dir(&self, name: &str) -> PathBuf {
        self.out.join("db").join(name)
    }

    /// A database name under `db/`, else a directory path.
    fn resolve_db(&self, arg: &str) -> PathBuf {
        let named = self.db_dir(arg);
        if named.is_dir() {
            named
        } else {
            PathBuf::from(arg)
        }
    }

    fn checkpoint_dir(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }

    fn load_world(&self) -> Result<ToyWorld> {
        let path = self.world_dir().join("spec.json");
        let text = std::fs::read_to_string(&path).map_err(|e| RdmError::io(&path, e))?;
        let spec: ToyWorldSpec = serde_json::from_str(&text).map_err(|e| RdmError::Format {
            file: path.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        })?;
        gen_toy_world(&spec, self.exec)
    }

    fn load_db(&self, arg: &str) -> Result<VectorDatabase> {
        load_database(&self.resolve_db(arg))
    }

    fn save_db(&self, db: &VectorDatabase) -> Result<()> {
        save_database(db, &self.db_dir(db.name()))?;
        info!("built db name={} count={} dim={} fingerprint={}", db.name(), db.len(), db.dim(), db.fingerprint());
        Ok(())
    }

    fn sample_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenWorld => "gen-world",
        Command::BuildDb(_) => "build-db",
        Command::BuildIndex(_) => "build-index",
        Command::Train(_) => "train",
        Command::Sample(_) => "sample",
        Command::SamplePostfix(_) => "sample-postfix",
        Command::Evaluate(_) => "evaluate",
        Command::InspectDb(_) => "inspect-db",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = match cli.threads {
        1 => Exec::Sequential,
        0 => Exec::Parallel,
        n => {
            std::env::set_var("RAYON_NUM_THREADS", n.to_string());
            Exec::Parallel
        }
    };
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match &cli.command {
            Command::GenWorld => config.data.seed = seed,
            Command::Train(_) => config.train.seed = seed,
            _ => {}
        }
    }
    match &cli.command {
        Command::Train(a) => config.train.steps = a.steps.unwrap_or(config.train.steps),
        Command::Sample(a) => config.retrieval.k_infer = a.query.k.unwrap_or(config.retrieval.k_infer),
        Command::SamplePostfix(a) => config.retrieval.k_infer = a.query.k.unwrap_or(config.retrieval.k_infer),
        _ => {}
    }
    config.validate()?;
    info!(
        "rdm {VERSION} command={} seed={} config_hash={} threads={}",
        command_name(&cli.command),
        cli.seed.map_or("default".into(), |s| s.to_string()),
        config.hash()?,
        cli.threads
    );
    let ctx = Ctx { out: cli.out, config, seed: cli.seed, exec };
    match cli.command {
        Command::GenWorld => gen_world(&ctx),
        Command::BuildDb(a) => match a.embeddings {
            Some(path) => build_db_from_file(&ctx, &path, a.name.as_deref().unwrap_or_default()),
            None => build_world_dbs(&ctx),
        },
        Command::BuildIndex(a) => build_index(&ctx, &a.db, a.n_list, a.name),
        Command::Train(a) => train(&ctx, a.resume.as_deref()),
        Command::Sample(a) => sample(&ctx, &a.db, None, &a.query),
        Command::SamplePostfix(a) => sample(&ctx, &a.db, Some(a.style), &a.query),
        Command::Evaluate(a) => evaluate(&ctx, &ctx.checkpoint_dir(&a.checkpoint), a.n_per_style),
        Command::InspectDb(a) => inspect_db(&ctx, &a.db),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| RdmError::Build(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| RdmError::io(path, e))
}

fn gen_world(ctx: &Ctx) -> Result<()> {
    let world = gen_toy_world(&ctx.config.data, ctx.exec)?;
    let embed = |items: &[rdm_core::embedding::ToyItem]| -> Result<Vec<u8>> {
        let records = items
            .iter()
            .map(|it| Ok((it.id.clone(), world.space.embed_item(it)?)))
            .collect::<Result<Vec<_>>>()?;
        encode_embeddings(world.spec.embed_dim, records.iter().map(|(id, e)| (id.as_str(), e)))
    };
    let corpus = embed(&world.corpus)?;
    let train = embed(&world.train_items)?;
    write_dir_atomic(&ctx.world_dir(), |dir| {
        write_file(&dir.join("spec.json"), &to_json(&world.spec)?)?;
        write_file(&dir.join("corpus.rdmv"), &corpus)?;
        write_file(&dir.join("train.rdmv"), &train)
    })?;
    info!(
        "generated world styles={} corpus={} train={} seed={}",
        world.spec.n_styles,
        world.corpus.len(),
        world.train_items.len(),
        world.spec.seed
    );
    Ok(())
}

fn build_world_dbs(ctx: &Ctx) -> Result<()> {
    let world = ctx.load_world()?;
    ctx.save_db(&world.db_train)?;
    for db in &world.style_dbs {
        ctx.save_db(db)?;
    }
    Ok(())
}

fn build_db_from_file(ctx: &Ctx, path: &Path, name: &str) -> Result<()> {
    let loaded = load_embedding_file(path)?;
    for id in &loaded.warnings {
        warn!("embedding {id} was not unit norm; renormalized");
    }
    let records = loaded
        .records
        .into_iter()
        .map(|(id, embedding)| DbRecord { id, embedding, payload: Vec::new() })
        .collect();
    ctx.save_db(&VectorDatabase::from_records(name, loaded.dim, records)?)
}

fn build_index(ctx: &Ctx, db: &str, n_list: usize, name: Option<String>) -> Result<()> {
    let db = ctx.load_db(db)?;
    let name = name.unwrap_or_else(|| format!("{}-ivf", db.name()));
    let params = IvfParams::new(n_list, ctx.seed.unwrap_or(0));
    let indexed = db.with_index(params, ctx.exec)?.renamed(name);
    ctx.save_db(&indexed)
}

fn train(ctx: &Ctx, resume: Option<&Path>) -> Result<()> {
    let world = ctx.load_world()?;
    let mut config = ctx.config.clone();
    if config.data != world.spec {
        info!("using the world's data spec in place of the config's [data]");
        config.data = world.spec;
    }
    let train_cfg = config.train_config();
    let db_train = ctx.load_db("train")?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let ckpt_dir = ctx.out.join("checkpoint");
    let opts = TrainOptions { exec: ctx.exec, checkpoint_dir: Some(&ckpt_dir), resume };
    let outcome = match train_rdm(&train_cfg, &world.train_set()?, &db_train, opts) {
        Ok(o) => o,
        Err(RdmError::Diverged { step, last_good }) => {
            let dir = ctx.out.join("checkpoint-last-good");
            last_good.save(&dir)?;
            warn!("saved the last finite checkpoint (step {}) to {}", last_good.step, dir.display());
            return Err(RdmError::Diverged { step, last_good });
        }
        Err(e) => return Err(e),
    };
    let mut csv = String::from("step,loss\n");
    let first = outcome.checkpoint.step - outcome.loss_log.len() as u64;
    for (i, l) in outcome.loss_log.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", first + i as u64 + 1);
    }
    write_dir_atomic(&ctx.out.join("train"), |dir| {
        write_file(&dir.join("config.toml"), config.to_toml()?.as_bytes())?;
        write_file(&dir.join("loss.csv"), csv.as_bytes())
    })?;
    info!(
        "trained steps={} checkpoint={} hash={}",
        outcome.checkpoint.step,
        ckpt_dir.display(),
        outcome.checkpoint.hash()
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    version: &'a str,
    config_hash: String,
    provenance: &'a [SampleProvenance],
}

fn sample(ctx: &Ctx, db: &str, postfix: Option<Option<usize>>, args: &QueryArgs) -> Result<()> {
    let world = ctx.load_world()?;
    let ckpt = Checkpoint::load(&ctx.checkpoint_dir(&args.checkpoint))?;
    let db = ctx.load_db(db)?;
    let policy = ctx.config.retrieval;
    let query = match &args.content {
        Some(c) => Query::content(c.clone()),
        None => world.content_prompts(1, args.prompt_seed).remove(0),
    };
    let seed = ctx.sample_seed();
    let out: SampleOutput = match postfix {
        None => sample_with_database(&ckpt, &world.space, &query, &db, &policy, args.n, seed, ctx.exec)?,
        Some(style) => {
            sample_postfix_baseline(&ckpt, &world.space, &query, style, &db, &policy, args.n, seed, ctx.exec)?
        }
    };
    let file = args.output.clone().unwrap_or_else(|| match postfix {
        None => format!("{}-seed{seed}.rdms", db.name()),
        Some(None) => format!("postfix-none-seed{seed}.rdms"),
        Some(Some(s)) => format!("postfix-{s}-seed{seed}.rdms"),
    });
    let path = ctx.out.join("samples").join(file);
    let meta = SampleMeta { version: VERSION, config_hash: ctx.config.hash()?, provenance: &out.provenance };
    rdm_core::diffusion::save_samples(&path, &out.samples, Some(&meta))?;
    info!("wrote {} samples to {} (db={})", args.n, path.display(), db.name());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    version: &'a str,
    config_hash: String,
    checkpoint: String,
    classifier_val_accuracy: f64,
    n_per_style: usize,
    seed: u64,
    rows: &'a [rdm_core::evalkit::StyleEvalRow],
}

fn evaluate(ctx: &Ctx, ckpt_dir: &Path, n_per_style: usize) -> Result<()> {
    let world = ctx.load_world()?;
    let ckpt = Checkpoint::load(ckpt_dir)?;
    let train = world.labeled_embeddings(&world.corpus)?;
    let val = world.labeled_embeddings(&world.train_items)?;
    let (classifier, val_acc) = train_style_classifier(&train, &val, &ClassifierConfig::default())?;
    info!("style classifier held-out accuracy {val_acc:.4}");
    let db_train = ctx.load_db("train")?;
    let style_dbs = (0..world.spec.n_styles)
        .map(|s| ctx.load_db(&format!("style-{s}")))
        .collect::<Result<Vec<_>>>()?;
    let seed = ctx.sample_seed();
    let prompts = world.content_prompts(n_per_style, seed);
    let policy = ctx.config.retrieval;
    let report: StyleEvalReport = run_style_comparison(
        &ckpt, &world.space, &classifier, &prompts, &style_dbs, &db_train, &policy, n_per_style, seed, ctx.exec,
    )?;
    let summary = EvalSummary {
        version: VERSION,
        config_hash: ctx.config.hash()?,
        checkpoint: ckpt.hash(),
        classifier_val_accuracy: val_acc,
        n_per_style,
        seed,
        rows: &report.rows,
    };
    let mut records = Vec::new();
    for r in &report.records {
        serde_json::to_writer(&mut records, r).map_err(|e| RdmError::Build(e.to_string()))?;
        records.push(b'\n');
    }
    write_dir_atomic(&ctx.out.join("eval"), |dir| {
        write_file(&dir.join("report.json"), &to_json(&summary)?)?;
        write_file(&dir.join("records.jsonl"), &records)?;
        write_file(&dir.join("table.txt"), report.to_table().as_bytes())?;
        write_file(&dir.join("plot.csv"), report.plot_data().as_bytes())
    })?;
    print!("{}", report.to_table());
    info!("retrieval at least as accurate as the postfix on {}/{} styles", report.retrieval_wins(), report.rows.len());
    Ok(())
}

#[derive(Serialize)]
struct DbSummary<'a> {
    name: &'a str,
    count: usize,
    dim: usize,
    fingerprint: String,
    index: Option<IvfParams>,
}

fn inspect_db(ctx: &Ctx, db: &str) -> Result<()> {
    let db = ctx.load_db(db)?;
    let summary = DbSummary {
        name: db.name(),
        count: db.len(),
        dim: db.dim(),
        fingerprint: db.fingerprint(),
        index: db.index().map(|i| *i.params()),
    };
    let json = to_json(&summary)?;
    print!("{}", String::from_utf8_lossy(&json));
    Ok(())
}
