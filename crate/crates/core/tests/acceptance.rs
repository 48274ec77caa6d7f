//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run all: `cargo test -p rdm-core --test acceptance`.
//! Run some: `cargo test -p rdm-core --test acceptance -- 2 7`.

use std::collections::HashSet;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdm_core::denoiser::{Denoiser, DenoiserConfig};
use rdm_core::diffusion::{
    forward_diffuse, rdm_loss, Binding, CondBatch, ConditioningSet, IdentityCodec, NoisePredictor, ScheduleConfig,
};
use rdm_core::embedding::{Embedder, Embedding};
use rdm_core::evalkit::{
    gen_toy_world, run_style_comparison, train_style_classifier, two_mode_dataset, ClassifierConfig,
    StyleClassifier, ToyWorld, ToyWorldSpec,
};
use rdm_core::numerics::gradcheck::check_params;
use rdm_core::numerics::{block_mask, AdamConfig, BoundParams, Graph, ParamStore, Tensor, Var};
use rdm_core::pipeline::{
    train_rdm, Checkpoint, DatabaseHandle, RetrievalPolicy, SampleMethod, Sampler, TrainConfig, TrainOptions,
    TrainSettings,
};
use rdm_core::vectordb::{load_database, save_database, DbRecord, IvfParams, PatchPolicy, VectorDatabase};
use rdm_core::{Exec, Result};

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(v: &[f64]) -> Embedding {
    Embedding::normalize(v).unwrap()
}

fn randn_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    Tensor::randn(&[dim], 1.0, rng).into_data()
}

// ---------------------------------------------------------------- 1

/// Cosine in f64 over the stored f32 vectors, full sort by (-sim, id).
fn brute_force(db: &VectorDatabase, q: &Embedding, k: usize) -> Vec<String> {
    let qv = q.to_f64();
    let qn = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(f64, &str)> = (0..db.len())
        .map(|i| {
            let v = db.vector(i);
            let vn = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let d: f64 = qv.iter().zip(v).map(|(a, &b)| a * b as f64).sum();
            (d / (qn * vn), db.id(i))
        })
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
    all.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

fn c1_exact_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut queries, mut mismatches) = (0, 0);
    for db_i in 0..100 {
        let n = rng.random_range(1..=10_000);
        let records = (0..n)
            .map(|i| DbRecord { id: format!("d{db_i}-{i:05}"), embedding: unit(&randn_vec(64, &mut rng)), payload: vec![] })
            .collect();
        let db = VectorDatabase::from_records(format!("rand-{db_i}"), 64, records).map_err(|e| e.to_string())?;
        for qi in 0..10 {
            let q = if qi == 0 { db.embedding(rng.random_range(0..n)) } else { unit(&randn_vec(64, &mut rng)) };
            let k = rng.random_range(1..=50);
            let got = db.search_exact(&q, k).map_err(|e| e.to_string())?;
            let want = brute_force(&db, &q, k);
            queries += 1;
            if got.ids() != want.iter().map(String::as_str).collect::<Vec<_>>() || got.truncated != (n < k) {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} of {queries} queries disagree with the oracle"))?;
    Ok(format!("{queries} queries over 100 databases, 0 mismatches"))
}

// ---------------------------------------------------------------- 2

fn clustered(centers: &[Vec<f64>], count: usize, spread: f64, rng: &mut ChaCha8Rng, prefix: &str) -> Vec<DbRecord> {
    let dim = centers[0].len();
    (0..count)
        .map(|i| {
            let c = &centers[i % centers.len()];
            let noise = Tensor::randn(&[dim], spread, rng);
            let v: Vec<f64> = c.iter().zip(noise.data()).map(|(a, b)| a + b).collect();
            DbRecord { id: format!("{prefix}{i:07}"), embedding: unit(&v), payload: vec![] }
        })
        .collect()
}

fn mean_latency(mut f: impl FnMut(usize), n: usize) -> Duration {
    let start = Instant::now();
    for i in 0..n {
        f(i);
    }
    start.elapsed() / n as u32
}

fn c2_ann() -> Outcome {
    let (dim, k, n_probe, n_list, spread) = (64, 20, 4, 32, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let centers: Vec<Vec<f64>> = (0..16).map(|_| unit(&randn_vec(dim, &mut rng)).to_f64()).collect();
    let queries: Vec<Embedding> = clustered(&centers, 200, spread, &mut rng, "q").into_iter().map(|r| r.embedding).collect();

    let db = VectorDatabase::from_records("c2-1e5", dim, clustered(&centers, 100_000, spread, &mut rng, "x"))
        .and_then(|db| db.with_index(IvfParams::new(n_list, 1), Exec::default()))
        .map_err(|e| e.to_string())?;
    let mut hits = 0;
    for q in &queries {
        let exact: HashSet<String> = db.search_exact(q, k).unwrap().ids().into_iter().map(String::from).collect();
        hits += db.search_ann(q, k, n_probe).unwrap().ids().iter().filter(|id| exact.contains(**id)).count();
    }
    let recall = hits as f64 / (k * queries.len()) as f64;
    drop(db);

    let big = VectorDatabase::from_records("c2-1e6", dim, clustered(&centers, 1_000_000, spread, &mut rng, "y"))
        .and_then(|db| db.with_index(IvfParams::new(n_list, 1), Exec::default()))
        .map_err(|e| e.to_string())?;
    let nq = 50;
    let exact_t = mean_latency(|i| drop(big.search_exact(&queries[i], k).unwrap()), nq);
    let ann_t = mean_latency(|i| drop(big.search_ann(&queries[i], k, n_probe).unwrap()), nq);
    let speedup = exact_t.as_secs_f64() / ann_t.as_secs_f64();
    let detail = format!(
        "recall@20 {recall:.4} at 1e5; mean latency at 1e6: exact {exact_t:.2?}, ivf {ann_t:.2?} ({speedup:.1}x)"
    );
    ensure(recall >= 0.9 && speedup >= 5.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

type Build = fn(&mut Graph, &BoundParams) -> Var;

/// Max relative error of `sum(build(params) ⊙ r)` for a fixed random `r`.
fn op_error(shapes: &[(&str, &[usize])], build: Build, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: ParamStore =
        shapes.iter().map(|(n, s)| (n.to_string(), Tensor::randn(s, 1.0, &mut rng))).collect();
    let proj_seed: u64 = rng.random();
    let eval = |p: &ParamStore, grads: bool| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let y = build(&mut g, &bound);
        let r = g.constant(Tensor::randn(g.value(y).shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(proj_seed)));
        let yr = g.mul(y, r).unwrap();
        let loss = g.sum(yr);
        (g.value(loss).item(), grads.then(|| g.backward(loss).unwrap().param_grads()))
    };
    let analytic = eval(&params, true).1.unwrap();
    check_params(&params, &analytic, |p| eval(p, false).0, 1e-5, usize::MAX).max_rel_error
}

fn op_cases() -> Vec<(&'static str, Vec<(&'static str, &'static [usize])>, Build)> {
    vec![
        ("matmul", vec![("a", &[3, 4]), ("b", &[4, 2])], |g, p| g.matmul(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()),
        ("matmul_nt", vec![("a", &[3, 4]), ("b", &[5, 4])], |g, p| g.matmul_nt(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()),
        ("add", vec![("a", &[3, 4]), ("b", &[4])], |g, p| g.add(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()),
        ("sub", vec![("a", &[3, 4]), ("b", &[3, 4])], |g, p| g.sub(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()),
        ("mul", vec![("a", &[3, 4]), ("b", &[1, 4])], |g, p| g.mul(p.get("a").unwrap(), p.get("b").unwrap()).unwrap()),
        ("scale", vec![("a", &[2, 3])], |g, p| g.scale(p.get("a").unwrap(), -0.7)),
        ("softmax", vec![("a", &[3, 5])], |g, p| g.softmax(p.get("a").unwrap())),
        ("log_softmax", vec![("a", &[3, 5])], |g, p| g.log_softmax(p.get("a").unwrap())),
        ("layer_norm", vec![("a", &[3, 6])], |g, p| g.layer_norm(p.get("a").unwrap(), 1e-5)),
        ("silu", vec![("a", &[3, 4])], |g, p| g.silu(p.get("a").unwrap())),
        ("concat", vec![("a", &[3, 2]), ("b", &[3, 3])], |g, p| {
            g.concat(&[p.get("a").unwrap(), p.get("b").unwrap()], 1).unwrap()
        }),
        ("slice", vec![("a", &[4, 6])], |g, p| g.slice(p.get("a").unwrap(), 1, 2, 3).unwrap()),
        ("sum", vec![("a", &[3, 4])], |g, p| g.sum(p.get("a").unwrap())),
        ("mean", vec![("a", &[3, 4])], |g, p| g.mean(p.get("a").unwrap())),
        ("linear", vec![("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2])], |g, p| {
            g.linear(p.get("x").unwrap(), p.get("w").unwrap(), Some(p.get("b").unwrap())).unwrap()
        }),
        ("attention", vec![("q", &[2, 4]), ("k", &[5, 4]), ("v", &[5, 3])], |g, p| {
            let m = g.constant(block_mask(&[2, 3]));
            g.attention(p.get("q").unwrap(), p.get("k").unwrap(), p.get("v").unwrap(), Some(m)).unwrap()
        }),
    ]
}

fn c3_gradients() -> Outcome {
    let mut worst = (0.0f64, "");
    for (name, shapes, build) in op_cases() {
        for seed in 0..3 {
            let err = op_error(&shapes, build, seed);
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    ensure(worst.0 < 1e-4, || format!("op {} relative error {:.2e}", worst.1, worst.0))?;

    // Full denoiser under the training loss, every parameter scalar.
    let config = DenoiserConfig { latent_dim: 3, hidden: 8, blocks: 2, heads: 2, cond_dim: 4, time_dim: 4, seed: 7 };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let params: ParamStore = Denoiser::new(config)
        .unwrap()
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::randn(t.shape(), 0.5, &mut rng)))
        .collect();
    let sets: Vec<ConditioningSet> = (2..=4)
        .map(|m| ConditioningSet::from_embeddings((0..m).map(|_| unit(&randn_vec(4, &mut rng))).collect()).unwrap())
        .collect();
    let cond = CondBatch::new(&sets.iter().collect::<Vec<_>>()).unwrap();
    let x = Tensor::randn(&[3, 3], 1.0, &mut rng);
    let eps = Tensor::randn(&[3, 3], 1.0, &mut rng);
    let schedule = ScheduleConfig::scaled(50).build().unwrap();
    let eval = |p: &ParamStore| {
        let den = Denoiser::from_params(config, p.clone()).unwrap();
        let mut g = Graph::new();
        let loss = rdm_loss(&mut g, &den, &IdentityCodec::new(3), &x, &cond, &[1, 25, 50], &eps, &schedule).unwrap();
        (g.value(loss).item(), g.backward(loss).unwrap().param_grads())
    };
    let report = check_params(&params, &eval(&params).1, |p| eval(p).0, 1e-5, usize::MAX);
    ensure(report.max_rel_error < 1e-4, || format!("denoiser: {report:?}"))?;
    Ok(format!(
        "{} ops max rel err {:.1e}; denoiser {} scalars max rel err {:.1e}",
        op_cases().len(),
        worst.0,
        report.checked,
        report.max_rel_error
    ))
}

// ---------------------------------------------------------------- 4

fn c4_forward_stats() -> Outcome {
    let schedule = ScheduleConfig::default().build().unwrap();
    let big_t = schedule.timesteps();
    let z0 = Tensor::row(&[1.5, -0.5, 0.3, 2.0]);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for t in [1, big_t / 2, big_t] {
        let ab = schedule.alpha_bar(t);
        let var = 1.0 - ab;
        let (mut s1, mut s2) = (vec![0.0; 4], vec![0.0; 4]);
        for _ in 0..n {
            let eps = Tensor::randn(&[1, 4], 1.0, &mut rng);
            let z = forward_diffuse(&z0, t, &eps, &schedule).unwrap();
            for j in 0..4 {
                s1[j] += z.data()[j];
                s2[j] += z.data()[j] * z.data()[j];
            }
        }
        for j in 0..4 {
            let mean = s1[j] / n as f64;
            let emp_var = (s2[j] - n as f64 * mean * mean) / (n - 1) as f64;
            let z_mean = (mean - ab.sqrt() * z0.data()[j]).abs() / (var / n as f64).sqrt();
            let z_var = (emp_var - var).abs() / (var * (2.0 / (n - 1) as f64).sqrt());
            worst = worst.max(z_mean).max(z_var);
            ensure(z_mean <= 3.0 && z_var <= 3.0, || {
                format!("t={t} dim {j}: mean off by {z_mean:.2}σ, variance off by {z_var:.2}σ")
            })?;
        }
    }
    Ok(format!("t in {{1, {}, {big_t}}}, 4 dims, 1e5 draws, worst deviation {worst:.2}σ", big_t / 2))
}

// ---------------------------------------------------------------- 5

/// Returns a fixed tensor regardless of input.
struct Fixed(Tensor);

impl NoisePredictor for Fixed {
    fn latent_dim(&self) -> usize {
        self.0.dims2().1
    }

    fn predict(&self, g: &mut Graph, _: Var, _: &[usize], _: &CondBatch, _: Binding) -> Result<Var> {
        Ok(g.constant(self.0.clone()))
    }
}

fn c5_loss_sanity() -> Outcome {
    let schedule = ScheduleConfig::default().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (n, l) = (20_000, 2);
    let set = ConditioningSet::from_embeddings(vec![unit(&[1.0, 0.0, 0.0, 0.0])]).unwrap();
    let x = Tensor::randn(&[n, l], 1.0, &mut rng);
    let eps = Tensor::randn(&[n, l], 1.0, &mut rng);
    let t: Vec<usize> = (0..n).map(|_| rng.random_range(1..=schedule.timesteps())).collect();
    let codec = IdentityCodec::new(l);

    let mut g = Graph::new();
    let perfect = rdm_loss(&mut g, &Fixed(eps.clone()), &codec, &x, &CondBatch::repeat(&set, n).unwrap(), &t, &eps, &schedule).unwrap();
    let perfect = g.value(perfect).item();
    ensure(perfect == 0.0, || format!("perfect predictor loss {perfect:e}"))?;

    let zero = Denoiser::new(DenoiserConfig { latent_dim: l, hidden: 16, blocks: 1, heads: 2, cond_dim: 4, time_dim: 8, seed: 0 })
        .unwrap();
    // Equal-size chunks keep the attention mask small; their mean is the full mean.
    let chunk = 500;
    let mut total = 0.0;
    for start in (0..n).step_by(chunk) {
        let rows = |m: &Tensor| Tensor::new(vec![chunk, l], m.data()[start * l..(start + chunk) * l].to_vec()).unwrap();
        let mut g = Graph::new();
        let part = rdm_loss(
            &mut g,
            &zero,
            &codec,
            &rows(&x),
            &CondBatch::repeat(&set, chunk).unwrap(),
            &t[start..start + chunk],
            &rows(&eps),
            &schedule,
        )
        .unwrap();
        total += g.value(part).item();
    }
    let loss = total / (n / chunk) as f64;
    // Var(ε²) = 2 for a standard normal, averaged over n·l entries.
    let sigma = (2.0 / (n * l) as f64).sqrt();
    ensure((loss - 1.0).abs() <= 3.0 * sigma, || format!("zero denoiser loss {loss:.5}, 3σ = {:.5}", 3.0 * sigma))?;
    Ok(format!("perfect loss 0; zero-initialized denoiser loss {loss:.5} (1 ± {:.5})", 3.0 * sigma))
}

// ---------------------------------------------------------------- 6

fn c6_training() -> Outcome {
    let data = two_mode_dataset(500, 0.1, 606).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        schedule: ScheduleConfig::scaled(100),
        denoiser: DenoiserConfig { latent_dim: 2, hidden: 32, blocks: 2, heads: 4, cond_dim: 2, time_dim: 16, seed: 0 },
        retrieval: RetrievalPolicy::default(),
        train: TrainSettings {
            steps: 3000,
            batch_size: 32,
            seed: 6,
            log_every: 0,
            optimizer: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            ..TrainSettings::default()
        },
    };
    let start = Instant::now();
    let out = train_rdm(&config, &data.train, &data.db, TrainOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let log = &out.loss_log;
    let head = log[..100].iter().sum::<f64>() / 100.0;
    let tail = log[log.len() - 100..].iter().sum::<f64>() / 100.0;
    let detail = format!("3000 steps in {elapsed:.1?}; loss {head:.4} -> {tail:.4} (ratio {:.3})", tail / head);
    ensure(tail < 0.5 * head && elapsed < Duration::from_secs(600), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7, 8, 9

struct Trained {
    world: ToyWorld,
    checkpoint: Checkpoint,
    classifier: StyleClassifier,
    classifier_acc: f64,
    policy: RetrievalPolicy,
    train_time: Duration,
}

fn toy_model() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let world = gen_toy_world(&ToyWorldSpec::default(), Exec::default()).unwrap();
        let config = TrainConfig {
            schedule: ScheduleConfig::scaled(100),
            denoiser: DenoiserConfig {
                latent_dim: world.spec.obs_dim,
                cond_dim: world.spec.embed_dim,
                hidden: 64,
                blocks: 2,
                heads: 4,
                time_dim: 32,
                seed: 0,
            },
            retrieval: RetrievalPolicy::default(),
            train: TrainSettings {
                steps: 2000,
                batch_size: 32,
                seed: 1,
                log_every: 0,
                optimizer: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
                ..TrainSettings::default()
            },
        };
        let start = Instant::now();
        let out = train_rdm(&config, &world.train_set().unwrap(), &world.db_train, TrainOptions::default()).unwrap();
        let train_time = start.elapsed();
        let train = world.labeled_embeddings(&world.corpus).unwrap();
        let val = world.labeled_embeddings(&world.train_items).unwrap();
        let (classifier, classifier_acc) = train_style_classifier(&train, &val, &ClassifierConfig::default()).unwrap();
        Trained { world, checkpoint: out.checkpoint, classifier, classifier_acc, policy: config.retrieval, train_time }
    })
}

fn class_counts(m: &Trained, samples: &Tensor) -> Vec<usize> {
    let embeddings: Vec<Embedding> = (0..samples.dims2().0)
        .map(|i| m.world.space.embed_observation(samples.row_slice(i)).unwrap())
        .collect();
    let mut counts = vec![0; m.world.spec.n_styles];
    for c in m.classifier.predict(&embeddings.iter().collect::<Vec<_>>()).unwrap() {
        counts[c] += 1;
    }
    counts
}

fn c7_stylization() -> Outcome {
    let m = toy_model();
    let prompts = m.world.content_prompts(100, 707);
    let sampler = Sampler::new(&m.checkpoint, &m.world.space, m.policy);
    let mut detail = format!("trained in {:.1?}, classifier {:.3};", m.train_time, m.classifier_acc);
    let mut ok = true;
    for (s, db) in m.world.style_dbs.iter().enumerate() {
        let out = sampler.sample_prompts(&prompts, db, 7, SampleMethod::DatabaseSwap).map_err(|e| e.to_string())?;
        let hits = class_counts(m, &out.samples)[s];
        ok &= hits >= 80;
        detail += &format!(" style-{s} {hits}/100;");
    }
    let out = sampler.sample_prompts(&prompts, &m.world.db_train, 7, SampleMethod::DatabaseSwap).map_err(|e| e.to_string())?;
    let mixed = class_counts(m, &out.samples);
    let top = *mixed.iter().max().unwrap();
    ok &= top <= 50;
    detail += &format!(" mixed {mixed:?}");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn c8_comparison() -> Outcome {
    let m = toy_model();
    let start = Instant::now();
    let n = 70;
    let prompts = m.world.content_prompts(n, 808);
    let report = run_style_comparison(
        &m.checkpoint,
        &m.world.space,
        &m.classifier,
        &prompts,
        &m.world.style_dbs,
        &m.world.db_train,
        &m.policy,
        n,
        8,
        Exec::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ckpt_hash = m.checkpoint.hash();
    let k = m.policy.k_infer + usize::from(m.policy.include_query_embedding);
    for r in &report.records {
        let p = &r.provenance;
        let db = if p.method == SampleMethod::DatabaseSwap { &m.world.style_dbs[r.target_style] } else { &m.world.db_train };
        ensure(
            p.checkpoint == ckpt_hash
                && p.database == db.name()
                && p.database_fingerprint == db.fingerprint()
                && p.neighbor_ids.len() == k
                && r.logits.len() == m.world.spec.n_styles,
            || format!("incomplete provenance on {p:?}"),
        )?;
    }
    ensure(report.records.len() == 2 * n * m.world.spec.n_styles, || "wrong record count".into())?;
    ensure(report.recount_matches(), || "report rows disagree with a recount of the records".into())?;
    let wins = report.retrieval_wins();
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("s{} {:.3}/{:.3}", r.style, r.acc_retrieval, r.acc_postfix))
        .collect();
    let detail = format!("retrieval >= postfix in {wins}/4 styles [{}] in {elapsed:.1?}", rows.join(", "));
    ensure(wins >= 3 && elapsed < Duration::from_secs(900), || detail.clone())?;
    Ok(detail)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c9_zero_shot() -> Outcome {
    let m = toy_model();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (before, after) = (tmp.path().join("before"), tmp.path().join("after"));
    m.checkpoint.save(&before).map_err(|e| e.to_string())?;
    let hash = m.checkpoint.hash();

    let prompts = m.world.content_prompts(4, 909);
    let sampler = Sampler::new(&m.checkpoint, &m.world.space, m.policy);
    let handle = DatabaseHandle::new(m.world.db_train.clone());
    let mut runs = 0;
    for db in m.world.style_dbs.iter().chain([&m.world.db_train]) {
        handle.swap(db.clone());
        sampler.sample_prompts(&prompts, &handle.current(), 9, SampleMethod::DatabaseSwap).map_err(|e| e.to_string())?;
        runs += 1;
    }
    for s in 0..m.world.spec.n_styles {
        sampler.sample_prompts(&prompts, &m.world.db_train, 9, SampleMethod::Postfix { style: Some(s) }).map_err(|e| e.to_string())?;
        runs += 1;
    }
    m.checkpoint.save(&after).map_err(|e| e.to_string())?;
    ensure(m.checkpoint.hash() == hash, || "in-memory parameters changed".into())?;
    ensure(dir_bytes(&before) == dir_bytes(&after), || "checkpoint files changed".into())?;
    Ok(format!("{runs} sampling runs across {} database swaps; checkpoint bytes unchanged", m.world.spec.n_styles + 1))
}

// ---------------------------------------------------------------- 10

/// Flips single bytes across every file in `dir`; returns (detected, tried).
fn corruption_sweep(dir: &Path, load_fails: impl Fn() -> bool) -> (usize, usize) {
    let (mut detected, mut tried) = (0, 0);
    for (name, orig) in dir_bytes(dir) {
        let path = dir.join(&name);
        let n = orig.len();
        let mut positions: Vec<usize> = (0..64).map(|i| i * n / 64).collect();
        positions.extend([n - 1, n / 2 + 1]);
        positions.dedup();
        for (j, &pos) in positions.iter().enumerate() {
            let mut bytes = orig.clone();
            bytes[pos] ^= [0x01, 0x80, 0x20, 0xff][j % 4];
            std::fs::write(&path, &bytes).unwrap();
            tried += 1;
            detected += usize::from(load_fails());
        }
        std::fs::write(&path, &orig).unwrap();
    }
    (detected, tried)
}

fn c10_persistence() -> Outcome {
    let world = gen_toy_world(&ToyWorldSpec { patches: PatchPolicy::two_to_three(10), ..ToyWorldSpec::default() }, Exec::default())
        .map_err(|e| e.to_string())?;
    let db = world.db_train.clone().with_index(IvfParams::new(8, 10), Exec::default()).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let db_dir = tmp.path().join("db");
    save_database(&db, &db_dir).map_err(|e| e.to_string())?;
    let loaded = load_database(&db_dir).map_err(|e| e.to_string())?;
    ensure(loaded == db && loaded.fingerprint() == db.fingerprint(), || "database changed on reload".into())?;
    for q in world.content_prompts(10, 1010) {
        let e = world.space.embed_query(&q).unwrap();
        ensure(
            loaded.search_ann(&e, 19, 3).unwrap() == db.search_ann(&e, 19, 3).unwrap()
                && loaded.search_exact(&e, 19).unwrap() == db.search_exact(&e, 19).unwrap(),
            || "search results changed on reload".into(),
        )?;
    }

    // A few training steps give non-trivial optimizer moments.
    let config = TrainConfig {
        schedule: ScheduleConfig::scaled(20),
        denoiser: DenoiserConfig { latent_dim: 32, cond_dim: 64, hidden: 16, blocks: 1, heads: 2, time_dim: 8, seed: 3 },
        retrieval: RetrievalPolicy::default(),
        train: TrainSettings { steps: 5, log_every: 0, ..TrainSettings::default() },
    };
    let ckpt = train_rdm(&config, &world.train_set().unwrap(), &world.db_train, TrainOptions::default())
        .map_err(|e| e.to_string())?
        .checkpoint;
    let ck_dir = tmp.path().join("ckpt");
    ckpt.save(&ck_dir).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&ck_dir).map_err(|e| e.to_string())?;
    let f32_exact = ckpt.denoiser.params().iter().all(|(name, t)| {
        let l = back.denoiser.params().get(name).unwrap();
        t.data().iter().zip(l.data()).all(|(a, b)| (*a as f32) as f64 == *b)
    });
    ensure(f32_exact && back.step == ckpt.step, || "checkpoint values differ from their stored precision".into())?;
    let again = tmp.path().join("again");
    back.save(&again).map_err(|e| e.to_string())?;
    ensure(dir_bytes(&again) == dir_bytes(&ck_dir), || "second save differs byte-wise".into())?;
    ensure(Checkpoint::load(&again).map_err(|e| e.to_string())? == back, || "second load differs".into())?;

    let (db_hit, db_try) = corruption_sweep(&db_dir, || load_database(&db_dir).is_err());
    let (ck_hit, ck_try) = corruption_sweep(&ck_dir, || Checkpoint::load(&ck_dir).is_err());
    let detail = format!(
        "db ({} records, indexed) and checkpoint round trips exact; corruption detected {db_hit}/{db_try} (db), {ck_hit}/{ck_try} (checkpoint)",
        db.len()
    );
    ensure(db_hit == db_try && ck_hit == ck_try, || detail.clone())?;
    Ok(detail)
}

// ----------------------------------------------------------------

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "exact retrieval matches brute force", c1_exact_search),
        (2, "IVF recall and speedup", c2_ann),
        (3, "gradient integrity", c3_gradients),
        (4, "forward-process statistics", c4_forward_stats),
        (5, "loss sanity", c5_loss_sanity),
        (6, "end-to-end training on two modes", c6_training),
        (7, "database-swap stylization", c7_stylization),
        (8, "retrieval vs postfix comparison", c8_comparison),
        (9, "zero-shot invariant", c9_zero_shot),
        (10, "persistence and corruption detection", c10_persistence),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {id:>2}: PASS  {name}: {detail} [{took:.1?}]"),
            Err(reason) => {
                failed += 1;
                println!("criterion {id:>2}: FAIL  {name}: {reason} [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
