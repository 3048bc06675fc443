//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p sqlaug-cli --test acceptance`; exits non-zero if any
//! criterion fails. Set `SPIDER_DIR` to include the Spider loading check.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlaug_cli::commands::{self, DomainSet};
use sqlaug_cli::config::{file_hash, RunConfig};
use sqlaug_core::analysis::{dataset_stats, normalized_entropy, normalized_mutual_information};
use sqlaug_core::entity::{extract_entity_sequence, format_generator_input};
use sqlaug_core::mixture::{build_training_mixture, TrainingMixtureConfig, TrainingMode, AUG_TOKEN};
use sqlaug_core::parser::{canonical_key, exact_match, Parser};
use sqlaug_core::schema::{load_examples, load_schemas};
use sqlaug_core::stub::{CyclingSampler, EchoGenerator, PoolParser, RejectingParser};
use sqlaug_core::synthesis::{normalize_question, synthesize, Components, SynthesisConfig, SynthesisMode};
use sqlaug_core::toy::{self, ToyConfig};
use sqlaug_models::generator::{train_generator, GeneratorConfig, GeneratorTrainConfig};
use sqlaug_models::parser::{train_parser, ParserConfig, ParserTrainConfig};
use sqlaug_models::sampler::{train_sampler, SamplerConfig, SamplerTrainConfig};
use sqlaug_models::student::train_student;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const TOL: f64 = 1e-9;

// Reference entropy and NMI computed straight from the definitions, in nats.

fn oracle_entropy(counts: &[u64]) -> f64 {
    let nz: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    if nz.len() <= 1 {
        return 0.0;
    }
    let n: f64 = nz.iter().sum();
    nz.iter().map(|c| -(c / n) * (c / n).ln()).sum::<f64>() / (nz.len() as f64).ln()
}

fn oracle_nmi(t: &[Vec<u64>]) -> f64 {
    let n = t.iter().flatten().sum::<u64>() as f64;
    let px: Vec<f64> = t.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let py: Vec<f64> = (0..t[0].len())
        .map(|j| t.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
        .collect();
    let mut mi = 0.0;
    for (i, row) in t.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let p = c as f64 / n;
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    let h = |ps: &[f64]| ps.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum::<f64>();
    let denom = h(&px) + h(&py);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * mi / denom
    }
}

fn cells(t: &[Vec<u64>]) -> Vec<((usize, usize), u64)> {
    t.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| ((i, j), c)))
        .collect()
}

fn for_each_table(rows: usize, cols: usize, f: &mut dyn FnMut(&[Vec<u64>]) -> Result<(), String>) -> Result<usize, String> {
    let mut flat = vec![0u64; rows * cols];
    let mut n = 0;
    loop {
        let t: Vec<Vec<u64>> = flat.chunks(cols).map(<[u64]>::to_vec).collect();
        f(&t)?;
        n += 1;
        let mut k = 0;
        while k < flat.len() && flat[k] == 5 {
            flat[k] = 0;
            k += 1;
        }
        if k == flat.len() {
            return Ok(n);
        }
        flat[k] += 1;
    }
}

/// Every table of up to six cells is enumerated; larger shapes up to 6x6
/// are covered by 2000 seeded random tables each.
fn statistics_oracle() -> Outcome {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut check = |t: &[Vec<u64>]| -> Result<(), String> {
        if t.iter().flatten().sum::<u64>() == 0 {
            return Ok(());
        }
        let i = normalized_mutual_information(cells(t)).map_err(|e| e.to_string())?;
        let d = (i - oracle_nmi(t)).abs();
        worst = worst.max(d);
        if d >= TOL {
            return Err(format!("NMI {t:?}: {i} vs {}", oracle_nmi(t)));
        }
        if t.len() == 1 {
            let h = normalized_entropy(&t[0]).map_err(|e| e.to_string())?;
            let d = (h - oracle_entropy(&t[0])).abs();
            worst = worst.max(d);
            if d >= TOL {
                return Err(format!("entropy {:?}: {h}", t[0]));
            }
        }
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rows in 1..=6 {
        for cols in 1..=6 {
            if rows * cols <= 6 {
                checked += for_each_table(rows, cols, &mut check)?;
            } else {
                for _ in 0..2000 {
                    let t: Vec<Vec<u64>> = (0..rows)
                        .map(|_| (0..cols).map(|_| rng.random_range(0..=5)).collect())
                        .collect();
                    check(&t)?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} tables, max deviation {worst:.1e}"))
}

fn analytic_statistics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < TOL;
    let uniform = normalized_entropy(&[4, 4, 4, 4, 4]).unwrap();
    ensure!(close(uniform, 1.0), "uniform entropy {uniform}");
    let point = normalized_entropy(&[0, 9, 0]).unwrap();
    ensure!(close(point, 0.0), "point-mass entropy {point}");
    let same = normalized_mutual_information((0..6).map(|i| ((i, i), 1 + i as u64))).unwrap();
    ensure!(close(same, 1.0), "I(X;X) = {same}");
    let product = normalized_mutual_information(cells(&[vec![1, 3, 2], vec![2, 6, 4], vec![3, 9, 6]])).unwrap();
    ensure!(close(product, 0.0), "product table {product}");
    Ok("uniform 1, point mass 0, X=X 1, product 0".into())
}

fn stub_pipeline() -> Outcome {
    let toy = toy::build(&ToyConfig {
        pairs_per_domain: 40,
        ..ToyConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let schemas = toy.all_schemas();
    let env = toy.exec_environment(Duration::from_secs(5)).map_err(|e| e.to_string())?;
    let pairs: Vec<_> = toy.train_pairs.iter().chain(&toy.zero_shot_pairs).cloned().collect();
    let sampler = CyclingSampler::from_pairs(&pairs, &schemas);
    let generator = EchoGenerator {
        fixed: toy.train_pairs.iter().take(3).map(|p| p.question.clone()).collect(),
    };
    let pool = PoolParser::from_pairs(&pairs);
    let cfg = SynthesisConfig {
        s1: 10,
        s2: 3,
        generator_beam: 6,
        parser_beam: 3,
        ..SynthesisConfig::default()
    };
    let run = |parser: &dyn Parser| {
        synthesize(
            &toy.train_schemas,
            &toy.zero_shot_schemas,
            SynthesisMode::Both,
            &toy.train_pairs,
            &env,
            Components {
                sampler: &sampler,
                generator: &generator,
                parser,
            },
            &cfg,
        )
        .map_err(|e| e.to_string())
    };
    let out = run(&pool)?;
    let reference: HashSet<String> = toy.train_pairs.iter().map(|p| normalize_question(&p.question)).collect();
    let mut forms = HashSet::new();
    for a in &out.attrition {
        ensure!(a.after_no_para <= cfg.s1 * cfg.s2, "{}: {} > s1*s2", a.db_id, a.after_no_para);
        ensure!(
            a.after_beam >= a.after_pred && a.after_pred >= a.after_dedup && a.after_dedup >= a.after_no_para,
            "attrition increases: {a:?}"
        );
    }
    let train_ids: HashSet<&str> = toy.train_schemas.iter().map(|s| s.db_id.as_str()).collect();
    for e in &out.examples {
        // Zero-shot domains have no reference set.
        if train_ids.contains(e.db_id.as_str()) {
            ensure!(!reference.contains(&normalize_question(&e.question)), "reference question kept: {}", e.question);
        }
        ensure!(forms.insert((e.db_id.clone(), canonical_key(&e.sql))), "two examples for {}", e.sql);
    }
    ensure!(!out.examples.is_empty(), "pass-through stubs produced nothing");
    let rejected = run(&RejectingParser)?;
    ensure!(rejected.examples.is_empty(), "rejecting parser kept {}", rejected.examples.len());
    Ok(format!(
        "{} examples over {} domains; rejecting parser: 0",
        out.examples.len(),
        out.attrition.len()
    ))
}

fn memorization() -> Outcome {
    let toy = toy::build(&ToyConfig {
        pairs_per_domain: 20,
        ..ToyConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let schemas = toy.all_schemas();
    let pair = toy
        .train_pairs
        .iter()
        .find(|p| p.sql.contains("JOIN") && p.sql.contains("WHERE"))
        .or_else(|| toy.train_pairs.iter().find(|p| p.sql.contains("JOIN")))
        .unwrap()
        .clone();
    let schema = schemas.iter().find(|s| s.db_id == pair.db_id).unwrap();
    let seq = extract_entity_sequence(&pair.sql, schema).map_err(|e| e.to_string())?;
    let mut times = Vec::new();

    let t = Instant::now();
    let (sampler, _) = train_sampler(
        std::slice::from_ref(schema),
        std::slice::from_ref(&seq),
        SamplerConfig::default(),
        &SamplerTrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            ..SamplerTrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let got = sampler.sample(schema, 1, 1e-9, 0).map_err(|e| e.to_string())?;
    ensure!(got[0].entities == seq.entities, "sampler: {:?} vs {:?}", got[0].entities, seq.entities);
    times.push(t.elapsed());

    let t = Instant::now();
    let input = format_generator_input(&seq, schema).map_err(|e| e.to_string())?;
    let (generator, _) = train_generator(
        &[(input.clone(), pair.question.clone())],
        GeneratorConfig::default(),
        &GeneratorTrainConfig {
            learning_rate: 1e-2,
            batch_size: 1,
            epochs: 200,
            ..GeneratorTrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let got = generator.generate(&input, 1).map_err(|e| e.to_string())?;
    ensure!(got[0].question == pair.question, "generator: {} vs {}", got[0].question, pair.question);
    times.push(t.elapsed());

    let t = Instant::now();
    let (parser, _) = train_parser(
        std::slice::from_ref(&pair),
        &schemas,
        ParserConfig::default(),
        &ParserTrainConfig {
            epochs: 200,
            batch_size: 1,
            ..ParserTrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let got = parser.parse_beam(&pair.question, schema, 1).map_err(|e| e.to_string())?;
    ensure!(exact_match(&got[0].sql, &pair.sql), "parser: {} vs {}", got[0].sql, pair.sql);
    times.push(t.elapsed());
    ensure!(times.iter().all(|t| t.as_secs() < 300), "over 5 min: {times:?}");
    Ok(format!(
        "sampler {:.1}s, generator {:.1}s, parser {:.1}s",
        times[0].as_secs_f64(),
        times[1].as_secs_f64(),
        times[2].as_secs_f64()
    ))
}

/// The full toy configuration through the library commands.
fn toy_end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut cfg = commands::write_toy(dir, &ToyConfig::default()).map_err(|e| format!("{e:#}"))?;
    cfg.synthesis.s1 = 80;
    cfg.synthesis.s2 = 20;
    cfg.mixture.alpha_train = 0.3;
    cfg.mixture.alpha_new = 0.1;
    let err = |e: anyhow::Error| format!("{e:#}");
    commands::train_components(&cfg).map_err(err)?;
    let (file, _) = commands::synthesize(&cfg, DomainSet::TrainDev).map_err(err)?;
    let data = commands::Data::load(&cfg).map_err(err)?;

    // (a) every domain augmented, entities from its own schema
    let mut per_db: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &file.examples {
        let schema = data
            .schemas
            .iter()
            .find(|s| s.db_id == e.db_id)
            .ok_or_else(|| format!("unknown db {}", e.db_id))?;
        for ent in &e.entity_sequence.entities {
            ensure!(schema.entity_index(ent).is_some(), "{ent} not in {}", e.db_id);
        }
        extract_entity_sequence(&e.sql, schema).map_err(|x| format!("{}: {x}", e.sql))?;
        *per_db.entry(e.db_id.as_str()).or_default() += 1;
    }
    for s in data.train_domains.iter().chain(&data.dev_domains) {
        ensure!(per_db.contains_key(s.db_id.as_str()), "no examples for {}", s.db_id);
    }

    // (b) diversity trends
    let aug_pairs: Vec<_> = file.examples.iter().map(|e| e.to_pair()).collect();
    let seed = dataset_stats(&data.train, &data.schemas).map_err(|e| e.to_string())?;
    let aug = dataset_stats(&aug_pairs, &data.schemas).map_err(|e| e.to_string())?;
    ensure!(aug.h_col > seed.h_col, "h_col {:.3} -> {:.3}", seed.h_col, aug.h_col);
    ensure!(
        aug.i_col_sketch <= seed.i_col_sketch + 0.05,
        "i_col_sketch {:.3} -> {:.3}",
        seed.i_col_sketch,
        aug.i_col_sketch
    );

    // (c) student non-regression on the held-out domain
    let report = commands::train_student(&cfg, None).map_err(err)?;
    let row = &report.rows[0];
    let elapsed = start.elapsed();
    let summary = format!(
        "{} examples ({} zero-shot); h_col {:.3} -> {:.3}, i_col_sketch {:.3} -> {:.3}; EM teacher {:.1} student {:.1} ({:+.1}); {:.0}s",
        file.examples.len(),
        data.dev_domains.iter().map(|s| per_db[s.db_id.as_str()]).sum::<usize>(),
        seed.h_col,
        aug.h_col,
        seed.i_col_sketch,
        aug.i_col_sketch,
        100.0 * report.teacher.accuracy,
        100.0 * row.student.accuracy,
        row.delta_points,
        elapsed.as_secs_f64()
    );
    ensure!(row.delta_points >= -1.0, "student below teacher - 1: {summary}");
    ensure!(elapsed.as_secs() < 30 * 60, "over 30 min: {summary}");
    Ok(summary)
}

fn reduction_identity() -> Outcome {
    let toy = toy::build(&ToyConfig {
        pairs_per_domain: 20,
        ..ToyConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let schemas = toy.all_schemas();
    let train_cfg = ParserTrainConfig {
        epochs: 3,
        seed: 17,
        ..ParserTrainConfig::default()
    };
    let (baseline, _) = train_parser(&toy.train_pairs, &schemas, ParserConfig::default(), &train_cfg).map_err(|e| e.to_string())?;
    let mixture = build_training_mixture(&toy.train_pairs, &[], &[], &TrainingMixtureConfig::default()).map_err(|e| e.to_string())?;
    let run = train_student(
        &mixture,
        &schemas,
        ParserConfig::default(),
        &train_cfg,
        TrainingMode::WeightedJoint,
        AUG_TOKEN,
    )
    .map_err(|e| e.to_string())?;
    let a = baseline.parameters().map_err(|e| e.to_string())?;
    let b = run.model.parameters().map_err(|e| e.to_string())?;
    ensure!(a.keys().eq(b.keys()), "parameter names differ");
    let mut n = 0;
    for (k, x) in &a {
        let y = &b[k];
        ensure!(
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()),
            "{k} differs"
        );
        n += x.len();
    }
    Ok(format!("{n} parameters bit-identical"))
}

fn sqlaug(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sqlaug"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("sqlaug {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, file_hash(&p).unwrap());
            }
        }
    }
    out
}

/// Every subcommand run twice in separate directories through the binary.
fn cli_determinism(base: &Path) -> Outcome {
    let mut trees = Vec::new();
    let mut stdouts = Vec::new();
    for name in ["a", "b"] {
        let dir = base.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        sqlaug(&["toy", "corpus", "--pairs-per-domain", "20", "--seed", "3"], &dir)?;
        let corpus = dir.join("corpus");
        let mut cfg = RunConfig::load(&corpus.join("config.toml")).map_err(|e| e.to_string())?;
        cfg.sampler.train.epochs = 2;
        cfg.generator.train.epochs = 1;
        cfg.parser.train.epochs = 2;
        cfg.student.sweep = vec![(0.3, 0.1), (0.3, 0.3)];
        cfg.save(&corpus.join("config.toml")).map_err(|e| e.to_string())?;
        let c = ["--config", "config.toml"];
        let small = ["--s1", "6", "--s2", "3", "--generator-beam", "4"];
        let mut stdout = String::new();
        stdout += &sqlaug(&[&["train-components"][..], &c].concat(), &corpus)?;
        for mode in ["train", "dev", "train+dev"] {
            stdout += &sqlaug(&[&["synthesize", "--mode", mode][..], &c, &small].concat(), &corpus)?;
        }
        stdout += &sqlaug(&[&["train-student"][..], &c, &small].concat(), &corpus)?;
        stdout += &sqlaug(
            &["analyze", "--schemas", "tables.json", "--out", "run/stats", "train.json", "run/augmented/train+dev.json"],
            &corpus,
        )?;
        stdout += &sqlaug(
            &["evaluate", "--schemas", "tables.json", "--checkpoint", "run/components/parser.json", "dev.json"],
            &corpus,
        )?;
        trees.push(tree_hashes(&corpus));
        stdouts.push(stdout);
    }
    ensure!(stdouts[0] == stdouts[1], "stdout differs");
    let differing: Vec<_> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure!(trees[0].len() == trees[1].len(), "file sets differ");
    ensure!(differing.is_empty(), "differing outputs: {differing:?}");
    Ok(format!("{} files identical across two runs of 8 invocations", trees[0].len()))
}

/// `None` when no local copy is configured.
fn spider() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("SPIDER_DIR")?);
    Some((|| {
        let schemas = load_schemas(dir.join("tables.json")).map_err(|e| e.to_string())?;
        let train = load_examples(dir.join("train_spider.json"), &schemas).map_err(|e| e.to_string())?;
        let dev = load_examples(dir.join("dev.json"), &schemas).map_err(|e| e.to_string())?;
        let stats = dataset_stats(&train, &schemas).map_err(|e| e.to_string())?;
        let summary = format!(
            "train {} / dev {}; unique sketches {} and column sets {} (approximate; reference 267 / 1251)",
            train.len(),
            dev.len(),
            stats.n_unique_sketches,
            stats.n_unique_column_sets
        );
        ensure!(train.len() == 7000 && dev.len() == 1007, "unexpected counts: {summary}");
        Ok(summary)
    })())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name} [{secs:.1}s]: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name} [{secs:.1}s]: {detail}");
            false
        }
    }
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= run("1 statistics oracle (1e-9)", statistics_oracle);
    ok &= run("2 analytic statistics (1e-9)", analytic_statistics);
    ok &= run("3 pipeline semantics on stubs", stub_pipeline);
    ok &= run("4 memorization (200 epochs)", memorization);
    ok &= run("5 toy end to end (s1=80, s2=20)", || toy_end_to_end(&work.path().join("toy")));
    ok &= run("6 reduction identity (bitwise)", reduction_identity);
    ok &= run("7 CLI determinism (sha256)", || cli_determinism(&work.path().join("det")));
    match spider() {
        Some(outcome) => ok &= run("8 Spider loading", || outcome),
        None => println!("SKIP 8 Spider loading: SPIDER_DIR not set"),
    }
    if !ok {
        std::process::exit(1);
    }
}
