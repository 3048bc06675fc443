//! The subcommands as library functions. Each reads a [`RunConfig`],
//! writes its artifacts under the run's output directory together with a
//! manifest, and returns a summary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sqlaug_core::analysis::{dataset_stats, render_stats_csv, render_stats_table, DatasetStats};
use sqlaug_core::entity::{extract_entity_sequence, format_generator_input};
use sqlaug_core::exec::ExecEnvironment;
use sqlaug_core::mixture::{build_training_mixture, mixture_manifest, ManifestRow, TrainingMixtureConfig};
use sqlaug_core::parser::{evaluate, EvalReport};
use sqlaug_core::schema::{find_schema, load_examples, load_schemas, save_examples, save_schemas, AnnotatedPair, SchemaGraph};
use sqlaug_core::synthesis::{synthesize as run_synthesis, Attrition, Components, QuestionGenerator, SynthesisMode, SynthesizedExample};
use sqlaug_core::toy::{self, ToyConfig};
use sqlaug_models::external::ExternalGenerator;
use sqlaug_models::generator::{train_generator, GeneratorModel};
use sqlaug_models::parser::{train_parser, ParserModel, ParserTrainLog};
use sqlaug_models::sampler::{train_sampler, SamplerModel};
use sqlaug_models::student::{train_student as fit_student, StageLog};
use sqlaug_models::TrainLog;

use crate::config::{file_hash, Paths, RunConfig};
use crate::manifest::{write_json, Manifest};

/// Schemas and examples of a run. Dev domains are the dev-set databases
/// that never occur in the training set.
pub struct Data {
    pub schemas: Vec<SchemaGraph>,
    pub train: Vec<AnnotatedPair>,
    pub dev: Vec<AnnotatedPair>,
    pub train_domains: Vec<SchemaGraph>,
    pub dev_domains: Vec<SchemaGraph>,
}

impl Data {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let schemas = load_schemas(cfg.schemas_path()).context("loading schemas")?;
        let train = load_examples(cfg.train_path(), &schemas).context("loading training examples")?;
        let dev = load_examples(cfg.dev_path(), &schemas).context("loading dev examples")?;
        let train_ids: BTreeSet<&str> = train.iter().map(|p| p.db_id.as_str()).collect();
        let dev_ids: BTreeSet<&str> = dev.iter().map(|p| p.db_id.as_str()).filter(|d| !train_ids.contains(d)).collect();
        let pick = |ids: &BTreeSet<&str>| schemas.iter().filter(|s| ids.contains(s.db_id.as_str())).cloned().collect();
        Ok(Data {
            train_domains: pick(&train_ids),
            dev_domains: pick(&dev_ids),
            schemas: schemas.clone(),
            train,
            dev,
        })
    }

    pub fn exec_environment(&self, cfg: &RunConfig) -> Result<ExecEnvironment> {
        let timeout = Duration::from_secs_f64(cfg.timeout_secs);
        Ok(match cfg.databases_path() {
            Some(dir) => ExecEnvironment::open_dir(dir, &self.schemas, timeout)?,
            None => ExecEnvironment::schemas_only(&self.schemas, timeout),
        })
    }
}

fn components_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir().join("components")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentsReport {
    pub config_hash: String,
    pub components_hash: String,
    pub sampler_sequences: usize,
    pub skipped_sequences: usize,
    pub sampler: TrainLog,
    pub generator_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<TrainLog>,
    pub parser: ParserTrainLog,
}

/// Trains the entity sampler, question generator and teacher parser.
pub fn train_components(cfg: &RunConfig) -> Result<ComponentsReport> {
    cfg.validate()?;
    let data = Data::load(cfg)?;
    let dir = components_dir(cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let root = cfg.output_dir();
    let mut manifest = Manifest::new("train-components", cfg.hash()?, cfg.seed);
    manifest.components_hash = Some(cfg.components_hash()?);
    manifest.input("schemas", &cfg.schemas_path())?;
    manifest.input("train", &cfg.train_path())?;

    let mut sequences = Vec::new();
    let mut gen_pairs = Vec::new();
    let mut skipped = 0;
    for p in &data.train {
        let schema = find_schema(&data.schemas, &p.db_id)?;
        match extract_entity_sequence(&p.sql, schema) {
            Ok(seq) => {
                if !seq.is_empty() {
                    gen_pairs.push((format_generator_input(&seq, schema)?, p.question.clone()));
                }
                sequences.push(seq);
            }
            Err(e) => {
                log::debug!("no entity sequence for `{}`: {e}", p.sql);
                skipped += 1;
            }
        }
    }

    log::info!("training entity sampler on {} sequences", sequences.len());
    let (sampler, sampler_log) = train_sampler(&data.train_domains, &sequences, cfg.sampler.model.clone(), &cfg.sampler_train())
        .context("train-components: sampler")?;
    let path = dir.join("sampler.json");
    sampler.save(&path)?;
    manifest.output(&root, &path)?;

    log::info!("training question generator on {} pairs", gen_pairs.len());
    let generator_log = match &cfg.generator.external {
        None => {
            let (generator, log) = train_generator(&gen_pairs, cfg.generator.model.clone(), &cfg.generator_train())
                .context("train-components: generator")?;
            let path = dir.join("generator.json");
            generator.save(&path)?;
            manifest.output(&root, &path)?;
            Some(log)
        }
        Some(cmd) => {
            let worker = ExternalGenerator::spawn(&cmd[0], &cmd[1..]).context("train-components: generator")?;
            let path = dir.join("generator");
            worker
                .train(&gen_pairs, &cfg.generator_train(), &path)
                .context("train-components: generator")?;
            None
        }
    };

    log::info!("training teacher parser on {} examples", data.train.len());
    let (teacher, parser_log) = train_parser(&data.train, &data.schemas, cfg.parser.model.clone(), &cfg.parser_train())
        .context("train-components: parser")?;
    let path = dir.join("parser.json");
    teacher.save(&path)?;
    manifest.output(&root, &path)?;

    let report = ComponentsReport {
        config_hash: manifest.config_hash.clone(),
        components_hash: manifest.components_hash.clone().unwrap(),
        sampler_sequences: sequences.len(),
        skipped_sequences: skipped,
        sampler: sampler_log,
        generator_pairs: gen_pairs.len(),
        generator: generator_log,
        parser: parser_log,
    };
    let path = dir.join("train_log.json");
    write_json(&path, &report)?;
    manifest.output(&root, &path)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(report)
}

/// Verifies that the stored components were trained under this config.
fn check_components(cfg: &RunConfig, stage: &str) -> Result<String> {
    let path = components_dir(cfg).join("manifest.json");
    let m = Manifest::load(&path).with_context(|| format!("{stage}: components are missing; run train-components first"))?;
    let expected = cfg.components_hash()?;
    if m.components_hash.as_deref() != Some(expected.as_str()) {
        bail!("{stage}: checkpoint mismatch: components were trained under a different configuration or data");
    }
    Ok(expected)
}

fn load_generator(cfg: &RunConfig) -> Result<Box<dyn QuestionGenerator>> {
    let dir = components_dir(cfg);
    Ok(match &cfg.generator.external {
        None => Box::new(GeneratorModel::load(dir.join("generator.json"))?),
        Some(cmd) => {
            let worker = ExternalGenerator::spawn(&cmd[0], &cmd[1..])?;
            worker.load(&dir.join("generator"))?;
            Box::new(worker)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainSet {
    Train,
    Dev,
    TrainDev,
}

impl DomainSet {
    pub fn name(self) -> &'static str {
        match self {
            DomainSet::Train => "train",
            DomainSet::Dev => "dev",
            DomainSet::TrainDev => "train+dev",
        }
    }

    fn mode(self) -> SynthesisMode {
        match self {
            DomainSet::Train => SynthesisMode::TrainDomains,
            DomainSet::Dev => SynthesisMode::ZeroShotDomains,
            DomainSet::TrainDev => SynthesisMode::Both,
        }
    }
}

impl std::str::FromStr for DomainSet {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DomainSet::Train),
            "dev" => Ok(DomainSet::Dev),
            "train+dev" => Ok(DomainSet::TrainDev),
            other => Err(anyhow!("unknown synthesis mode `{other}` (expected train, dev or train+dev)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFile {
    pub config_hash: String,
    pub components_hash: String,
    pub mode: String,
    pub examples: Vec<SynthesizedExample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttritionReport {
    pub config_hash: String,
    pub mode: String,
    pub attrition: Vec<Attrition>,
}

pub fn augmented_path(cfg: &RunConfig, set: DomainSet) -> PathBuf {
    cfg.output_dir().join("augmented").join(format!("{}.json", set.name()))
}

/// Runs the synthesis pipeline over the chosen domain set.
pub fn synthesize(cfg: &RunConfig, set: DomainSet) -> Result<(AugmentedFile, AttritionReport)> {
    cfg.validate()?;
    let components_hash = check_components(cfg, "synthesize")?;
    let data = Data::load(cfg)?;
    let env = data.exec_environment(cfg)?;
    let dir = components_dir(cfg);
    let sampler = SamplerModel::load(dir.join("sampler.json")).context("synthesize: loading sampler")?;
    let generator = load_generator(cfg).context("synthesize: loading generator")?;
    let teacher = ParserModel::load(dir.join("parser.json")).context("synthesize: loading parser")?;
    let out = run_synthesis(
        &data.train_domains,
        &data.dev_domains,
        set.mode(),
        &data.train,
        &env,
        Components {
            sampler: &sampler,
            generator: generator.as_ref(),
            parser: &teacher,
        },
        &cfg.synthesis_config(),
    )
    .context("synthesize")?;
    let config_hash = cfg.hash()?;
    let file = AugmentedFile {
        config_hash: config_hash.clone(),
        components_hash: components_hash.clone(),
        mode: set.name().to_string(),
        examples: out.examples,
    };
    let report = AttritionReport {
        config_hash: config_hash.clone(),
        mode: set.name().to_string(),
        attrition: out.attrition,
    };
    let root = cfg.output_dir();
    let path = augmented_path(cfg, set);
    let attr_path = path.with_extension("attrition.json");
    write_json(&path, &file)?;
    write_json(&attr_path, &report)?;
    let mut manifest = Manifest::new("synthesize", config_hash, cfg.seed);
    manifest.components_hash = Some(components_hash);
    manifest.input("schemas", &cfg.schemas_path())?;
    manifest.input("train", &cfg.train_path())?;
    manifest.input("dev", &cfg.dev_path())?;
    manifest.output(&root, &path)?;
    manifest.output(&root, &attr_path)?;
    manifest.save(&path.with_extension("manifest.json"))?;
    Ok((file, report))
}

pub fn render_attrition(rows: &[Attrition]) -> String {
    let mut s = String::from("| db_id | sequences | beam | pred | dedup | no-para |\n|---|---:|---:|---:|---:|---:|\n");
    for a in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            a.db_id, a.sequences, a.after_beam, a.after_pred, a.after_dedup, a.after_no_para
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRow {
    pub alpha_train: f64,
    pub alpha_new: f64,
    pub mode: String,
    pub aug_train: usize,
    pub aug_new: usize,
    pub student: EvalReport,
    /// Student minus teacher accuracy, in points.
    pub delta_points: f64,
    pub stages: Vec<StageLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub config_hash: String,
    pub components_hash: String,
    pub augmented_hash: String,
    pub teacher: EvalReport,
    pub rows: Vec<StudentRow>,
}

fn load_augmented(path: &Path) -> Result<Vec<SynthesizedExample>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: AugmentedFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(file.examples)
}

fn weight_tag(x: f64) -> String {
    format!("{x}")
}

/// Trains one student per `(alpha_train, alpha_new)` pair and compares each
/// with the teacher on the dev set.
pub fn train_student(cfg: &RunConfig, augmented: Option<&Path>) -> Result<StudentReport> {
    cfg.validate()?;
    let components_hash = check_components(cfg, "train-student")?;
    let data = Data::load(cfg)?;
    let aug_path = augmented
        .map(Path::to_path_buf)
        .unwrap_or_else(|| augmented_path(cfg, DomainSet::TrainDev));
    let aug = load_augmented(&aug_path).context("train-student: augmented data")?;
    let train_ids: BTreeSet<&str> = data.train_domains.iter().map(|s| s.db_id.as_str()).collect();
    let (aug_train, aug_new): (Vec<SynthesizedExample>, Vec<SynthesizedExample>) =
        aug.into_iter().partition(|e| train_ids.contains(e.db_id.as_str()));

    let teacher = ParserModel::load(components_dir(cfg).join("parser.json"))?;
    let teacher_report = evaluate(&teacher, &data.dev, &data.schemas)?;
    let sweep = if cfg.student.sweep.is_empty() {
        vec![(cfg.mixture.alpha_train, cfg.mixture.alpha_new)]
    } else {
        cfg.student.sweep.clone()
    };
    let root = cfg.output_dir();
    let dir = root.join("student");
    let config_hash = cfg.hash()?;
    let mut manifest = Manifest::new("train-student", config_hash.clone(), cfg.seed);
    manifest.components_hash = Some(components_hash.clone());
    manifest.input("augmented", &aug_path)?;
    manifest.input("train", &cfg.train_path())?;
    manifest.input("dev", &cfg.dev_path())?;
    let mut rows = Vec::new();
    for (alpha_train, alpha_new) in sweep {
        let mix_cfg = TrainingMixtureConfig {
            alpha_train,
            alpha_new,
            ..cfg.mixture.clone()
        };
        let mixture = build_training_mixture(&data.train, &aug_train, &aug_new, &mix_cfg)?;
        if mixture.is_empty() {
            bail!("train-student: empty training mixture");
        }
        let run = fit_student(
            &mixture,
            &data.schemas,
            cfg.parser.model.clone(),
            &cfg.parser_train(),
            mix_cfg.mode,
            &mix_cfg.aug_token,
        )
        .context("train-student")?;
        let report = evaluate(&run.model, &data.dev, &data.schemas)?;
        let tag = format!("a{}-{}", weight_tag(alpha_train), weight_tag(alpha_new));
        let ckpt = dir.join(&tag).join("parser.json");
        std::fs::create_dir_all(ckpt.parent().unwrap())?;
        run.model.save(&ckpt)?;
        manifest.output(&root, &ckpt)?;
        let rows_path = dir.join(&tag).join("mixture.json");
        let manifest_rows: Vec<ManifestRow> = mixture_manifest(&mixture);
        write_json(&rows_path, &manifest_rows)?;
        manifest.output(&root, &rows_path)?;
        rows.push(StudentRow {
            alpha_train,
            alpha_new,
            mode: serde_json::to_value(mix_cfg.mode)?.as_str().unwrap_or_default().to_string(),
            aug_train: aug_train.len(),
            aug_new: aug_new.len(),
            delta_points: 100.0 * (report.accuracy - teacher_report.accuracy),
            student: report,
            stages: run.stages,
        });
    }
    let report = StudentReport {
        config_hash,
        components_hash,
        augmented_hash: file_hash(&aug_path)?,
        teacher: teacher_report,
        rows,
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    manifest.output(&root, &path)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(report)
}

pub fn render_student(report: &StudentReport) -> String {
    let mut s = format!(
        "teacher exact match: {:.1} ({}/{})\n\n| alpha_train | alpha_new | mode | student EM | delta |\n|---:|---:|---|---:|---:|\n",
        100.0 * report.teacher.accuracy,
        report.teacher.correct,
        report.teacher.n
    );
    for r in &report.rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.1} | {:+.1} |\n",
            r.alpha_train,
            r.alpha_new,
            r.mode,
            100.0 * r.student.accuracy,
            r.delta_points
        ));
    }
    s
}

/// Loads a dataset for analysis: a Spider-style example list or an
/// augmented file written by `synthesize`.
pub fn load_dataset(path: &Path, schemas: &[SchemaGraph]) -> Result<Vec<AnnotatedPair>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.is_object() {
        let file: AugmentedFile = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        for e in &file.examples {
            find_schema(schemas, &e.db_id)?;
        }
        return Ok(file.examples.iter().map(SynthesizedExample::to_pair).collect());
    }
    Ok(load_examples(path, schemas)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub datasets: Vec<(String, DatasetStats)>,
    /// Files that could not be loaded, with the reason.
    pub errors: Vec<(String, String)>,
}

impl AnalysisReport {
    pub fn table(&self) -> String {
        let cols: Vec<(&str, &DatasetStats)> = self.datasets.iter().map(|(n, s)| (n.as_str(), s)).collect();
        render_stats_table(&cols)
    }

    pub fn csv(&self) -> String {
        let cols: Vec<(&str, &DatasetStats)> = self.datasets.iter().map(|(n, s)| (n.as_str(), s)).collect();
        render_stats_csv(&cols)
    }
}

/// Statistics for each input side by side. A file that fails to load is
/// reported and the others are still analyzed.
pub fn analyze(schemas_path: &Path, inputs: &[PathBuf], out_dir: Option<&Path>) -> Result<AnalysisReport> {
    let schemas = load_schemas(schemas_path).context("analyze: loading schemas")?;
    let mut report = AnalysisReport {
        datasets: Vec::new(),
        errors: Vec::new(),
    };
    for p in inputs {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        match load_dataset(p, &schemas).and_then(|ex| Ok(dataset_stats(&ex, &schemas)?)) {
            Ok(stats) => report.datasets.push((name, stats)),
            Err(e) => report.errors.push((p.display().to_string(), format!("{e:#}"))),
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("stats.md"), report.table())?;
        std::fs::write(dir.join("stats.csv"), report.csv())?;
        write_json(&dir.join("stats.json"), &report)?;
    }
    Ok(report)
}

/// Greedy exact match of a parser checkpoint on an example file.
pub fn evaluate_checkpoint(schemas_path: &Path, checkpoint: &Path, examples: &Path) -> Result<EvalReport> {
    let schemas = load_schemas(schemas_path).context("evaluate: loading schemas")?;
    let parser = ParserModel::load(checkpoint).context("evaluate: loading parser")?;
    let data = load_dataset(examples, &schemas).context("evaluate: loading examples")?;
    Ok(evaluate(&parser, &data, &schemas)?)
}

/// Writes the synthetic corpus (schemas, train and dev examples, SQLite
/// databases) and a matching `config.toml` into `dir`. The zero-shot
/// domain's pairs form the dev set.
pub fn write_toy(dir: &Path, toy_config: &ToyConfig) -> Result<RunConfig> {
    let corpus = toy::build(toy_config)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_schemas(dir.join("tables.json"), &corpus.all_schemas())?;
    save_examples(dir.join("train.json"), &corpus.train_pairs)?;
    save_examples(dir.join("dev.json"), &corpus.zero_shot_pairs)?;
    corpus.write_databases(&dir.join("database"))?;
    let mut cfg = RunConfig::toy(
        Paths {
            schemas: "tables.json".into(),
            train: "train.json".into(),
            dev: "dev.json".into(),
            databases: Some("database".into()),
            output: "run".into(),
        },
        toy_config.seed,
    );
    cfg.save(&dir.join("config.toml"))?;
    cfg.base_dir = dir.to_path_buf();
    Ok(cfg)
}
