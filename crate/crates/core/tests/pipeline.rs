use std::collections::HashSet;
use std::time::Duration;

use sqlaug_core::parser::canonical_key;
use sqlaug_core::stub::{CyclingSampler, EchoGenerator, PoolParser, RejectingParser};
use sqlaug_core::synthesis::{normalize_question, synthesize, Components, SynthesisConfig, SynthesisMode};
use sqlaug_core::toy::{self, ToyConfig, ToyCorpus};

fn corpus() -> ToyCorpus {
    toy::build(&ToyConfig {
        pairs_per_domain: 40,
        ..ToyConfig::default()
    })
    .unwrap()
}

fn config() -> SynthesisConfig {
    SynthesisConfig {
        s1: 12,
        s2: 4,
        generator_beam: 6,
        parser_beam: 3,
        ..SynthesisConfig::default()
    }
}

#[test]
fn pass_through_stubs_respect_every_filter() {
    let toy = corpus();
    let schemas = toy.all_schemas();
    let env = toy.exec_environment(Duration::from_secs(5)).unwrap();
    let all_pairs: Vec<_> = toy.train_pairs.iter().chain(&toy.zero_shot_pairs).cloned().collect();
    let sampler = CyclingSampler::from_pairs(&all_pairs, &schemas);
    // Leading reference questions must never survive deduplication.
    let reference_qs: Vec<String> = toy.train_pairs.iter().take(2).map(|p| p.question.clone()).collect();
    let generator = EchoGenerator {
        fixed: reference_qs.clone(),
    };
    let parser = PoolParser::from_pairs(&all_pairs);
    let cfg = config();
    let out = synthesize(
        &toy.train_schemas,
        &toy.zero_shot_schemas,
        SynthesisMode::Both,
        &toy.train_pairs,
        &env,
        Components {
            sampler: &sampler,
            generator: &generator,
            parser: &parser,
        },
        &cfg,
    )
    .unwrap();

    assert_eq!(out.attrition.len(), schemas.len());
    for a in &out.attrition {
        assert!(a.after_beam >= a.after_pred, "{a:?}");
        assert!(a.after_pred >= a.after_dedup, "{a:?}");
        assert!(a.after_dedup >= a.after_no_para, "{a:?}");
        assert!(a.after_no_para <= cfg.s1 * cfg.s2, "{a:?}");
        assert!(a.after_no_para > 0, "{a:?}");
        let n = out.examples.iter().filter(|e| e.db_id == a.db_id).count();
        assert_eq!(n, a.after_no_para);
    }

    let reference: HashSet<String> = toy.train_pairs.iter().map(|p| normalize_question(&p.question)).collect();
    let mut forms = HashSet::new();
    for e in &out.examples {
        if toy.train_schemas.iter().any(|s| s.db_id == e.db_id) {
            assert!(!reference.contains(&normalize_question(&e.question)), "{}", e.question);
        }
        assert!(forms.insert((e.db_id.clone(), canonical_key(&e.sql))), "{}", e.sql);
        assert!(e.aug);
    }
}

#[test]
fn rejecting_parser_yields_nothing() {
    let toy = corpus();
    let schemas = toy.all_schemas();
    let env = toy.exec_environment(Duration::from_secs(5)).unwrap();
    let sampler = CyclingSampler::from_pairs(&toy.train_pairs, &schemas);
    let out = synthesize(
        &toy.train_schemas,
        &[],
        SynthesisMode::TrainDomains,
        &toy.train_pairs,
        &env,
        Components {
            sampler: &sampler,
            generator: &EchoGenerator::default(),
            parser: &RejectingParser,
        },
        &config(),
    )
    .unwrap();
    assert!(out.examples.is_empty());
    for a in &out.attrition {
        assert!(a.after_beam > 0);
        assert_eq!(a.after_pred, 0);
    }
}

#[test]
fn modes_select_domains() {
    let toy = corpus();
    let schemas = toy.all_schemas();
    let env = toy.exec_environment(Duration::from_secs(5)).unwrap();
    let sampler = CyclingSampler::from_pairs(&toy.train_pairs, &schemas);
    let parser = PoolParser::from_pairs(&toy.train_pairs);
    let generator = EchoGenerator::default();
    let run = |mode| {
        synthesize(
            &toy.train_schemas,
            &toy.zero_shot_schemas,
            mode,
            &toy.train_pairs,
            &env,
            Components {
                sampler: &sampler,
                generator: &generator,
                parser: &parser,
            },
            &config(),
        )
        .unwrap()
        .attrition
        .into_iter()
        .map(|a| a.db_id)
        .collect::<Vec<_>>()
    };
    let train: Vec<_> = toy.train_schemas.iter().map(|s| s.db_id.clone()).collect();
    let zero: Vec<_> = toy.zero_shot_schemas.iter().map(|s| s.db_id.clone()).collect();
    assert_eq!(run(SynthesisMode::TrainDomains), train);
    assert_eq!(run(SynthesisMode::ZeroShotDomains), zero);
    assert_eq!(run(SynthesisMode::Both), [train, zero].concat());
}

#[test]
fn reruns_are_identical() {
    let toy = corpus();
    let schemas = toy.all_schemas();
    let env = toy.exec_environment(Duration::from_secs(5)).unwrap();
    let sampler = CyclingSampler::from_pairs(&toy.train_pairs, &schemas);
    let parser = PoolParser::from_pairs(&toy.train_pairs);
    let generator = EchoGenerator::default();
    let run = || {
        synthesize(
            &toy.train_schemas,
            &[],
            SynthesisMode::TrainDomains,
            &toy.train_pairs,
            &env,
            Components {
                sampler: &sampler,
                generator: &generator,
                parser: &parser,
            },
            &config(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}
