//! Student parser training on a weighted mixture of original and
//! augmented examples.

use serde::{Deserialize, Serialize};
use sqlaug_core::mixture::{training_stages, TrainingMode, WeightedExample};
use sqlaug_core::schema::SchemaGraph;
use sqlaug_core::{Error, Result};

use crate::parser::{train_weighted, ParserConfig, ParserModel, ParserTrainConfig, ParserTrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub examples: usize,
    pub log: ParserTrainLog,
}

pub struct StudentRun {
    pub model: ParserModel,
    pub stages: Vec<StageLog>,
}

/// Trains a freshly initialized parser on `mixture` according to `mode`.
/// Stages run in order on the same model; each stage gets a fresh
/// optimizer.
pub fn train_student(
    mixture: &[WeightedExample],
    schemas: &[SchemaGraph],
    model_config: ParserConfig,
    config: &ParserTrainConfig,
    mode: TrainingMode,
    aug_token: &str,
) -> Result<StudentRun> {
    if mixture.is_empty() {
        return Err(Error::component("student", "empty training mixture"));
    }
    let mut model = ParserModel::new(model_config, config.seed)?;
    let mut stages = Vec::new();
    for stage in training_stages(mixture, mode, aug_token) {
        let (m, log) = train_weighted(model, &stage.examples, schemas, config)?;
        log::info!(
            "student stage {}: {} examples, final loss {:.4}",
            stage.name,
            stage.examples.len(),
            log.log.final_loss()
        );
        stages.push(StageLog {
            name: stage.name.to_string(),
            examples: stage.examples.len(),
            log,
        });
        model = m;
    }
    Ok(StudentRun { model, stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::train_parser;
    use sqlaug_core::mixture::{build_training_mixture, TrainingMixtureConfig, AUG_TOKEN};
    use sqlaug_core::schema::{AnnotatedPair, EntitySequence};
    use sqlaug_core::synthesis::SynthesizedExample;
    use sqlaug_core::toy::{self, ToyConfig};

    fn data() -> (Vec<SchemaGraph>, Vec<AnnotatedPair>, Vec<SynthesizedExample>) {
        let toy = toy::build(&ToyConfig {
            pairs_per_domain: 6,
            ..ToyConfig::default()
        })
        .unwrap();
        let schemas = toy.all_schemas();
        let train: Vec<AnnotatedPair> = toy.train_pairs.iter().take(12).cloned().collect();
        let aug = toy
            .zero_shot_pairs
            .iter()
            .take(5)
            .map(|p| SynthesizedExample {
                question: format!("{} please", p.question),
                sql: p.sql.clone(),
                db_id: p.db_id.clone(),
                entity_sequence: EntitySequence::new(&p.db_id, Vec::new(), true).unwrap(),
                generator_score: -1.0,
                parser_score: -1.0,
                aug: true,
            })
            .collect();
        (schemas, train, aug)
    }

    fn config() -> ParserTrainConfig {
        ParserTrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            ..ParserTrainConfig::default()
        }
    }

    fn small() -> ParserConfig {
        ParserConfig {
            dim: 16,
            hidden: 16,
            buckets: 256,
            ..ParserConfig::default()
        }
    }

    #[test]
    fn zero_weight_augmentation_reproduces_baseline() {
        let (schemas, train, aug) = data();
        let (base, base_log) = train_parser(&train, &schemas, small(), &config()).unwrap();
        let mix = build_training_mixture(
            &train,
            &[],
            &aug,
            &TrainingMixtureConfig {
                alpha_train: 0.0,
                alpha_new: 0.0,
                ..TrainingMixtureConfig::default()
            },
        )
        .unwrap();
        assert_eq!(mix.len(), train.len() + aug.len());
        let run = train_student(&mix, &schemas, small(), &config(), TrainingMode::WeightedJoint, AUG_TOKEN).unwrap();
        assert_eq!(run.stages.len(), 1);
        assert_eq!(run.stages[0].log, base_log);
        assert_eq!(run.model.parameters().unwrap(), base.parameters().unwrap());
    }

    #[test]
    fn scaling_all_weights_leaves_updates_unchanged() {
        let (schemas, train, aug) = data();
        let mix = build_training_mixture(&train, &[], &aug, &TrainingMixtureConfig::default()).unwrap();
        let weighted: Vec<(AnnotatedPair, f64)> = mix.iter().map(|w| (w.pair.clone(), w.weight)).collect();
        let scaled: Vec<(AnnotatedPair, f64)> = weighted.iter().map(|(p, w)| (p.clone(), 4.0 * w)).collect();
        let (a, _) = train_weighted(ParserModel::new(small(), 5).unwrap(), &weighted, &schemas, &config()).unwrap();
        let (b, _) = train_weighted(ParserModel::new(small(), 5).unwrap(), &scaled, &schemas, &config()).unwrap();
        assert_eq!(a.parameters().unwrap(), b.parameters().unwrap());
    }

    #[test]
    fn batch_loss_is_weighted_mean_of_example_losses() {
        let (schemas, train, aug) = data();
        let mix = build_training_mixture(&train[..3], &[], &aug[..2], &TrainingMixtureConfig::default()).unwrap();
        let batch: Vec<(AnnotatedPair, f64)> = mix.iter().map(|w| (w.pair.clone(), w.weight)).collect();
        let m = ParserModel::new(small(), 2).unwrap();
        let pairs: Vec<AnnotatedPair> = batch.iter().map(|(p, _)| p.clone()).collect();
        let losses = m.example_losses(&pairs, &schemas).unwrap();
        let num: f64 = batch.iter().zip(&losses).map(|((_, w), l)| w * l).sum();
        let den: f64 = batch.iter().map(|(_, w)| w).sum();
        let got = m.batch_loss(&batch, &schemas).unwrap();
        assert!((got - num / den).abs() < 1e-4 * (num / den), "{got} vs {}", num / den);
        // unweighted mean differs, so the weights matter
        let plain = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!((plain - num / den).abs() > 1e-6);
    }

    #[test]
    fn combine_ignores_weights_and_tags() {
        let (schemas, train, aug) = data();
        let mix = build_training_mixture(&train, &[], &aug, &TrainingMixtureConfig::default()).unwrap();
        let run = train_student(&mix, &schemas, small(), &config(), TrainingMode::Combine, AUG_TOKEN).unwrap();
        let union: Vec<AnnotatedPair> = train
            .iter()
            .cloned()
            .chain(aug.iter().map(|a| a.to_pair()))
            .collect();
        let (reference, _) = train_parser(&union, &schemas, small(), &config()).unwrap();
        assert_eq!(run.model.parameters().unwrap(), reference.parameters().unwrap());
    }

    #[test]
    fn pretrain_finetune_runs_two_stages() {
        let (schemas, train, aug) = data();
        let mix = build_training_mixture(&train, &[], &aug, &TrainingMixtureConfig::default()).unwrap();
        let run =
            train_student(&mix, &schemas, small(), &config(), TrainingMode::PretrainFinetune, AUG_TOKEN).unwrap();
        let names: Vec<&str> = run.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["pretrain", "finetune"]);
        assert_eq!(run.stages[0].examples, aug.len());
        assert_eq!(run.stages[1].examples, train.len());
        assert!(run.model.is_trained());
    }
}
