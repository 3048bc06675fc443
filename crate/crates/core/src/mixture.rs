//! Student training data: [AUG] tagging, per-source weights and the
//! per-mode training schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::AnnotatedPair;
use crate::synthesis::SynthesizedExample;

pub const AUG_TOKEN: &str = "[AUG]";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    #[default]
    WeightedJoint,
    PretrainFinetune,
    Combine,
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-joint" => Ok(TrainingMode::WeightedJoint),
            "pretrain-finetune" => Ok(TrainingMode::PretrainFinetune),
            "combine" => Ok(TrainingMode::Combine),
            other => Err(Error::InvalidArgument(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMixtureConfig {
    pub alpha_train: f64,
    pub alpha_new: f64,
    pub mode: TrainingMode,
    pub aug_token: String,
}

impl Default for TrainingMixtureConfig {
    fn default() -> Self {
        TrainingMixtureConfig {
            alpha_train: 0.3,
            alpha_new: 0.1,
            mode: TrainingMode::WeightedJoint,
            aug_token: AUG_TOKEN.to_string(),
        }
    }
}

impl TrainingMixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_train >= 0.0 && self.alpha_new >= 0.0)
            || !self.alpha_train.is_finite()
            || !self.alpha_new.is_finite()
        {
            return Err(Error::InvalidArgument("mixture weights must be finite and non-negative".into()));
        }
        if self.aug_token.trim().is_empty() {
            return Err(Error::InvalidArgument("aug token must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Train,
    AugTrain,
    AugNew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub pair: AnnotatedPair,
    pub weight: f64,
    pub tagged: bool,
    pub source: Source,
}

fn tag_prefix(token: &str) -> String {
    format!("{token} ")
}

pub fn tag_augmented(example: &SynthesizedExample) -> Result<AnnotatedPair> {
    tag_with(example, AUG_TOKEN)
}

/// `token + " " + question`; a question already carrying the tag is an error.
pub fn tag_with(example: &SynthesizedExample, token: &str) -> Result<AnnotatedPair> {
    let prefix = tag_prefix(token);
    if example.question.starts_with(&prefix) {
        return Err(Error::AlreadyTagged(example.question.clone()));
    }
    Ok(AnnotatedPair {
        question: format!("{prefix}{}", example.question),
        sql: example.sql.clone(),
        db_id: example.db_id.clone(),
    })
}

pub fn build_training_mixture(
    train: &[AnnotatedPair],
    aug_train: &[SynthesizedExample],
    aug_new: &[SynthesizedExample],
    config: &TrainingMixtureConfig,
) -> Result<Vec<WeightedExample>> {
    config.validate()?;
    let prefix = tag_prefix(&config.aug_token);
    let mut out = Vec::with_capacity(train.len() + aug_train.len() + aug_new.len());
    for p in train {
        if p.question.starts_with(&prefix) {
            return Err(Error::AlreadyTagged(p.question.clone()));
        }
        out.push(WeightedExample {
            pair: p.clone(),
            weight: 1.0,
            tagged: false,
            source: Source::Train,
        });
    }
    for (set, weight, source) in [
        (aug_train, config.alpha_train, Source::AugTrain),
        (aug_new, config.alpha_new, Source::AugNew),
    ] {
        for e in set {
            out.push(WeightedExample {
                pair: tag_with(e, &config.aug_token)?,
                weight,
                tagged: true,
                source,
            });
        }
    }
    Ok(out)
}

/// One pass of student training over (example, weight) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: &'static str,
    pub examples: Vec<(AnnotatedPair, f64)>,
}

/// Training schedule for `mode`:
/// weighted-joint trains once on the mixture, skipping zero-weight examples;
/// pretrain-finetune trains on the augmented part, then on the original part,
/// both unweighted; combine trains once on the untagged union, unweighted.
pub fn training_stages(mixture: &[WeightedExample], mode: TrainingMode, aug_token: &str) -> Vec<Stage> {
    let prefix = tag_prefix(aug_token);
    let untag = |w: &WeightedExample| {
        let mut p = w.pair.clone();
        if w.tagged {
            if let Some(rest) = p.question.strip_prefix(&prefix) {
                p.question = rest.to_string();
            }
        }
        p
    };
    match mode {
        TrainingMode::WeightedJoint => vec![Stage {
            name: "joint",
            examples: mixture
                .iter()
                .filter(|w| w.weight > 0.0)
                .map(|w| (w.pair.clone(), w.weight))
                .collect(),
        }],
        TrainingMode::PretrainFinetune => {
            let aug: Vec<_> = mixture
                .iter()
                .filter(|w| w.source != Source::Train)
                .map(|w| (w.pair.clone(), 1.0))
                .collect();
            let train = mixture
                .iter()
                .filter(|w| w.source == Source::Train)
                .map(|w| (w.pair.clone(), 1.0))
                .collect();
            let mut stages = Vec::new();
            if !aug.is_empty() {
                stages.push(Stage {
                    name: "pretrain",
                    examples: aug,
                });
            }
            stages.push(Stage {
                name: "finetune",
                examples: train,
            });
            stages
        }
        TrainingMode::Combine => vec![Stage {
            name: "combine",
            examples: mixture.iter().map(|w| (untag(w), 1.0)).collect(),
        }],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: usize,
    pub source: Source,
    pub weight: f64,
    pub tagged: bool,
}

pub fn mixture_manifest(mixture: &[WeightedExample]) -> Vec<ManifestRow> {
    mixture
        .iter()
        .enumerate()
        .map(|(id, w)| ManifestRow {
            id,
            source: w.source,
            weight: w.weight,
            tagged: w.tagged,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EntitySequence;

    fn synth(q: &str) -> SynthesizedExample {
        SynthesizedExample {
            question: q.into(),
            sql: "SELECT a FROM t".into(),
            db_id: "d".into(),
            entity_sequence: EntitySequence::new("d", vec![], true).unwrap(),
            generator_score: 0.0,
            parser_score: 0.0,
            aug: true,
        }
    }

    fn pair(q: &str) -> AnnotatedPair {
        AnnotatedPair {
            question: q.into(),
            sql: "SELECT a FROM t".into(),
            db_id: "d".into(),
        }
    }

    #[test]
    fn tags_once() {
        let tagged = tag_augmented(&synth("Who is the oldest?")).unwrap();
        assert_eq!(tagged.question, "[AUG] Who is the oldest?");
        assert_eq!(tagged.sql, "SELECT a FROM t");
        let again = synth(&tagged.question);
        assert!(matches!(tag_augmented(&again), Err(Error::AlreadyTagged(_))));
    }

    #[test]
    fn weights_by_source() {
        let train: Vec<_> = (0..10).map(|i| pair(&format!("t{i}"))).collect();
        let aug_train: Vec<_> = (0..5).map(|i| synth(&format!("a{i}"))).collect();
        let aug_new: Vec<_> = (0..3).map(|i| synth(&format!("n{i}"))).collect();
        let m = build_training_mixture(&train, &aug_train, &aug_new, &Default::default()).unwrap();
        assert_eq!(m.len(), 18);
        for w in &m {
            let expected = match w.source {
                Source::Train => 1.0,
                Source::AugTrain => 0.3,
                Source::AugNew => 0.1,
            };
            assert_eq!(w.weight, expected);
            assert_eq!(w.tagged, w.source != Source::Train);
            assert_eq!(w.pair.question.starts_with("[AUG] "), w.tagged);
        }
    }

    #[test]
    fn empty_augmentation() {
        let m = build_training_mixture(&[pair("q")], &[], &[], &Default::default()).unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn zero_weights_drop_out_of_joint_stage() {
        let cfg = TrainingMixtureConfig {
            alpha_train: 0.0,
            alpha_new: 0.0,
            ..Default::default()
        };
        let m = build_training_mixture(&[pair("q")], &[synth("a")], &[synth("b")], &cfg).unwrap();
        assert_eq!(m.len(), 3);
        let stages = training_stages(&m, TrainingMode::WeightedJoint, AUG_TOKEN);
        assert_eq!(stages.len(), 1);
        assert_eq!(stages[0].examples, vec![(pair("q"), 1.0)]);
    }

    #[test]
    fn combine_ignores_weights_and_tags() {
        let m = build_training_mixture(&[pair("q")], &[synth("a")], &[], &Default::default()).unwrap();
        let stages = training_stages(&m, TrainingMode::Combine, AUG_TOKEN);
        assert_eq!(stages[0].examples, vec![(pair("q"), 1.0), (pair("a"), 1.0)]);
    }

    #[test]
    fn pretrain_then_finetune() {
        let m = build_training_mixture(&[pair("q")], &[synth("a")], &[], &Default::default()).unwrap();
        let stages = training_stages(&m, TrainingMode::PretrainFinetune, AUG_TOKEN);
        let names: Vec<_> = stages.iter().map(|s| s.name).collect();
        assert_eq!(names, ["pretrain", "finetune"]);
        assert_eq!(stages[1].examples, vec![(pair("q"), 1.0)]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("combine".parse::<TrainingMode>().unwrap(), TrainingMode::Combine);
        assert!("joint".parse::<TrainingMode>().is_err());
    }
}
