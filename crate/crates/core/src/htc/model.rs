use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig, TrainSample, TrainedModel};
use super::{argmax, forward, HtcError, HtcParams, TreeShape};
use crate::corpus::Session;
use crate::retrieval::{cosine, Embedder};
use crate::taxonomy::{Taxonomy, DEPTH};

/// Joins turns for the concatenating strategies.
pub const CONCAT_SEP: &str = " | ";

const FORMAT_VERSION: u32 = 1;

/// How a session is turned into classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The final query only.
    SingleTurn,
    /// Every turn, in order.
    NaiveConcat,
    /// The history turn most similar to the final query, then the final query.
    SelectiveConcat,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::SingleTurn, Strategy::NaiveConcat, Strategy::SelectiveConcat];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SingleTurn => "single_turn",
            Strategy::NaiveConcat => "naive_concat",
            Strategy::SelectiveConcat => "selective_concat",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// The text the classifier sees for `session` under `strategy`.
pub fn input_text(session: &Session, strategy: Strategy, embedder: &dyn Embedder) -> Result<String, HtcError> {
    let (last, history) = session.turns.split_last().ok_or(HtcError::EmptySession)?;
    Ok(match strategy {
        Strategy::SingleTurn => last.clone(),
        Strategy::NaiveConcat => session.turns.join(CONCAT_SEP),
        Strategy::SelectiveConcat => {
            if history.is_empty() {
                return Ok(last.clone());
            }
            let q = embedder.embed(last)?;
            let mut best: Option<(f64, &String)> = None;
            for turn in history {
                let s = cosine(&embedder.embed(turn)?, &q)?;
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, turn));
                }
            }
            format!("{}{CONCAT_SEP}{last}", best.expect("history is non-empty").1)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub classes: [usize; DEPTH],
    pub class_names: [String; DEPTH],
    pub intent_id: String,
    /// Probability of the chosen leaf class.
    pub confidence: f64,
}

/// A trained classifier together with everything needed to map its outputs
/// back to taxonomy classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtcModel {
    pub version: u32,
    pub classes: [Vec<String>; DEPTH],
    /// Intent each leaf class resolves to.
    pub leaf_intents: Vec<String>,
    pub shape: TreeShape,
    pub params: HtcParams,
}

impl HtcModel {
    pub fn new(taxonomy: &Taxonomy, params: HtcParams) -> Result<Self, HtcError> {
        let shape = TreeShape::from_taxonomy(taxonomy)?;
        params.check_shapes(&shape)?;
        let classes = std::array::from_fn(|l| taxonomy.layer_classes(l + 1).expect("layer in range"));
        let leaf_intents = (0..shape.sizes[DEPTH - 1])
            .map(|leaf| {
                taxonomy
                    .intent_for_leaf(leaf)
                    .map(|i| i.id.clone())
                    .ok_or_else(|| HtcError::UnsimplifiedTaxonomy(format!("leaf {leaf} hosts no intent")))
            })
            .collect::<Result<_, _>>()?;
        Ok(HtcModel {
            version: FORMAT_VERSION,
            classes,
            leaf_intents,
            shape,
            params,
        })
    }

    /// Embeds `(text, intent id)` pairs and trains a fresh model on them.
    pub fn fit(
        taxonomy: &Taxonomy,
        train_set: &[(String, String)],
        val_set: &[(String, String)],
        embedder: &dyn Embedder,
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainedModel), HtcError> {
        let shape = TreeShape::from_taxonomy(taxonomy)?;
        let embed = |data: &[(String, String)]| -> Result<Vec<TrainSample>, HtcError> {
            data.iter()
                .map(|(text, id)| {
                    let targets = taxonomy.targets(id).ok_or_else(|| HtcError::UnknownIntent(id.clone()))?;
                    Ok(TrainSample {
                        h: embedder.embed(text)?.into_inner(),
                        targets,
                    })
                })
                .collect()
        };
        let trained = train(&embed(train_set)?, &embed(val_set)?, &shape, embedder.dim(), cfg)?;
        Ok((Self::new(taxonomy, trained.params.clone())?, trained))
    }

    pub fn predict_text(&self, text: &str, embedder: &dyn Embedder) -> Result<Prediction, HtcError> {
        let out = forward(text, embedder, &self.params, &self.shape)?;
        let classes: [usize; DEPTH] = std::array::from_fn(|l| argmax(&out.probs[l]));
        Ok(Prediction {
            classes,
            class_names: std::array::from_fn(|l| self.classes[l][classes[l]].clone()),
            intent_id: self.leaf_intents[classes[DEPTH - 1]].clone(),
            confidence: out.probs[DEPTH - 1][classes[DEPTH - 1]],
        })
    }

    pub fn predict(&self, session: &Session, strategy: Strategy, embedder: &dyn Embedder) -> Result<Prediction, HtcError> {
        self.predict_text(&input_text(session, strategy, embedder)?, embedder)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, HtcError> {
        let m: HtcModel = serde_json::from_str(text).map_err(|e| HtcError::Format(e.to_string()))?;
        if m.version != FORMAT_VERSION {
            return Err(HtcError::Format(format!("unsupported version {}", m.version)));
        }
        m.shape.validate()?;
        m.params.check_shapes(&m.shape)?;
        if !m.params.all_finite() {
            return Err(HtcError::Format("non-finite parameter".into()));
        }
        for l in 0..DEPTH {
            if m.classes[l].len() != m.shape.sizes[l] {
                return Err(HtcError::Format(format!("layer {} class list length", l + 1)));
            }
        }
        if m.leaf_intents.len() != m.shape.sizes[DEPTH - 1] {
            return Err(HtcError::Format("leaf intent list length".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HtcError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| HtcError::Format(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HtcError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HtcError::Format(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}
