use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::models::{ItemParams, ItemRecord, ModelKind, SlipGuess};
use crate::qmatrix::QMatrix;

/// Generating truth attached to a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub model: ModelKind,
    pub profiles: BinaryMatrix,
    pub item_params: Vec<ItemParams>,
    pub slip_guess: Vec<SlipGuess>,
    pub seed: u64,
}

/// N x J binary responses with optional generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub responses: BinaryMatrix,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(responses: BinaryMatrix) -> Self {
        Self { responses, truth: None }
    }

    pub fn n_respondents(&self) -> usize {
        self.responses.rows()
    }

    pub fn n_items(&self) -> usize {
        self.responses.cols()
    }

    /// Check that the responses line up with `q`.
    pub fn check_against(&self, q: &QMatrix) -> Result<()> {
        if self.n_items() != q.n_items() {
            return Err(Error::Dimension { expected: q.n_items(), got: self.n_items() });
        }
        if let Some(t) = &self.truth {
            if t.profiles.cols() != q.n_attributes() {
                return Err(Error::Dimension { expected: q.n_attributes(), got: t.profiles.cols() });
            }
        }
        Ok(())
    }
}

/// JSON sidecar holding the truth of a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: ModelKind,
    pub profiles: Vec<Vec<u8>>,
    pub item_params: Vec<ItemRecord>,
    pub slip_guess: Vec<SlipGuess>,
    pub seeds: TruthSeeds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSeeds {
    pub master: u64,
}

impl TruthFile {
    pub fn from_truth(truth: &Truth, q: &QMatrix) -> Self {
        Self {
            model: truth.model,
            profiles: truth.profiles.to_rows(),
            item_params: truth
                .item_params
                .iter()
                .enumerate()
                .map(|(j, p)| p.to_record(&q.row(j)))
                .collect(),
            slip_guess: truth.slip_guess.clone(),
            seeds: TruthSeeds { master: truth.seed },
        }
    }

    pub fn into_truth(self) -> Result<Truth> {
        Ok(Truth {
            model: self.model,
            profiles: BinaryMatrix::from_rows(&self.profiles)?,
            item_params: self.item_params.iter().map(ItemRecord::to_params).collect::<Result<_>>()?,
            slip_guess: self.slip_guess,
            seed: self.seeds.master,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::load_json(path)
    }
}
