//! Command implementations and the data plumbing they share.

pub mod gen;
pub mod report;
pub mod swap;
pub mod train;

use cw_core::synth::{ConceptBank, ConceptSet, Dataset};

use crate::error::{CliError, Result};
use crate::manifest::{read_labels, Manifest};
use crate::tensorfile::read_tensor;

pub struct LoadedData {
    pub train: Dataset,
    pub eval: Option<Dataset>,
    pub bank: ConceptBank,
}

fn sample_count(shape: &[usize]) -> Result<usize> {
    match shape {
        [_, n] => Ok(*n),
        [n, _, _, _] => Ok(*n),
        s => Err(CliError::Data(format!(
            "dataset tensors must be rank 2 (features x samples) or rank 4, got {:?}",
            s
        ))),
    }
}

pub fn load_data(manifest: &Manifest) -> Result<LoadedData> {
    let main_inputs = read_tensor(&manifest.main)?;
    let n = sample_count(main_inputs.shape())?;
    let labels = read_labels(&manifest.labels, n)?;
    let train = Dataset {
        inputs: main_inputs,
        labels,
    };

    let eval = match (&manifest.eval, &manifest.eval_labels) {
        (Some(inputs_path), Some(labels_path)) => {
            let inputs = read_tensor(inputs_path)?;
            let n = sample_count(inputs.shape())?;
            let labels = read_labels(labels_path, n)?;
            Some(Dataset { inputs, labels })
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(CliError::Data(
                "manifest must provide both eval and eval_labels or neither".into(),
            ))
        }
        (None, None) => None,
    };

    let mut concepts = Vec::new();
    for entry in &manifest.concepts {
        let samples = read_tensor(&entry.path)?;
        sample_count(samples.shape())?;
        concepts.push(ConceptSet {
            name: entry.name.clone(),
            axis: entry.axis,
            samples,
        });
    }
    let bank = ConceptBank { concepts };
    bank.validate().map_err(CliError::from)?;
    Ok(LoadedData { train, eval, bank })
}

/// Number of classes implied by the labels.
pub fn class_count(labels: &[usize]) -> Result<usize> {
    labels
        .iter()
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| CliError::Data("empty label set".into()))
}
