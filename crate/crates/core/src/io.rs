//! JSON loaders for models, measure lists and lattice kernels.

use std::path::Path;

use crate::lattice::{KernelSpec, LatticeKernel};
use crate::markov::{MarkovModel, ModelSpec};
use crate::measure::{Measure, NamedMeasure};
use crate::Result;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model(path: &Path) -> Result<MarkovModel> {
    MarkovModel::from_spec(&read_json::<ModelSpec>(path)?)
}

pub fn load_kernel(path: &Path) -> Result<LatticeKernel> {
    LatticeKernel::new(read_json::<KernelSpec>(path)?)
}

/// `[{"name": ..., "atoms": {state: weight}}]` resolved against `model`.
pub fn load_measures(path: &Path, model: &MarkovModel) -> Result<Vec<(String, Measure)>> {
    let named: Vec<NamedMeasure> = read_json(path)?;
    resolve_measures(&named, model)
}

pub fn resolve_measures(named: &[NamedMeasure], model: &MarkovModel) -> Result<Vec<(String, Measure)>> {
    named.iter().map(|nm| Ok((nm.name.clone(), Measure::from_named(model, &nm.atoms)?))).collect()
}
