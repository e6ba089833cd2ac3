//! Inter- and intra-client spread of one per-utterance feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{excess_kurtosis, mean, std_dev};

/// All standard deviations are population (divide by n).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientVariationReport {
    pub clients: usize,
    pub mean_of_means: f64,
    /// Spread of client means: inter-client variation.
    pub std_of_means: f64,
    /// Mean within-client spread over clients with at least two values.
    pub mean_of_stds: Option<f64>,
    pub std_of_stds: Option<f64>,
    /// Needs at least four clients with non-identical means.
    pub kurtosis_of_means: Option<f64>,
}

/// `clients[i]` holds client i's defined values.
pub fn client_variation(clients: &[Vec<f64>]) -> Result<ClientVariationReport> {
    if clients.is_empty() {
        return Err(Error::Precondition("client variation needs at least one client".into()));
    }
    if let Some(i) = clients.iter().position(Vec::is_empty) {
        return Err(Error::Precondition(format!("client {i} has no defined values")));
    }
    let means: Vec<f64> = clients.iter().map(|c| mean(c).expect("non-empty")).collect();
    let stds: Vec<f64> = clients
        .iter()
        .filter(|c| c.len() >= 2)
        .map(|c| std_dev(c).expect("non-empty"))
        .collect();
    Ok(ClientVariationReport {
        clients: clients.len(),
        mean_of_means: mean(&means).expect("non-empty"),
        std_of_means: std_dev(&means).expect("non-empty"),
        mean_of_stds: mean(&stds),
        std_of_stds: std_dev(&stds),
        kurtosis_of_means: excess_kurtosis(&means).ok(),
    })
}
