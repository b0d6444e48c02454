//! Quadratic-in-width, linear-in-depth parameter-count model
//! `size ≈ c · L · H²`, with the family constant `c` calibrated from a
//! configuration whose parameter count is known.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub c: f64,
    pub layers: u64,
    pub hidden_dim: u64,
    pub estimated_params: u64,
}

pub fn estimate_size(c: f64, layers: u64, hidden_dim: u64) -> Result<SizeEstimate, ModelError> {
    if !(c > 0.0) || !c.is_finite() || layers == 0 || hidden_dim == 0 {
        return Err(ModelError::NonPositiveSizeInput);
    }
    let estimated_params = (c * layers as f64 * (hidden_dim as f64).powi(2)).round() as u64;
    Ok(SizeEstimate {
        c,
        layers,
        hidden_dim,
        estimated_params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub raw: f64,
    pub rounded: u64,
}

/// `c = known_params / (L · H²)`, both raw and rounded to the nearest integer.
pub fn calibrate_c(known_params: u64, layers: u64, hidden_dim: u64) -> Result<Calibration, ModelError> {
    if known_params == 0 || layers == 0 || hidden_dim == 0 {
        return Err(ModelError::NonPositiveSizeInput);
    }
    let raw = known_params as f64 / (layers as f64 * (hidden_dim as f64).powi(2));
    Ok(Calibration {
        raw,
        rounded: raw.round() as u64,
    })
}

/// A published model family in its standard configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyConfig {
    pub family: &'static str,
    pub layers: u64,
    pub hidden_dim: u64,
    pub heads: u64,
    pub params: u64,
}

pub const STANDARD_FAMILIES: [FamilyConfig; 4] = [
    FamilyConfig { family: "GPT-2", layers: 12, hidden_dim: 768, heads: 12, params: 124_000_000 },
    FamilyConfig { family: "LLaMA", layers: 32, hidden_dim: 4096, heads: 32, params: 7_000_000_000 },
    FamilyConfig { family: "GPT-Neo", layers: 32, hidden_dim: 2048, heads: 16, params: 2_700_000_000 },
    FamilyConfig { family: "GPT-BigCode", layers: 40, hidden_dim: 5120, heads: 40, params: 15_000_000_000 },
];

/// Reduced-depth experiment rows with their published constant and size.
/// Kept as reference data; several printed sizes do not equal `c·L·H²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedExperiment {
    pub family: &'static str,
    pub layers: u64,
    pub hidden_dim: u64,
    pub c: u64,
    pub printed_size: u64,
}

pub const PUBLISHED_EXPERIMENTS: [PublishedExperiment; 12] = [
    PublishedExperiment { family: "GPT-2", layers: 6, hidden_dim: 768, c: 18, printed_size: 57_000_000 },
    PublishedExperiment { family: "GPT-2", layers: 12, hidden_dim: 768, c: 18, printed_size: 113_000_000 },
    PublishedExperiment { family: "GPT-Neox", layers: 1, hidden_dim: 2048, c: 12, printed_size: 528_000_000 },
    PublishedExperiment { family: "GPT-Neo", layers: 2, hidden_dim: 2048, c: 20, printed_size: 151_000_000 },
    PublishedExperiment { family: "GPT-Neo", layers: 4, hidden_dim: 2048, c: 20, printed_size: 302_000_000 },
    PublishedExperiment { family: "GPT-Neo", layers: 6, hidden_dim: 2048, c: 20, printed_size: 453_000_000 },
    PublishedExperiment { family: "GPT-Neo", layers: 8, hidden_dim: 2048, c: 20, printed_size: 604_000_000 },
    PublishedExperiment { family: "GPT-J", layers: 1, hidden_dim: 4096, c: 13, printed_size: 218_000_000 },
    PublishedExperiment { family: "GPT-BigCode", layers: 12, hidden_dim: 5120, c: 14, printed_size: 3_460_000_000 },
    PublishedExperiment { family: "GPT-BigCode", layers: 6, hidden_dim: 5120, c: 14, printed_size: 1_730_000_000 },
    PublishedExperiment { family: "LLaMA", layers: 2, hidden_dim: 4096, c: 13, printed_size: 403_000_000 },
    PublishedExperiment { family: "LLaMA", layers: 1, hidden_dim: 4096, c: 13, printed_size: 201_000_000 },
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_evaluation() {
        assert_eq!(estimate_size(18.0, 12, 768).unwrap().estimated_params, 127_401_984);
        assert_eq!(estimate_size(13.0, 1, 4096).unwrap().estimated_params, 218_103_808);
    }

    #[test]
    fn linear_in_layers() {
        let one = estimate_size(14.0, 6, 5120).unwrap().estimated_params;
        let two = estimate_size(14.0, 12, 5120).unwrap().estimated_params;
        assert_eq!(two, 2 * one);
    }

    #[test]
    fn calibration_values() {
        let gpt2 = calibrate_c(124_000_000, 12, 768).unwrap();
        assert!((gpt2.raw - 17.519).abs() < 1e-3);
        assert_eq!(gpt2.rounded, 18);
        let llama = calibrate_c(7_000_000_000, 32, 4096).unwrap();
        assert!((llama.raw - 13.038).abs() < 1e-3);
        assert_eq!(llama.rounded, 13);
        let bigcode = calibrate_c(15_000_000_000, 40, 5120).unwrap();
        assert!((bigcode.raw - 14.305).abs() < 1e-3);
        assert_eq!(bigcode.rounded, 14);
    }

    #[test]
    fn non_positive_inputs_rejected() {
        assert!(estimate_size(0.0, 1, 1).is_err());
        assert!(estimate_size(1.0, 0, 1).is_err());
        assert!(calibrate_c(1, 1, 0).is_err());
        assert!(calibrate_c(0, 1, 1).is_err());
    }

    #[test]
    fn gpt_j_row_matches_formula() {
        let row = PUBLISHED_EXPERIMENTS.iter().find(|r| r.family == "GPT-J").unwrap();
        let est = estimate_size(row.c as f64, row.layers, row.hidden_dim).unwrap();
        assert_eq!((est.estimated_params as f64 / 1e6).round() as u64, row.printed_size / 1_000_000);
    }
}
