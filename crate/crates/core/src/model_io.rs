//! Versioned JSON persistence for fitted models.
//!
//! The on-disk format is a flat, human-readable document with an explicit
//! `format_version`. Floating-point numbers are serialized in shortest
//! round-trip form, so loading a saved model reproduces its predictions
//! bit-identically.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FittedBScaling, RescaleParams};
use crate::spline::KnotSet;

pub const FORMAT_VERSION: u32 = 1;

/// Fit provenance carried alongside the model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Knot-interval count the model was fitted with.
    pub k0: Option<usize>,
    /// Grid searched when knot selection was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0_grid: Option<Vec<usize>>,
    /// Creation timestamp (suppressed for reproducible output).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    column_names: Vec<String>,
    order: usize,
    rescale: Vec<(f64, f64)>,
    knots: Vec<Vec<f64>>,
    basis_means: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    coefficients: Vec<f64>,
    contrast_coefficients: Vec<f64>,
    whitened_coefficients: Vec<f64>,
    eigenvalues: Vec<f64>,
    min_eigenvalue: f64,
    b_variance: f64,
    sign: f64,
    n: usize,
    ridge: f64,
    dropped_directions: usize,
    warnings: Vec<String>,
    metadata: ModelMetadata,
}

/// Serialize a fitted model to the versioned JSON document.
pub fn model_to_json(model: &FittedBScaling, metadata: &ModelMetadata) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        column_names: model.column_names.clone(),
        order: model.order,
        rescale: model.rescale.bounds().to_vec(),
        knots: model.knots.iter().map(|k| k.knots().to_vec()).collect(),
        basis_means: model
            .basis_means
            .iter()
            .map(|m| m.iter().cloned().collect())
            .collect(),
        offsets: model.offsets.clone(),
        coefficients: model.coefs.iter().cloned().collect(),
        contrast_coefficients: model.contrast_coefs.iter().cloned().collect(),
        whitened_coefficients: model.whitened_coefs.iter().cloned().collect(),
        eigenvalues: model.eigenvalues.iter().cloned().collect(),
        min_eigenvalue: model.min_eigenvalue,
        b_variance: model.b_variance,
        sign: model.sign,
        n: model.n,
        ridge: model.ridge,
        dropped_directions: model.dropped_directions,
        warnings: model.warnings.clone(),
        metadata: metadata.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

/// Parse and validate a model document.
pub fn model_from_json(text: &str) -> Result<(FittedBScaling, ModelMetadata)> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("parse error: {e}")))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    let k = file.column_names.len();
    if file.knots.len() != k || file.rescale.len() != k || file.basis_means.len() != k {
        return Err(Error::ModelFile(
            "per-measurement sections disagree on the number of columns".into(),
        ));
    }
    let rescale = RescaleParams::new(file.rescale).map_err(|e| Error::ModelFile(e.to_string()))?;
    let knots: Vec<KnotSet> = file
        .knots
        .into_iter()
        .map(|ks| KnotSet::new(file.order, ks).map_err(|e| Error::ModelFile(e.to_string())))
        .collect::<Result<_>>()?;
    if file.offsets.len() != k + 1 {
        return Err(Error::ModelFile("offsets must have K+1 entries".into()));
    }
    for (i, ks) in knots.iter().enumerate() {
        if file.offsets[i + 1] - file.offsets[i] != ks.basis_count() {
            return Err(Error::ModelFile(format!(
                "offsets inconsistent with the basis of column {i}"
            )));
        }
        if file.basis_means[i].len() != ks.basis_count() {
            return Err(Error::ModelFile(format!(
                "basis means of column {i} have the wrong length"
            )));
        }
    }
    let total = *file.offsets.last().unwrap();
    if file.coefficients.len() != total {
        return Err(Error::ModelFile(format!(
            "expected {total} coefficients, found {}",
            file.coefficients.len()
        )));
    }
    if file.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::ModelFile("non-finite coefficient".into()));
    }

    let model = FittedBScaling {
        column_names: file.column_names,
        rescale,
        order: file.order,
        knots,
        offsets: file.offsets,
        coefs: DVector::from_vec(file.coefficients),
        basis_means: file
            .basis_means
            .into_iter()
            .map(DVector::from_vec)
            .collect(),
        contrast_coefs: DVector::from_vec(file.contrast_coefficients),
        whitened_coefs: DVector::from_vec(file.whitened_coefficients),
        eigenvalues: DVector::from_vec(file.eigenvalues),
        min_eigenvalue: file.min_eigenvalue,
        b_variance: file.b_variance,
        sign: file.sign,
        n: file.n,
        ridge: file.ridge,
        dropped_directions: file.dropped_directions,
        warnings: file.warnings,
    };
    Ok((model, file.metadata))
}

/// Write a model file to disk.
pub fn save_model(
    path: &std::path::Path,
    model: &FittedBScaling,
    metadata: &ModelMetadata,
) -> Result<()> {
    std::fs::write(path, model_to_json(model, metadata))
        .map_err(|e| Error::ModelFile(format!("writing {}: {e}", path.display())))
}

/// Read a model file from disk.
pub fn load_model(path: &std::path::Path) -> Result<(FittedBScaling, ModelMetadata)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ModelFile(format!("reading {}: {e}", path.display())))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_bscaling, predict_bmean, FusionInput};
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> (FusionInput, FittedBScaling) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..150).map(|_| rng.gen::<f64>()).collect();
        let data = DMatrix::from_fn(150, 3, |i, j| {
            (1.0 + j as f64) * y[i] + 0.05 * (rng.gen::<f64>() - 0.5) + j as f64
        });
        let input = FusionInput::unnamed(data).unwrap();
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();
        (input, model)
    }

    #[test]
    fn round_trip_reproduces_predictions_exactly() {
        let (input, model) = sample_model();
        let json = model_to_json(&model, &ModelMetadata::default());
        let (loaded, _) = model_from_json(&json).unwrap();

        let a = predict_bmean(&model, input.data());
        let b = predict_bmean(&loaded, input.data());
        assert_eq!(a, b, "round-trip predictions must be bit-identical");
        assert_eq!(model.coefs, loaded.coefs);
        assert_eq!(model.min_eigenvalue, loaded.min_eigenvalue);
    }

    #[test]
    fn version_and_consistency_checks() {
        let (_, model) = sample_model();
        let json = model_to_json(&model, &ModelMetadata::default());

        let bad_version = json.replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(
            model_from_json(&bad_version),
            Err(Error::ModelFile(_))
        ));

        assert!(matches!(model_from_json("{}"), Err(Error::ModelFile(_))));
        assert!(matches!(
            model_from_json("not json at all"),
            Err(Error::ModelFile(_))
        ));
    }

    #[test]
    fn metadata_round_trips() {
        let (_, model) = sample_model();
        let meta = ModelMetadata {
            k0: Some(4),
            k0_grid: Some(vec![3, 4, 5]),
            created: None,
        };
        let json = model_to_json(&model, &meta);
        let (_, loaded) = model_from_json(&json).unwrap();
        assert_eq!(loaded.k0, Some(4));
        assert_eq!(loaded.k0_grid, Some(vec![3, 4, 5]));
        assert!(loaded.created.is_none());
        assert!(!json.contains("created"));
    }
}
