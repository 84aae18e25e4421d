//! Self-describing JSON model container with a versioned header.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{ChannelStats, LstmParams, ModelConfig, ModelError, SequenceModel};

const FORMAT: &str = "faultlens-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl From<&Tensor> for TensorRepr {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = ModelError;

    fn try_from(r: TensorRepr) -> Result<Self, ModelError> {
        Ok(Tensor::new(r.shape, r.data)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: ModelConfig,
    class_labels: Vec<String>,
    stats: ChannelStats,
    w_x: TensorRepr,
    w_h: TensorRepr,
    b: TensorRepr,
    w_out: TensorRepr,
    b_out: TensorRepr,
}

pub(super) fn to_bytes(model: &SequenceModel) -> Result<Vec<u8>, ModelError> {
    let p = model.params();
    let file = ModelFile {
        format: FORMAT.to_string(),
        version: VERSION,
        config: model.config().clone(),
        class_labels: model.class_labels().to_vec(),
        stats: model.stats().clone(),
        w_x: (&p.w_x).into(),
        w_h: (&p.w_h).into(),
        b: (&p.b).into(),
        w_out: (&p.w_out).into(),
        b_out: (&p.b_out).into(),
    };
    Ok(serde_json::to_vec_pretty(&file)?)
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<SequenceModel, ModelError> {
    let file: ModelFile = serde_json::from_slice(bytes)?;
    if file.format != FORMAT {
        return Err(ModelError::Persist(format!(
            "unexpected container format '{}', expected '{FORMAT}'",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(ModelError::Persist(format!(
            "unsupported version {}, this build reads version {VERSION}",
            file.version
        )));
    }
    let params = LstmParams {
        w_x: file.w_x.try_into()?,
        w_h: file.w_h.try_into()?,
        b: file.b.try_into()?,
        w_out: file.w_out.try_into()?,
        b_out: file.b_out.try_into()?,
    };
    SequenceModel::from_parts(file.config, file.class_labels, file.stats, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeSeriesWindow;

    fn sample_model() -> SequenceModel {
        let cfg = ModelConfig {
            num_features: 3,
            window_len: 4,
            hidden_size: 5,
            num_classes: 2,
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 1,
            weight_decay: 1e-3,
            input_jitter: 0.5,
            max_col_norm: 1.0,
            rng_seed: 42,
        };
        SequenceModel::initialized(
            cfg,
            vec!["normal".into(), "fault".into()],
            ChannelStats::identity(3),
            false,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let model = sample_model();
        let bytes = model.save_to_bytes().unwrap();
        let loaded = SequenceModel::load_from_bytes(&bytes).unwrap();
        let window =
            TimeSeriesWindow::new((0..12).map(|i| i as f64 * 0.31 - 1.0).collect(), 4, 3).unwrap();
        let a = model.predict(&window).unwrap();
        let b = loaded.predict(&window).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let model = sample_model();
        let text = String::from_utf8(model.save_to_bytes().unwrap()).unwrap();
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            SequenceModel::load_from_bytes(bumped.as_bytes()),
            Err(ModelError::Persist(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = sample_model();
        let text = String::from_utf8(model.save_to_bytes().unwrap()).unwrap();
        // Claim a different hidden size than the stored parameter shapes.
        let tampered = text.replace("\"hidden_size\": 5", "\"hidden_size\": 6");
        assert!(SequenceModel::load_from_bytes(tampered.as_bytes()).is_err());
    }
}
