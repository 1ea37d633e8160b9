use std::path::Path;

use super::container::NamedTensors;
use super::step::Utterance;
use crate::augment::Frontend;
use crate::error::{Error, Result};
use crate::nn::{ModelParams, Real};
use crate::par;

/// Encoder outputs `h` (`T'×d_model`, before the projection head) of clean,
/// unaltered features, one entry per utterance id.
pub fn encode_utterances<F: Real>(params: &ModelParams<F>, utterances: &[Utterance], frontend: &Frontend) -> Result<NamedTensors>
where
    crate::trainer::StoredTensor: From<crate::nn::Tensor<F>>,
{
    let outputs = par::try_map_slice(utterances, |u| {
        let f = frontend.features_with_ids(&u.waveform, &u.id, u.speaker.as_deref())?;
        params
            .encode_tensor(&f.to_tensor())
            .map_err(|e| Error::Data(format!("utterance {}: {e}", u.id)))
    })?;
    let mut out = NamedTensors::new();
    for (u, h) in utterances.iter().zip(outputs) {
        out.push(u.id.clone(), h)?;
    }
    Ok(out)
}

/// Writes [`encode_utterances`] to a named-tensor archive.
pub fn extract_features(params: &ModelParams<f32>, utterances: &[Utterance], frontend: &Frontend, path: impl AsRef<Path>) -> Result<()> {
    encode_utterances(params, utterances, frontend)?.save(path)
}
