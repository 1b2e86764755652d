use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FrequencyBands, TrunkKind, MLP_HIDDEN};
use crate::rng::{stream_rng, Stream};

/// Flat trainable parameter vector in the layout of [`TrunkKind::layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Little-endian `u64` count followed by the values as `f64` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.0.len());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> crate::Result<Self> {
        let bad = |msg: String| crate::Error::Parse {
            what: "params".into(),
            msg,
        };
        if bytes.len() < 8 {
            return Err(bad("missing length header".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() != n.saturating_mul(8) {
            return Err(bad(format!("header says {n} values, body has {} bytes", body.len())));
        }
        Ok(ParamVector(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Deterministic initialization from the `Init` stream of `seed`.
///
/// MLP layers draw `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
/// Spectral heads start at zero; adaptive frequencies start at the band values.
pub fn init_params(kind: TrunkKind, seed: u64) -> ParamVector {
    let lay = kind.layout();
    let mut p = vec![0.0; lay.len];
    match kind {
        TrunkKind::BaselineMlp => {
            let mut rng = stream_rng(seed, Stream::Init);
            let mut fan_in = 1;
            let mut fill = |slice: &mut [f64], fan_in: usize| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for x in slice {
                    *x = rng.random_range(-bound..bound);
                }
            };
            for layer in &lay.hidden {
                fill(&mut p[layer.weights..layer.bias], fan_in);
                fill(&mut p[layer.bias..layer.bias + MLP_HIDDEN], fan_in);
                fan_in = MLP_HIDDEN;
            }
            fill(&mut p[lay.head_w..lay.head_b], MLP_HIDDEN);
            fill(&mut p[lay.head_b..lay.head_b + 2], MLP_HIDDEN);
        }
        TrunkKind::FixedFourier => {}
        TrunkKind::AdaptiveFourier => {
            let off = lay.omega.expect("adaptive layout has frequencies");
            let omegas = FrequencyBands::standard().omegas();
            p[off..off + omegas.len()].copy_from_slice(&omegas);
        }
    }
    ParamVector(p)
}
