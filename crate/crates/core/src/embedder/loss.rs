use serde::{Deserialize, Serialize};

use super::network::EncoderParams;
use super::pairs::{squared_distance, Label};
use super::EmbedError;

/// Which hinge the dissimilar-pair term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossForm {
    /// `½·max(0, m − D²)`: the hinge acts on the squared distance.
    #[default]
    Squared,
    /// `½·max(0, m − D)²`: the usual formulation, hinge on the distance.
    Classical,
}

impl std::str::FromStr for LossForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared" => Ok(Self::Squared),
            "classical" => Ok(Self::Classical),
            other => Err(format!("unknown loss form `{other}` (squared|classical)")),
        }
    }
}

impl std::fmt::Display for LossForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Squared => "squared",
            Self::Classical => "classical",
        })
    }
}

/// `Y·½·D² + (1−Y)·½·max(0, m − D²)` where `D²` is the squared Euclidean
/// distance between the two embeddings.
pub fn contrastive_loss(
    fa: &[f64],
    fb: &[f64],
    label: Label,
    margin: f64,
) -> Result<f64, EmbedError> {
    contrastive_loss_with(LossForm::Squared, fa, fb, label, margin)
}

pub fn contrastive_loss_with(
    form: LossForm,
    fa: &[f64],
    fb: &[f64],
    label: Label,
    margin: f64,
) -> Result<f64, EmbedError> {
    check_pair(fa, fb)?;
    Ok(loss_and_slope(form, squared_distance(fa, fb), label, margin).0)
}

fn check_pair(fa: &[f64], fb: &[f64]) -> Result<(), EmbedError> {
    if fa.len() != fb.len() {
        return Err(EmbedError::Dimension {
            expected: fa.len(),
            got: fb.len(),
        });
    }
    Ok(())
}

/// Loss and `c` such that `dL/dfa = c·(fa − fb)` (and `dL/dfb = −c·(fa − fb)`).
/// At a hinge kink the zero subgradient is used.
fn loss_and_slope(form: LossForm, d2: f64, label: Label, margin: f64) -> (f64, f64) {
    match (label, form) {
        (Label::Similar, _) => (0.5 * d2, 1.0),
        (Label::Dissimilar, LossForm::Squared) => {
            if d2 < margin {
                (0.5 * (margin - d2), -1.0)
            } else {
                (0.0, 0.0)
            }
        }
        (Label::Dissimilar, LossForm::Classical) => {
            let d = d2.sqrt();
            if d < margin && d > 0.0 {
                let gap = margin - d;
                (0.5 * gap * gap, -gap / d)
            } else if d == 0.0 {
                (0.5 * margin * margin, 0.0)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Adds the gradient of one pair's loss to `grad` and returns the loss.
pub(crate) fn accumulate_pair_gradient(
    params: &EncoderParams,
    a: &[f64],
    b: &[f64],
    label: Label,
    margin: f64,
    form: LossForm,
    grad: &mut EncoderParams,
) -> Result<f64, EmbedError> {
    let ta = params.forward_trace(a)?;
    let tb = params.forward_trace(b)?;
    let d2 = squared_distance(&ta.output, &tb.output);
    let (loss, slope) = loss_and_slope(form, d2, label, margin);
    if slope != 0.0 {
        let d_a: Vec<f64> = ta
            .output
            .iter()
            .zip(&tb.output)
            .map(|(x, y)| slope * (x - y))
            .collect();
        let d_b: Vec<f64> = d_a.iter().map(|v| -v).collect();
        params.backprop(&ta, &d_a, grad);
        params.backprop(&tb, &d_b, grad);
    }
    Ok(loss)
}

/// Loss of one pair pushed through both twins, and its gradient with respect
/// to the shared parameters.
pub fn loss_gradient(
    params: &EncoderParams,
    a: &[f64],
    b: &[f64],
    label: Label,
    margin: f64,
    form: LossForm,
) -> Result<(f64, EncoderParams), EmbedError> {
    let mut grad = params.zeros_like();
    let loss = accumulate_pair_gradient(params, a, b, label, margin, form, &mut grad)?;
    Ok((loss, grad))
}
