use serde::{Deserialize, Serialize};

/// Per-epoch summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based epoch index.
    pub epoch: u64,
    /// Step size used for the `t`, `λ`, `u`, `v` updates in this epoch.
    pub alpha: f64,
    pub lambda: f64,
    pub t: f64,
    /// Mean per-sample loss at the perturbed inputs, taken from the batch passes.
    pub mean_loss: f64,
    /// Fraction of samples with `‖u^i‖ ≤ ε` at epoch end.
    pub frac_u_within_budget: f64,
    /// Mean over samples of `‖u^i_k − u^i_{k−1}‖₂` across the epoch.
    pub mean_u_delta_l2: f64,
}

/// What went wrong when a run was aborted for numerical divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub epoch: u64,
    /// Batch index within the epoch, when the failure happened mid-epoch.
    pub batch: Option<usize>,
    /// Offending component, e.g. `"lambda"`, `"w"`, `"u[17]"`.
    pub component: String,
    #[serde(with = "nonfinite")]
    pub value: f64,
    #[serde(with = "nonfinite")]
    pub lambda: f64,
    #[serde(with = "nonfinite")]
    pub t: f64,
}

/// JSON has no NaN or infinity; those are written as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {} at epoch {}", self.component, self.value, self.epoch)?;
        if let Some(b) = self.batch {
            write!(f, ", batch {b}")?;
        }
        write!(f, " (λ = {}, t = {})", self.lambda, self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_fields_survive_json() {
        let r = DivergenceReport {
            epoch: 3,
            batch: None,
            component: "w".into(),
            value: f64::INFINITY,
            lambda: f64::NAN,
            t: -1.5,
        };
        let back: DivergenceReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.value, f64::INFINITY);
        assert!(back.lambda.is_nan());
        assert_eq!(back.t, -1.5);
    }
}
