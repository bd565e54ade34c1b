//! Physical coefficients and the reaction/distribution profiles `P`, `h`.

use serde::{Deserialize, Serialize};

/// Bounded smooth scalar profile used for the proliferation function `P`
/// and the radiotherapy distribution `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `low + (high - low) (1 + tanh(steepness * s)) / 2`: equals `low` in
    /// the healthy phase and `high` in the tumour phase.
    Sigmoid {
        low: f64,
        high: f64,
        steepness: f64,
    },
}

impl Profile {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Sigmoid {
                low,
                high,
                steepness,
            } => low + 0.5 * (high - low) * (1.0 + (steepness * s).tanh()),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Sigmoid {
                low,
                high,
                steepness,
            } => {
                let t = (steepness * s).tanh();
                0.5 * (high - low) * steepness * (1.0 - t * t)
            }
        }
    }

    /// `inf_s value(s)`.
    pub fn floor(&self) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Sigmoid { low, high, .. } => low.min(high),
        }
    }

    /// `sup_s |value(s)|`.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            Profile::Constant { value } => value.abs(),
            Profile::Sigmoid { low, high, .. } => low.abs().max(high.abs()),
        }
    }

    /// `sup_s |value'(s)|`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Sigmoid {
                low,
                high,
                steepness,
            } => 0.5 * (high - low).abs() * steepness.abs(),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Profile::Constant { value } => value.is_finite(),
            Profile::Sigmoid {
                low,
                high,
                steepness,
            } => low.is_finite() && high.is_finite() && steepness.is_finite(),
        }
    }
}

/// Coefficients of the constant-mobility state system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Potential weight `A`.
    pub a: f64,
    /// Non-local interaction weight `B`.
    pub b: f64,
    /// Viscosity `tau`.
    pub tau: f64,
    /// Chemotaxis `chi`.
    pub chi: f64,
    /// Mobility of the order parameter.
    pub m: f64,
    /// Nutrient diffusivity.
    pub n: f64,
    /// Proliferation `P`.
    pub proliferation: Profile,
    /// Radiotherapy distribution `h`.
    pub distribution: Profile,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 2.0,
            tau: 0.5,
            chi: 0.3,
            m: 1.0,
            n: 1.0,
            proliferation: Profile::Sigmoid {
                low: 0.2,
                high: 1.0,
                steepness: 2.0,
            },
            distribution: Profile::Sigmoid {
                low: 0.0,
                high: 1.0,
                steepness: 2.0,
            },
        }
    }
}

impl ModelParams {
    /// Returns every violated structural assumption, labelled.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        need(
            self.a > 0.0 && self.a.is_finite(),
            format!("A1: A > 0 (got A = {})", self.a),
        );
        need(
            self.b > 0.0 && self.b.is_finite(),
            format!("A1: B > 0 (got B = {})", self.b),
        );
        need(
            self.tau > 0.0 && self.tau.is_finite(),
            format!("A1: tau > 0 (got tau = {})", self.tau),
        );
        need(
            self.chi >= 0.0 && self.chi.is_finite(),
            format!("A1: chi >= 0 (got chi = {})", self.chi),
        );
        need(
            self.m > 0.0 && self.m.is_finite(),
            format!("A6: m > 0 (got m = {})", self.m),
        );
        need(
            self.n > 0.0 && self.n.is_finite(),
            format!("A6: n > 0 (got n = {})", self.n),
        );
        need(
            self.proliferation.is_finite() && self.distribution.is_finite(),
            "B3: P and h must be bounded with bounded derivatives".into(),
        );
        need(
            self.proliferation.floor() > 0.0,
            format!(
                "A5/B3: P(s) >= P0 > 0 (got P0 = {})",
                self.proliferation.floor()
            ),
        );
        if let Profile::Sigmoid { steepness, .. } = self.proliferation {
            need(
                steepness >= 0.0,
                format!("B3: P steepness must be nonnegative (got {steepness})"),
            );
        }
        if let Profile::Sigmoid { steepness, .. } = self.distribution {
            need(
                steepness >= 0.0,
                format!("B3: h steepness must be nonnegative (got {steepness})"),
            );
        }
        out
    }
}
