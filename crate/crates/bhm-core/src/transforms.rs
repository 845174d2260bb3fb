//! Variable changes for semi-infinite domains and known endpoint
//! divergences.
//!
//! Sampling a target that lives on [0, ∞) or diverges like x^{-p} at the
//! origin needs two adjustments before any histogram sees the data: a
//! monotone map y(x) onto a finite interval, and a weight on the recorded
//! values. The weight combines the divergence compensation x^p with the
//! Jacobian factor 1/x'(y), so the histogrammed target in y is f(x(y))·x^p
//! — bounded whenever p matches the divergence — and the reconstruction is
//! undone pointwise by [`Transform::restore`].

use crate::fmath;
use crate::splinefit::{eval, SplineModel};

/// The built-in maps. `Arctan` and `Exp` take [0, ∞) onto [0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    /// y = 2·arctan(x)/π
    Arctan,
    /// y = 1 − e^{−x}
    Exp,
}

/// A monotone change of variables x ↔ y. Implementing this hooks a custom
/// map into [`forward_with`] and [`restore_with`]; the built-in kinds are
/// validated, custom maps are the caller's responsibility.
pub trait MonotoneMap {
    /// Map a point of the original domain into histogram coordinates.
    fn y_of(&self, x: f64) -> f64;
    /// Inverse map.
    fn x_of(&self, y: f64) -> f64;
    /// dx/dy at y; must be positive.
    fn x_prime(&self, y: f64) -> f64;
}

impl MonotoneMap for TransformKind {
    fn y_of(&self, x: f64) -> f64 {
        match self {
            TransformKind::Identity => x,
            TransformKind::Arctan => 2.0 * fmath::atan(x) / core::f64::consts::PI,
            TransformKind::Exp => -fmath::expm1(-x),
        }
    }

    fn x_of(&self, y: f64) -> f64 {
        match self {
            TransformKind::Identity => y,
            TransformKind::Arctan => fmath::tan(core::f64::consts::PI * y / 2.0),
            TransformKind::Exp => -fmath::ln(1.0 - y),
        }
    }

    fn x_prime(&self, y: f64) -> f64 {
        match self {
            TransformKind::Identity => 1.0,
            TransformKind::Arctan => {
                let c = fmath::cos(core::f64::consts::PI * y / 2.0);
                core::f64::consts::PI / (2.0 * c * c)
            }
            TransformKind::Exp => 1.0 / (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformError {
    /// weight_power must be ≥ 0.
    BadPower,
    /// x outside the map's original domain.
    BadInput { x: f64 },
    /// y outside [0, 1) where the map is defined.
    OutOfRange { y: f64 },
    /// Evaluation at the divergent endpoint (x = 0 with p > 0).
    DivergentPoint,
}

impl core::fmt::Display for TransformError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TransformError::BadPower => write!(f, "weight power must be non-negative"),
            TransformError::BadInput { x } => write!(f, "{x} is outside the original domain"),
            TransformError::OutOfRange { y } => {
                write!(f, "{y} is outside the transformed domain [0, 1)")
            }
            TransformError::DivergentPoint => {
                write!(f, "evaluation at the divergent endpoint x = 0")
            }
        }
    }
}

impl core::error::Error for TransformError {}

/// A map plus the divergence-compensation power p: sampled values are
/// weighted by x^p / x'(y) at record time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub kind: TransformKind,
    pub weight_power: f64,
}

impl Transform {
    pub fn new(kind: TransformKind, weight_power: f64) -> Result<Transform, TransformError> {
        if !(weight_power >= 0.0) {
            return Err(TransformError::BadPower);
        }
        Ok(Transform { kind, weight_power })
    }

    pub fn identity() -> Transform {
        Transform { kind: TransformKind::Identity, weight_power: 0.0 }
    }

    /// Histogram position and record weight for a sampled point x: returns
    /// (y(x), x^p / x'(y)). At x = 0 with p > 0 the weight is 0, which is
    /// legal: the divergent point carries no recordable value.
    pub fn forward(&self, x: f64) -> Result<(f64, f64), TransformError> {
        forward_with(&self.kind, self.weight_power, x)
    }

    /// The Jacobian factor 1/x'(y) on its own, for callers assembling the
    /// weight from parts.
    pub fn inverse_scale(&self, y: f64) -> Result<f64, TransformError> {
        match self.kind {
            TransformKind::Identity => Ok(1.0),
            _ if (0.0..1.0).contains(&y) => Ok(1.0 / self.kind.x_prime(y)),
            _ => Err(TransformError::OutOfRange { y }),
        }
    }

    /// Undo the pipeline at a point of the original domain: the spline was
    /// fitted in y against the weighted target f(x)·x^p, so
    /// f̃(x) = spline(y(x)) / x^p. Error bands divide by the same factor.
    pub fn restore(&self, model: &SplineModel, x: f64) -> Result<f64, TransformError> {
        restore_with(&self.kind, self.weight_power, model, x)
    }
}

/// [`Transform::forward`] over any monotone map.
pub fn forward_with<M: MonotoneMap>(
    map: &M,
    weight_power: f64,
    x: f64,
) -> Result<(f64, f64), TransformError> {
    if !(weight_power >= 0.0) {
        return Err(TransformError::BadPower);
    }
    if x < 0.0 && weight_power > 0.0 {
        return Err(TransformError::BadInput { x });
    }
    let y = map.y_of(x);
    if !y.is_finite() {
        return Err(TransformError::BadInput { x });
    }
    let pw = if weight_power == 0.0 { 1.0 } else { fmath::powf(x, weight_power) };
    Ok((y, pw / map.x_prime(y)))
}

/// [`Transform::restore`] over any monotone map.
pub fn restore_with<M: MonotoneMap>(
    map: &M,
    weight_power: f64,
    model: &SplineModel,
    x: f64,
) -> Result<f64, TransformError> {
    if x < 0.0 && weight_power > 0.0 {
        return Err(TransformError::BadInput { x });
    }
    if x == 0.0 && weight_power > 0.0 {
        return Err(TransformError::DivergentPoint);
    }
    let y = map.y_of(x);
    let g = eval(model, y).map_err(|_| TransformError::OutOfRange { y })?;
    if weight_power == 0.0 {
        Ok(g)
    } else {
        Ok(g / fmath::powf(x, weight_power))
    }
}
