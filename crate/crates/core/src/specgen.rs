//! Per-sample L∞ input boxes.
//!
//! Feature inputs are perturbed by a percentage of each feature's range, and
//! only on the features selected by a mask. Pixel inputs are perturbed by
//! `k/255` on every pixel and clipped to `[0, 1]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpecError {
    #[error("input has {got} values, schema has {expected} features")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mask index {index} out of range for {len} features")]
    MaskOutOfRange { index: usize, len: usize },
    #[error("epsilon must be a nonnegative finite number, got {0}")]
    NegativeEpsilon(f64),
    #[error("pixel {index} has value {value} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("feature `{name}` has min {min} > max {max}")]
    InvalidRange { name: String, min: f64, max: f64 },
    #[error("schema has no features")]
    EmptySchema,
    #[error("unknown mask `{0}` (expected all, cont-disc, discrete, continuous)")]
    UnknownMask(String),
    #[error("malformed schema: {0}")]
    Malformed(String),
}

/// A dataset row: its index in the dataset, input vector and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
    HashCategorical,
    DiscreteLarge,
    Binary,
    HashCatDiscrete,
    Memory,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
}

/// Feature names, kinds and (post-scaling) value ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, SpecError> {
        let schema = Self { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let schema: Self = serde_json::from_str(text).map_err(|e| SpecError::Malformed(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        for f in &self.features {
            if !(f.min <= f.max) {
                return Err(SpecError::InvalidRange { name: f.name.clone(), min: f.min, max: f.max });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Which features a feature-mode perturbation touches.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMask {
    All,
    ContinuousAndDiscrete,
    Discrete,
    Continuous,
    Custom(BTreeSet<usize>),
}

impl FeatureMask {
    /// The four presets in the order experiments sweep them.
    pub const PRESETS: [FeatureMask; 4] =
        [FeatureMask::All, FeatureMask::ContinuousAndDiscrete, FeatureMask::Discrete, FeatureMask::Continuous];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMask::All => "all",
            FeatureMask::ContinuousAndDiscrete => "cont-disc",
            FeatureMask::Discrete => "discrete",
            FeatureMask::Continuous => "continuous",
            FeatureMask::Custom(_) => "custom",
        }
    }

    fn selects(&self, kind: FeatureKind) -> bool {
        match self {
            FeatureMask::All => true,
            FeatureMask::ContinuousAndDiscrete => {
                matches!(kind, FeatureKind::Continuous | FeatureKind::DiscreteLarge)
            }
            FeatureMask::Discrete => kind == FeatureKind::DiscreteLarge,
            FeatureMask::Continuous => kind == FeatureKind::Continuous,
            FeatureMask::Custom(_) => false,
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMask {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        match s {
            "all" => Ok(FeatureMask::All),
            "cont-disc" | "continuous_and_discrete" => Ok(FeatureMask::ContinuousAndDiscrete),
            "discrete" => Ok(FeatureMask::Discrete),
            "continuous" => Ok(FeatureMask::Continuous),
            other => Err(SpecError::UnknownMask(other.to_string())),
        }
    }
}

/// Indices selected by `mask` over `schema`, ascending.
pub fn resolve_mask(mask: &FeatureMask, schema: &FeatureSchema) -> Result<Vec<usize>, SpecError> {
    if schema.is_empty() {
        return Err(SpecError::EmptySchema);
    }
    match mask {
        FeatureMask::Custom(set) => {
            if let Some(&index) = set.iter().find(|&&i| i >= schema.len()) {
                return Err(SpecError::MaskOutOfRange { index, len: schema.len() });
            }
            Ok(set.iter().copied().collect())
        }
        preset => {
            Ok(schema.features.iter().enumerate().filter(|(_, f)| preset.selects(f.kind)).map(|(i, _)| i).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Perturbation {
    /// Percentage of each masked feature's range.
    FeaturePercent(FeatureMask),
    /// `k/255` on every pixel.
    Pixel,
}

/// An L∞ input box around a base sample, with the class it must keep.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Percent for feature specs, `k` for pixel specs.
    pub epsilon: f64,
    pub perturbation: Perturbation,
    pub target: usize,
}

impl InputSpec {
    /// A zero-width box around `x`.
    pub fn point(x: Vec<f64>, target: usize) -> Self {
        Self {
            lower: x.clone(),
            upper: x.clone(),
            x,
            epsilon: 0.0,
            perturbation: Perturbation::FeaturePercent(FeatureMask::All),
            target,
        }
    }

    /// Box `[x − r, x + r]` per dimension, no masking.
    pub fn from_radius(x: Vec<f64>, radius: f64, target: usize) -> Self {
        Self {
            lower: x.iter().map(|v| v - radius).collect(),
            upper: x.iter().map(|v| v + radius).collect(),
            x,
            epsilon: radius,
            perturbation: Perturbation::FeaturePercent(FeatureMask::All),
            target,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Number of dimensions with nonzero width.
    pub fn perturbed_dims(&self) -> usize {
        self.lower.iter().zip(&self.upper).filter(|(l, u)| l < u).count()
    }

    pub fn mask_name(&self) -> &'static str {
        match &self.perturbation {
            Perturbation::FeaturePercent(m) => m.name(),
            Perturbation::Pixel => "all",
        }
    }
}

/// Feature-mode box: `δᵢ = eps_percent/100 · (maxᵢ − minᵢ)` on masked features.
/// Bounds are not clipped to the schema range.
pub fn build_feature_spec(
    x: &[f64],
    target: usize,
    eps_percent: f64,
    schema: &FeatureSchema,
    mask: &FeatureMask,
) -> Result<InputSpec, SpecError> {
    if x.len() != schema.len() {
        return Err(SpecError::LengthMismatch { expected: schema.len(), got: x.len() });
    }
    if !(eps_percent >= 0.0) || !eps_percent.is_finite() {
        return Err(SpecError::NegativeEpsilon(eps_percent));
    }
    let selected = resolve_mask(mask, schema)?;
    let mut lower = x.to_vec();
    let mut upper = x.to_vec();
    for i in selected {
        let f = &schema.features[i];
        let delta = eps_percent / 100.0 * (f.max - f.min);
        lower[i] = x[i] - delta;
        upper[i] = x[i] + delta;
    }
    Ok(InputSpec {
        x: x.to_vec(),
        lower,
        upper,
        epsilon: eps_percent,
        perturbation: Perturbation::FeaturePercent(mask.clone()),
        target,
    })
}

/// Pixel-mode box: `x ± k/255`, clipped to `[0, 1]`.
pub fn build_pixel_spec(x: &[f64], target: usize, k: u32) -> Result<InputSpec, SpecError> {
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(SpecError::PixelOutOfRange { index, value });
    }
    let delta = f64::from(k) / 255.0;
    Ok(InputSpec {
        x: x.to_vec(),
        lower: x.iter().map(|v| (v - delta).max(0.0)).collect(),
        upper: x.iter().map(|v| (v + delta).min(1.0)).collect(),
        epsilon: f64::from(k),
        perturbation: Perturbation::Pixel,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(name: &str, kind: FeatureKind, min: f64, max: f64) -> Feature {
        Feature { name: name.into(), kind, min, max }
    }

    fn mixed_schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            feature("entropy", FeatureKind::Continuous, 0.0, 10.0),
            feature("imports", FeatureKind::DiscreteLarge, 0.0, 200.0),
            feature("machine", FeatureKind::Categorical, 0.0, 5.0),
            feature("debug", FeatureKind::Binary, 0.0, 1.0),
            feature("pad", FeatureKind::Null, -1.0, 1.0),
            feature("bytes", FeatureKind::DiscreteLarge, -3.0, 3.0),
        ])
        .unwrap()
    }

    #[test]
    fn range_percentage_half_width() {
        let schema = FeatureSchema::new(vec![feature("f", FeatureKind::Continuous, 3.0, 567.0)]).unwrap();
        let spec = build_feature_spec(&[10.0], 0, 0.1, &schema, &FeatureMask::All).unwrap();
        let half = (spec.upper[0] - spec.lower[0]) / 2.0;
        assert!((half - 0.564).abs() < 1e-12);
        assert_eq!(format!("{half:.2}"), "0.56");
    }

    #[test]
    fn zero_epsilon_is_a_point() {
        let schema = mixed_schema();
        let x = [1.0, 2.0, 3.0, 0.0, 0.5, -1.0];
        let spec = build_feature_spec(&x, 1, 0.0, &schema, &FeatureMask::All).unwrap();
        assert_eq!(spec.lower, x);
        assert_eq!(spec.upper, x);
    }

    #[test]
    fn discrete_mask_only_touches_discrete_large() {
        let schema = mixed_schema();
        let x = [0.0; 6];
        let spec = build_feature_spec(&x, 0, 1.0, &schema, &FeatureMask::Discrete).unwrap();
        for (i, f) in schema.features.iter().enumerate() {
            let width = spec.upper[i] - spec.lower[i];
            if f.kind == FeatureKind::DiscreteLarge {
                assert!(width > 0.0);
            } else {
                assert_eq!(width, 0.0);
            }
        }
    }

    #[test]
    fn presets_resolve_by_kind() {
        let schema = mixed_schema();
        assert_eq!(resolve_mask(&FeatureMask::All, &schema).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(resolve_mask(&FeatureMask::ContinuousAndDiscrete, &schema).unwrap(), vec![0, 1, 5]);
        assert_eq!(resolve_mask(&FeatureMask::Discrete, &schema).unwrap(), vec![1, 5]);
        assert_eq!(resolve_mask(&FeatureMask::Continuous, &schema).unwrap(), vec![0]);
    }

    #[test]
    fn no_discrete_features_gives_empty_mask() {
        let schema = FeatureSchema::new(vec![feature("e", FeatureKind::Continuous, 0.0, 1.0)]).unwrap();
        assert!(resolve_mask(&FeatureMask::Discrete, &schema).unwrap().is_empty());
        let spec = build_feature_spec(&[0.3], 0, 50.0, &schema, &FeatureMask::Discrete).unwrap();
        assert_eq!(spec.perturbed_dims(), 0);
    }

    #[test]
    fn custom_mask_out_of_range() {
        let schema = mixed_schema();
        let mask = FeatureMask::Custom([1, 9].into_iter().collect());
        assert_eq!(resolve_mask(&mask, &schema), Err(SpecError::MaskOutOfRange { index: 9, len: 6 }));
        let mask = FeatureMask::Custom([4, 2].into_iter().collect());
        assert_eq!(resolve_mask(&mask, &schema).unwrap(), vec![2, 4]);
    }

    #[test]
    fn negative_epsilon_and_length_errors() {
        let schema = mixed_schema();
        assert_eq!(
            build_feature_spec(&[0.0; 6], 0, -1.0, &schema, &FeatureMask::All),
            Err(SpecError::NegativeEpsilon(-1.0))
        );
        assert!(matches!(
            build_feature_spec(&[0.0; 5], 0, 1.0, &schema, &FeatureMask::All),
            Err(SpecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pixel_spec_clips_to_unit_interval() {
        let spec = build_pixel_spec(&[0.0, 1.0, 0.5], 3, 2).unwrap();
        assert_eq!(spec.lower[0], 0.0);
        assert_eq!(spec.upper[0], 2.0 / 255.0);
        assert_eq!(spec.upper[1], 1.0);
        assert!((spec.lower[2] - (0.5 - 2.0 / 255.0)).abs() < 1e-15);
        let point = build_pixel_spec(&[0.2, 0.4], 0, 0).unwrap();
        assert_eq!(point.perturbed_dims(), 0);
        assert!(matches!(build_pixel_spec(&[1.5], 0, 1), Err(SpecError::PixelOutOfRange { index: 0, .. })));
    }

    #[test]
    fn image_spec_has_4096_perturbed_dims() {
        let x: Vec<f64> = (0..4096).map(|i| (i % 255) as f64 / 255.0 * 0.5 + 0.25).collect();
        let spec = build_pixel_spec(&x, 0, 2).unwrap();
        assert_eq!(spec.perturbed_dims(), 4096);
    }

    #[test]
    fn schema_json_round_trip() {
        let schema = mixed_schema();
        assert_eq!(FeatureSchema::from_json(&schema.to_json()).unwrap(), schema);
        assert!(matches!(
            FeatureSchema::from_json(r#"{"features":[{"name":"a","kind":"continuous","min":2,"max":1}]}"#),
            Err(SpecError::InvalidRange { .. })
        ));
        assert!(FeatureSchema::from_json(r#"{"features":[{"name":"a","kind":"weird","min":0,"max":1}]}"#).is_err());
    }

    #[test]
    fn mask_names_parse_back() {
        for m in FeatureMask::PRESETS {
            assert_eq!(m.name().parse::<FeatureMask>().unwrap(), m);
        }
        assert!("bogus".parse::<FeatureMask>().is_err());
    }
}
