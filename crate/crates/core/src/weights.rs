//! Energy weights of the localized layered model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, ClassTaxonomy};

/// Weights of the layered energy. All values are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWeights {
    pub lambda_motion: f64,
    pub lambda_time: f64,
    pub lambda_layer: f64,
    pub lambda_space: f64,
    /// Constant penalty for occluded correspondences in the data term.
    pub lambda_d: f64,
    /// Affine-deviation weight used for the background layer and unlisted classes.
    pub lambda_aff: f64,
    /// Per-class affine-deviation weight for the foreground layer.
    pub class_lambda_aff: BTreeMap<ClassId, f64>,
}

/// Deformable Things; rigid ones get ten times this affine weight.
const DEFORMABLE_LAMBDA_AFF: f64 = 1.0;
const RIGID_FACTOR: f64 = 10.0;

impl Default for EnergyWeights {
    fn default() -> Self {
        let mut class_lambda_aff = BTreeMap::new();
        for id in [ClassId::CAR, ClassId::BUS, ClassId::TRAIN, ClassId::AEROPLANE, ClassId::BOAT] {
            class_lambda_aff.insert(id, DEFORMABLE_LAMBDA_AFF * RIGID_FACTOR);
        }
        for id in [
            ClassId::PERSON,
            ClassId::CAT,
            ClassId::DOG,
            ClassId::HORSE,
            ClassId::COW,
            ClassId::SHEEP,
            ClassId::BIRD,
            ClassId::BICYCLE,
            ClassId::MOTORBIKE,
        ] {
            class_lambda_aff.insert(id, DEFORMABLE_LAMBDA_AFF);
        }
        Self {
            lambda_motion: 0.05,
            lambda_time: 0.02,
            lambda_layer: 0.01,
            lambda_space: 1e-4,
            lambda_d: 0.05,
            lambda_aff: DEFORMABLE_LAMBDA_AFF,
            class_lambda_aff,
        }
    }
}

impl EnergyWeights {
    pub fn zero() -> Self {
        Self {
            lambda_motion: 0.0,
            lambda_time: 0.0,
            lambda_layer: 0.0,
            lambda_space: 0.0,
            lambda_d: 0.0,
            lambda_aff: 0.0,
            class_lambda_aff: BTreeMap::new(),
        }
    }

    /// Affine weight for the foreground layer of a Thing of class `class`.
    pub fn lambda_aff_for(&self, class: ClassId) -> f64 {
        self.class_lambda_aff.get(&class).copied().unwrap_or(self.lambda_aff)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_motion,
            self.lambda_time,
            self.lambda_layer,
            self.lambda_space,
            self.lambda_d,
            self.lambda_aff,
        ];
        if all
            .iter()
            .chain(self.class_lambda_aff.values())
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Manifest("energy weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &WeightOverrides, taxonomy: &ClassTaxonomy) -> Result<()> {
        let fields = [
            (&mut self.lambda_motion, o.lambda_motion),
            (&mut self.lambda_time, o.lambda_time),
            (&mut self.lambda_layer, o.lambda_layer),
            (&mut self.lambda_space, o.lambda_space),
            (&mut self.lambda_d, o.lambda_d),
            (&mut self.lambda_aff, o.lambda_aff),
        ];
        for (slot, value) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        for (name, &w) in &o.class_lambda_aff {
            let id = taxonomy
                .class_by_name(name)
                .ok_or_else(|| Error::Manifest(format!("unknown class `{name}` in weights")))?;
            self.class_lambda_aff.insert(id, w);
        }
        self.validate()
    }
}

/// Optional per-run overrides, as read from a manifest or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightOverrides {
    pub lambda_motion: Option<f64>,
    pub lambda_time: Option<f64>,
    pub lambda_layer: Option<f64>,
    pub lambda_space: Option<f64>,
    pub lambda_d: Option<f64>,
    pub lambda_aff: Option<f64>,
    /// Keyed by class name, e.g. `car = 20.0`.
    pub class_lambda_aff: BTreeMap<String, f64>,
}

impl WeightOverrides {
    /// Later values win.
    pub fn merged(&self, other: &WeightOverrides) -> WeightOverrides {
        let mut out = self.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { out.$f = other.$f; } )* };
        }
        take!(lambda_motion, lambda_time, lambda_layer, lambda_space, lambda_d, lambda_aff);
        out.class_lambda_aff
            .extend(other.class_lambda_aff.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_classes_are_ten_times_stiffer() {
        let w = EnergyWeights::default();
        assert_eq!(w.lambda_aff_for(ClassId::CAR), 10.0 * w.lambda_aff_for(ClassId::PERSON));
        assert_eq!(w.lambda_aff_for(ClassId::BOAT), 10.0 * w.lambda_aff_for(ClassId::HORSE));
    }

    #[test]
    fn overrides_apply_by_name() {
        let tax = ClassTaxonomy::default();
        let mut w = EnergyWeights::default();
        let o = WeightOverrides {
            lambda_time: Some(2.0),
            class_lambda_aff: [("person".to_string(), 3.0)].into(),
            ..Default::default()
        };
        w.apply(&o, &tax).unwrap();
        assert_eq!(w.lambda_time, 2.0);
        assert_eq!(w.lambda_aff_for(ClassId::PERSON), 3.0);
        let bad = WeightOverrides {
            lambda_d: Some(-1.0),
            ..Default::default()
        };
        assert!(w.apply(&bad, &tax).is_err());
    }
}
