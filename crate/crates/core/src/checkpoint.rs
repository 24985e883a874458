//! Versioned JSON checkpoints.
//!
//! ```json
//! {"format_version": 1, "variant": "its-lstm", "configs": {...},
//!  "parameters": [{"name": "net0.lstm.w", "shape": [36, 1024], "values": [[...], ...]}],
//!  "rng_seed": 7, "class_names": ["wave", "both-arms-raise", "squat", "idle"]}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so `load(save(m))`
//! is bit-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, Model, Variant};
use crate::numeric::{Matrix, Parameters};
use crate::skeleton::class_names;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub variant: Variant,
    pub configs: Architecture,
    pub parameters: Vec<TensorRecord>,
    pub rng_seed: u64,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            variant: model.variant(),
            configs: model.arch.clone(),
            parameters: model
                .params()
                .into_iter()
                .map(|(name, m)| TensorRecord {
                    name,
                    shape: [m.rows(), m.cols()],
                    values: m.to_rows(),
                })
                .collect(),
            rng_seed: model.seed,
            class_names: class_names(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Migration {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.variant != self.configs.variant {
            return Err(schema("variant", "does not match configs.variant"));
        }
        if self.class_names.len() != self.configs.classes {
            return Err(schema(
                "class_names",
                &format!("{} names for {} classes", self.class_names.len(), self.configs.classes),
            ));
        }
        let mut model = Model::zeros(&self.configs)?;
        model.seed = self.rng_seed;
        let mut slots = model.params_mut();
        if slots.len() != self.parameters.len() {
            return Err(schema(
                "parameters",
                &format!("{} tensors, architecture needs {}", self.parameters.len(), slots.len()),
            ));
        }
        let mut filled = vec![false; slots.len()];
        for (i, rec) in self.parameters.iter().enumerate() {
            let loc = format!("parameters[{i}]");
            let k = slots
                .iter()
                .position(|(n, _)| *n == rec.name)
                .ok_or_else(|| schema(&loc, &format!("unknown tensor '{}'", rec.name)))?;
            if filled[k] {
                return Err(schema(&loc, &format!("duplicate tensor '{}'", rec.name)));
            }
            let slot = &mut slots[k].1;
            if rec.shape != [slot.rows(), slot.cols()] {
                return Err(schema(
                    &loc,
                    &format!("'{}' has shape {:?}, expected {:?}", rec.name, rec.shape, slot.shape()),
                ));
            }
            let m = Matrix::from_rows(&rec.values).map_err(|e| schema(&loc, &format!("'{}': {e}", rec.name)))?;
            if m.shape() != slot.shape() {
                return Err(schema(&loc, &format!("'{}' values disagree with shape", rec.name)));
            }
            if !m.is_finite() {
                return Err(schema(&loc, &format!("'{}' contains a non-finite value", rec.name)));
            }
            **slot = m;
            filled[k] = true;
        }
        drop(slots);
        Ok(model)
    }
}

fn schema(location: &str, message: &str) -> Error {
    Error::Schema {
        location: location.to_string(),
        message: message.to_string(),
    }
}

pub fn to_json(model: &Model) -> Result<String> {
    Ok(serde_json::to_string(&Checkpoint::from_model(model))?)
}

/// Parses a checkpoint document. The version is checked before the rest of
/// the schema so older layouts report a migration error, not a parse error.
pub fn from_json(text: &str) -> Result<Model> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("format_version")
        .ok_or_else(|| schema("format_version", "missing"))?;
    let found = version
        .as_u64()
        .ok_or_else(|| schema("format_version", "not a non-negative integer"))?;
    if found != FORMAT_VERSION {
        return Err(Error::Migration {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_value(value)?;
    ckpt.into_model()
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::numeric::Rng;
    use crate::skeleton::{FEATURE_WIDTH, SEQ_LEN};

    fn small(v: Variant, seed: u64) -> Model {
        build_model(&Architecture::reduced(v, 4), &Rng::new(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let m = small(v, 3);
            let back = from_json(&to_json(&m).unwrap()).unwrap();
            assert_eq!(back, m);
            let mut rng = Rng::new(8);
            for _ in 0..10 {
                let x = Matrix::from_vec(
                    SEQ_LEN,
                    FEATURE_WIDTH,
                    (0..SEQ_LEN * FEATURE_WIDTH).map(|_| rng.normal()).collect(),
                )
                .unwrap();
                let (a, _) = m.forward(&x, None).unwrap();
                let (b, _) = back.forward(&x, None).unwrap();
                assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn extreme_floats_survive() {
        let mut m = small(Variant::SingleLstm, 1);
        let vals = [f64::MIN_POSITIVE, 5e-324, -1.0 / 3.0, 1e300, 0.1 + 0.2, -0.0];
        m.head[0].b.as_mut_slice()[..4].copy_from_slice(&vals[..4]);
        m.head[0].w.as_mut_slice()[..2].copy_from_slice(&vals[4..]);
        let back = from_json(&to_json(&m).unwrap()).unwrap();
        let a: Vec<u64> = back.head[0].b.as_slice().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = m.head[0].b.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.head[0].w.as_slice()[..2], m.head[0].w.as_slice()[..2]);
    }

    #[test]
    fn tampered_version_is_migration_error() {
        let text = to_json(&small(Variant::DoubleLstm, 2)).unwrap();
        let tampered = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(
            from_json(&tampered),
            Err(Error::Migration { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn corrupt_documents_rejected() {
        assert!(matches!(from_json("{not json"), Err(Error::Json(_))));
        assert!(matches!(from_json("{}"), Err(Error::Schema { .. })));
        let text = to_json(&small(Variant::SingleLstm, 2)).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(from_json(truncated).is_err());

        let mut ckpt = Checkpoint::from_model(&small(Variant::SingleLstm, 2));
        ckpt.parameters[0].values[0].pop();
        assert!(matches!(ckpt.into_model(), Err(Error::Schema { .. })));

        let mut ckpt = Checkpoint::from_model(&small(Variant::SingleLstm, 2));
        ckpt.parameters[1].name = "lstm0.w".into();
        assert!(matches!(ckpt.into_model(), Err(Error::Schema { .. })));

        let mut ckpt = Checkpoint::from_model(&small(Variant::SingleLstm, 2));
        ckpt.parameters.pop();
        assert!(matches!(ckpt.into_model(), Err(Error::Schema { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = small(Variant::ItsLstm, 5);
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["variant"], "its-lstm");
        assert_eq!(doc["class_names"][1], "both-arms-raise");
        assert_eq!(doc["rng_seed"], 5);
    }
}
