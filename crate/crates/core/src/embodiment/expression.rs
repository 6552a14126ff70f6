use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::osc::{is_address_safe, OscArg, OscMessage};
use crate::error::{Error, Result};
use crate::session::EmotionLabel;

pub const AVATAR_PARAMETER_PREFIX: &str = "/avatar/parameters/";

const DEFAULT_TABLE: &str = include_str!("../../data/expression_map.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i32),
    Float(f32),
}

impl ParamValue {
    pub fn to_osc(self) -> OscArg {
        match self {
            ParamValue::Bool(b) => OscArg::bool(b),
            ParamValue::Int(i) => OscArg::Int(i),
            ParamValue::Float(f) => OscArg::Float(f),
        }
    }

    /// The resting value sent once a hold expires.
    pub fn zero(self) -> ParamValue {
        match self {
            ParamValue::Bool(_) => ParamValue::Bool(false),
            ParamValue::Int(_) => ParamValue::Int(0),
            ParamValue::Float(_) => ParamValue::Float(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionCommand {
    pub parameter_name: String,
    pub value: ParamValue,
    pub hold_ms: u64,
}

impl ExpressionCommand {
    pub fn validate(&self) -> Result<()> {
        if !is_address_safe(&self.parameter_name) {
            return Err(Error::Config(format!(
                "parameter name {:?} is not address-safe",
                self.parameter_name
            )));
        }
        if let ParamValue::Float(f) = self.value {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "parameter {} value {f} outside [0, 1]",
                    self.parameter_name
                )));
            }
        }
        if self.hold_ms == 0 {
            return Err(Error::Config(format!(
                "parameter {} has zero hold",
                self.parameter_name
            )));
        }
        Ok(())
    }

    pub fn address(&self) -> String {
        format!("{AVATAR_PARAMETER_PREFIX}{}", self.parameter_name)
    }

    pub fn to_osc(&self) -> OscMessage {
        OscMessage::new(self.address(), vec![self.value.to_osc()])
    }

    pub fn release_osc(&self) -> OscMessage {
        OscMessage::new(self.address(), vec![self.value.zero().to_osc()])
    }
}

/// Emotion -> avatar commands, total over [`EmotionLabel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTable {
    entries: HashMap<EmotionLabel, Vec<ExpressionCommand>>,
}

impl ExpressionTable {
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_TABLE, Path::new("<builtin expression_map.toml>"))
            .expect("builtin expression table")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, path)
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let mut raw: BTreeMap<String, toml::Value> =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        raw.remove("version");
        let mut entries = HashMap::new();
        for (key, value) in raw {
            let label: EmotionLabel = key
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let cmds: Vec<ExpressionCommand> = value
                .try_into()
                .map_err(|e| Error::Config(format!("{}: [{key}]: {e}", path.display())))?;
            for c in &cmds {
                c.validate()?;
            }
            entries.insert(label, cmds);
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: HashMap<EmotionLabel, Vec<ExpressionCommand>>) -> Result<Self> {
        let missing: Vec<&str> = EmotionLabel::ALL
            .iter()
            .filter(|l| !entries.contains_key(l))
            .map(|l| l.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "expression table has no entry for: {}",
                missing.join(", ")
            )));
        }
        Ok(ExpressionTable { entries })
    }

    pub fn get(&self, emotion: EmotionLabel) -> &[ExpressionCommand] {
        &self.entries[&emotion]
    }
}

/// Commands mirroring `emotion`; neutral is always a no-op.
pub fn map_expression(emotion: EmotionLabel, table: &ExpressionTable) -> Vec<ExpressionCommand> {
    if emotion == EmotionLabel::Neutral {
        return Vec::new();
    }
    table.get(emotion).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table() {
        let t = ExpressionTable::builtin();
        assert!(map_expression(EmotionLabel::Neutral, &t).is_empty());
        assert_eq!(
            map_expression(EmotionLabel::Joy, &t),
            vec![ExpressionCommand {
                parameter_name: "Joy".into(),
                value: ParamValue::Float(1.0),
                hold_ms: 1500,
            }]
        );
    }

    #[test]
    fn missing_label_fails_at_load() {
        let text = DEFAULT_TABLE.replace("[[confusion]]", "[[joy]]");
        let err = ExpressionTable::from_toml_str(&text, Path::new("t.toml")).unwrap_err();
        assert!(err.to_string().contains("confusion"), "{err}");
    }

    #[test]
    fn addresses_carry_prefix() {
        let t = ExpressionTable::builtin();
        for label in EmotionLabel::ALL {
            for c in t.get(label) {
                assert!(c.to_osc().address.starts_with(AVATAR_PARAMETER_PREFIX));
                assert!(c.release_osc().address.starts_with(AVATAR_PARAMETER_PREFIX));
            }
        }
    }

    #[test]
    fn rejects_bad_commands() {
        let bad = ExpressionCommand {
            parameter_name: "Big Smile".into(),
            value: ParamValue::Float(0.5),
            hold_ms: 10,
        };
        assert!(bad.validate().is_err());
        let bad = ExpressionCommand {
            parameter_name: "Joy".into(),
            value: ParamValue::Float(1.5),
            hold_ms: 10,
        };
        assert!(bad.validate().is_err());
    }
}
