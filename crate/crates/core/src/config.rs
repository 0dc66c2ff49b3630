//! Run configuration: a TOML file whose top-level keys are search settings
//! plus input/output paths, with one section per subcommand.
//!
//! ```toml
//! data = "clicks.csv"
//! out = "runs/a"
//! batch_size = 512
//! candidate_dims = [2, 8]
//!
//! [split]
//! seed = 3
//!
//! [stability]
//! seeds = [1, 2, 3]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{read_to_string, SplitSpec};
use crate::error::{Error, Result};
use crate::trainer::{BaselineMethod, SearchConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainSection {
    pub arch: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub method: Option<BaselineMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub field: Option<String>,
    pub all: bool,
    /// Architecture whose derived dims are listed next to the probe scores.
    pub arch: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub seeds: Vec<u64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub delimiter: char,
    pub out: Option<PathBuf>,
    pub split: SplitSpec,
    pub search: SearchConfig,
    pub retrain: RetrainSection,
    pub eval: EvalSection,
    pub baseline: BaselineSection,
    pub probe: ProbeSection,
    pub stability: StabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_table(Table::new()).expect("empty config is valid")
    }
}

fn take<T: for<'de> Deserialize<'de> + Default>(table: &mut Table, key: &str) -> Result<T> {
    match table.remove(key) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[{key}]: {}", e.message()))),
    }
}

fn take_path(table: &mut Table, key: &str) -> Result<Option<PathBuf>> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(other) => Err(Error::Config(format!("`{key}` must be a string, got {other}"))),
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    let probe = format!("v = {value}");
    match probe.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(value.to_string()),
    }
}

/// Sets a dotted `key=value` in a raw table.
pub fn set_key(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut t = table;
    for part in &path[..path.len() - 1] {
        let entry = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` is not a section")))?;
    }
    t.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// Applies one `key=value` override to a search configuration.
pub fn apply_override(cfg: &SearchConfig, assignment: &str) -> Result<SearchConfig> {
    let mut table = Table::try_from(cfg)?;
    set_key(&mut table, assignment)?;
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

impl RunConfig {
    pub fn from_table(mut table: Table) -> Result<Self> {
        let data = take_path(&mut table, "data")?;
        let schema = take_path(&mut table, "schema")?;
        let out = take_path(&mut table, "out")?;
        let delimiter = match table.remove("delimiter") {
            None => ',',
            Some(Value::String(s)) => {
                let s = if s == "\\t" { "\t".to_string() } else { s };
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii() => c,
                    _ => return Err(Error::Config(format!("delimiter must be one ASCII character, got `{s}`"))),
                }
            }
            Some(other) => return Err(Error::Config(format!("delimiter must be a string, got {other}"))),
        };
        let split: SplitSpec = take(&mut table, "split")?;
        split.validate()?;
        let _: SearchSection = take(&mut table, "search")?;
        let retrain = take(&mut table, "retrain")?;
        let eval = take(&mut table, "eval")?;
        let baseline = take(&mut table, "baseline")?;
        let probe = take(&mut table, "probe")?;
        let stability = take(&mut table, "stability")?;
        let search: SearchConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        search.validate()?;
        Ok(Self {
            data,
            schema,
            delimiter,
            out,
            split,
            search,
            retrain,
            eval,
            baseline,
            probe,
            stability,
        })
    }

    /// Reads `path` (if any), then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => read_to_string(p)?.parse::<Table>()?,
            None => Table::new(),
        };
        for o in overrides {
            set_key(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        let mut t = Table::try_from(&self.search)?;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.display().to_string()));
        for (k, v) in [("data", path(&self.data)), ("schema", path(&self.schema)), ("out", path(&self.out))] {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        }
        t.insert("delimiter".into(), Value::String(self.delimiter.to_string()));
        t.insert("split".into(), Value::try_from(self.split)?);
        t.insert("retrain".into(), Value::try_from(&self.retrain)?);
        t.insert("eval".into(), Value::try_from(&self.eval)?);
        t.insert("baseline".into(), Value::try_from(&self.baseline)?);
        t.insert("probe".into(), Value::try_from(&self.probe)?);
        t.insert("stability".into(), Value::try_from(&self.stability)?);
        Ok(toml::to_string(&t)?)
    }

    pub fn delimiter_byte(&self) -> u8 {
        self.delimiter as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Layout;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.search, SearchConfig::default());
        assert_eq!(c.delimiter, ',');
        let text = c.to_toml().unwrap();
        let again = RunConfig::from_table(text.parse().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn file_sections_and_overrides() {
        let text = r#"
data = "d.csv"
batch_size = 128
layout = "separate"
candidate_dims = [2, 8]
[split]
seed = 9
train = 0.8
validation = 0.1
test = 0.1
[stability]
seeds = [4, 5]
"#;
        let mut table: Table = text.parse().unwrap();
        set_key(&mut table, "lr_alpha=0.01").unwrap();
        set_key(&mut table, "probe.field=item").unwrap();
        set_key(&mut table, "f = 3").unwrap();
        let c = RunConfig::from_table(table).unwrap();
        assert_eq!(c.data, Some(PathBuf::from("d.csv")));
        assert_eq!(c.search.batch_size, 128);
        assert_eq!(c.search.layout, Layout::Separate);
        assert_eq!(c.search.lr_alpha, 0.01);
        assert_eq!(c.search.arch_update_period, 3);
        assert_eq!(c.search.candidate_dims.as_slice(), &[2, 8]);
        assert_eq!(c.split.seed, 9);
        assert_eq!(c.stability.seeds, vec![4, 5]);
        assert_eq!(c.probe.field.as_deref(), Some("item"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["bogus = 1", "[probe]\nfeild = \"x\"", "[nonsense]\na = 1", "f = 0", "delimiter = \";;\""] {
            let t: Table = bad.parse().unwrap();
            assert!(matches!(RunConfig::from_table(t), Err(Error::Config(_))), "{bad}");
        }
        assert!(set_key(&mut Table::new(), "novalue").is_err());
    }

    #[test]
    fn search_override_helper() {
        let c = apply_override(&SearchConfig::default(), "hidden=[16]").unwrap();
        assert_eq!(c.hidden, vec![16]);
        assert!(apply_override(&c, "nope=1").is_err());
    }
}
