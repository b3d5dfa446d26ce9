use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use woundflow_gbm::{FeatureKind, FeatureSpec, Value};

use crate::error::{Error, IoContext, Result};
use crate::vision::{LabelSchema, Task, WoundLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClinicianType {
    Numeric,
    Bool,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicianVariable {
    pub name: String,
    pub kind: ClinicianType,
}

/// The 16 clinician-filled variables, in manifest column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicianSchema {
    pub version: u32,
    pub variables: Vec<ClinicianVariable>,
}

pub const CLINICIAN_SCHEMA_VERSION: u32 = 1;

impl Default for ClinicianSchema {
    fn default() -> Self {
        use ClinicianType::*;
        let vars = [
            ("bmi", Numeric),
            ("tunneling", Bool),
            ("age", Numeric),
            ("gender", Categorical),
            ("wound_area", Numeric),
            ("wound_volume", Numeric),
            ("wound_duration_days", Numeric),
            ("exudate_level", Categorical),
            ("diabetic_flag", Bool),
            ("smoking_flag", Bool),
            ("mobility_score", Numeric),
            ("albumin_level", Numeric),
            ("infection_flag", Bool),
            ("prior_hospitalizations", Numeric),
            ("medication_count", Numeric),
            ("dressing_type", Categorical),
        ];
        Self {
            version: CLINICIAN_SCHEMA_VERSION,
            variables: vars
                .into_iter()
                .map(|(name, kind)| ClinicianVariable {
                    name: name.to_string(),
                    kind,
                })
                .collect(),
        }
    }
}

impl ClinicianSchema {
    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(v) = self.variables.iter().find(|v| !seen.insert(&v.name)) {
            return Err(Error::Invalid(format!("clinician variable `{}` listed twice", v.name)));
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Feature specs for the tree model. Booleans are numeric 0/1.
    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        self.variables
            .iter()
            .map(|v| FeatureSpec {
                name: v.name.clone(),
                kind: match v.kind {
                    ClinicianType::Categorical => FeatureKind::Categorical,
                    _ => FeatureKind::Numeric,
                },
            })
            .collect()
    }

    pub fn parse(&self, index: usize, raw: &str) -> Result<Value> {
        let var = &self.variables[index];
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok(Value::Missing);
        }
        let bad = || Error::Manifest(format!("`{raw}` is not a valid {:?} value for {}", var.kind, var.name));
        Ok(match var.kind {
            ClinicianType::Numeric => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                Value::Num(v)
            }
            ClinicianType::Bool => match raw.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => Value::Num(1.0),
                "0" | "false" | "no" => Value::Num(0.0),
                _ => return Err(bad()),
            },
            ClinicianType::Categorical => Value::Cat(raw.to_string()),
        })
    }

    pub fn format(&self, index: usize, value: &Value) -> String {
        match (self.variables[index].kind, value) {
            (_, Value::Missing) => String::new(),
            (ClinicianType::Bool, Value::Num(v)) => if *v != 0.0 { "true" } else { "false" }.into(),
            (_, Value::Num(v)) if v.is_nan() => String::new(),
            (_, Value::Num(v)) => format!("{v}"),
            (_, Value::Cat(c)) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "Treatment Complete")]
    TreatmentComplete,
    #[serde(rename = "Hospitalization-Wound Related")]
    Hospitalization,
}

impl Outcome {
    pub const CLASSES: [&'static str; 2] = ["Treatment Complete", "Hospitalization-Wound Related"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Outcome::TreatmentComplete
        } else {
            Outcome::Hospitalization
        }
    }

    pub fn name(self) -> &'static str {
        Self::CLASSES[self.index()]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::CLASSES.iter().position(|c| *c == s).map(Self::from_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WoundRecord {
    pub sample_id: String,
    /// Path as written in the manifest, relative to the image root.
    pub image_path: String,
    pub labels: WoundLabels,
    pub clinician: Vec<Value>,
    pub outcome: Option<Outcome>,
}

/// Manifest header for a schema pair.
pub fn manifest_header(clinician: &ClinicianSchema) -> Vec<String> {
    let mut h = vec!["sample_id".to_string(), "image_path".to_string()];
    h.extend(Task::ALL.iter().map(|t| t.name().to_string()));
    h.extend(clinician.variables.iter().map(|v| v.name.clone()));
    h.push("outcome".into());
    h
}

fn check_header(found: &[String], expected: &[String]) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let missing: Vec<&str> = expected.iter().filter(|e| !found.contains(e)).map(String::as_str).collect();
    let extra: Vec<&str> = found.iter().filter(|f| !expected.contains(f)).map(String::as_str).collect();
    let msg = if missing.is_empty() && extra.is_empty() {
        "columns are out of order".to_string()
    } else {
        format!("missing columns [{}]; unexpected columns [{}]", missing.join(", "), extra.join(", "))
    };
    Err(Error::Manifest(format!("header mismatch: {msg}")))
}

/// Reads a manifest CSV. Image files are checked for readability; rows whose
/// image cannot be read are dropped with a warning, and loading fails when more
/// than 1% of rows are affected.
pub fn load_manifest(
    path: &Path,
    image_root: &Path,
    schema: &LabelSchema,
    clinician: &ClinicianSchema,
) -> Result<Vec<WoundRecord>> {
    let file = std::fs::File::open(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    check_header(&header, &manifest_header(clinician))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut unreadable = Vec::new();
    let mut rows = 0usize;
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        rows += 1;
        let at = |e: Error| Error::Manifest(format!("row {}: {e}", line + 2));
        let record = parse_row(&row, schema, clinician).map_err(at)?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(Error::Manifest(format!("duplicate sample_id `{}`", record.sample_id)));
        }
        let image = resolve_image(image_root, &record.image_path);
        if let Err(e) = image::image_dimensions(&image) {
            warn!("{}: unreadable image {}: {e}", record.sample_id, image.display());
            unreadable.push(record.sample_id.clone());
            continue;
        }
        records.push(record);
    }
    if unreadable.len() * 100 > rows {
        return Err(Error::Manifest(format!(
            "{} of {rows} images unreadable (limit 1%): {}",
            unreadable.len(),
            unreadable.join(", ")
        )));
    }
    Ok(records)
}

pub fn resolve_image(root: &Path, image_path: &str) -> PathBuf {
    root.join(image_path)
}

fn parse_row(row: &csv::StringRecord, schema: &LabelSchema, clinician: &ClinicianSchema) -> Result<WoundRecord> {
    let sample_id = row[0].trim().to_string();
    if sample_id.is_empty() {
        return Err(Error::Manifest("empty sample_id".into()));
    }
    let mut labels = WoundLabels::default();
    for (i, task) in Task::ALL.into_iter().enumerate() {
        let raw = row[2 + i].trim();
        if !raw.is_empty() {
            labels.set(task, Some(schema.index_of(task, raw)?));
        }
    }
    let clinician_values = (0..clinician.len())
        .map(|j| clinician.parse(j, &row[7 + j]))
        .collect::<Result<Vec<_>>>()?;
    let raw_outcome = row[7 + clinician.len()].trim();
    let outcome = if raw_outcome.is_empty() {
        None
    } else {
        Some(Outcome::parse(raw_outcome).ok_or_else(|| Error::Manifest(format!("unknown outcome `{raw_outcome}`")))?)
    };
    Ok(WoundRecord {
        sample_id,
        image_path: row[1].trim().to_string(),
        labels,
        clinician: clinician_values,
        outcome,
    })
}

pub fn write_manifest(
    path: &Path,
    records: &[WoundRecord],
    schema: &LabelSchema,
    clinician: &ClinicianSchema,
) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(manifest_header(clinician))?;
    for r in records {
        let mut row = vec![r.sample_id.clone(), r.image_path.clone()];
        for task in Task::ALL {
            row.push(r.labels.get(task).map_or(String::new(), |i| schema.label(task, i).to_string()));
        }
        for (j, v) in r.clinician.iter().enumerate() {
            row.push(clinician.format(j, v));
        }
        row.push(r.outcome.map_or(String::new(), |o| o.name().to_string()));
        w.write_record(&row)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Class label used for stratification: a wound variable name or `outcome`.
pub fn stratum_of(record: &WoundRecord, key: &str) -> Result<Option<usize>> {
    if key == "outcome" {
        return Ok(record.outcome.map(Outcome::index));
    }
    Ok(record.labels.get(Task::from_name(key)?))
}

/// Per-class counts of a wound variable, for logging.
pub fn class_counts(records: &[WoundRecord], task: Task) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        if let Some(c) = r.labels.get(task) {
            *m.entry(c).or_default() += 1;
        }
    }
    m
}
