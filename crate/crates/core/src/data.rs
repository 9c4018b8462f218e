//! Tabular datasets with typed columns.
//!
//! A [`Dataset`] keeps categorical codes, numerical values and dense integer
//! labels in separate row-major buffers. Raw text values are translated to
//! codes by a [`CategoryMap`], which is built from training data and assigns
//! code `n_cats` to anything it has not seen.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numerical,
    Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Column layout of a dataset.
///
/// `negative_label`, when set, binarizes the label column on load: the named
/// raw value becomes `"0"` and every other value becomes `"1"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct FeatureSchema {
    columns: Vec<Column>,
    n_classes: usize,
    negative_label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    negative_label: Option<String>,
    #[serde(rename = "column")]
    columns: Vec<Column>,
}

impl TryFrom<SchemaFile> for FeatureSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        let mut schema = FeatureSchema::new(f.columns, f.n_classes)?;
        schema.negative_label = f.negative_label;
        Ok(schema)
    }
}

impl From<FeatureSchema> for SchemaFile {
    fn from(s: FeatureSchema) -> Self {
        SchemaFile {
            n_classes: s.n_classes,
            negative_label: s.negative_label,
            columns: s.columns,
        }
    }
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>, n_classes: usize) -> Result<Self> {
        let n_labels = columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Label)
            .count();
        if n_labels != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {n_labels}"
            )));
        }
        if columns.len() < 2 {
            return Err(Error::Schema(
                "at least one categorical or numerical column is required".into(),
            ));
        }
        if n_classes < 2 {
            return Err(Error::Schema(format!("n_classes must be >= 2, got {n_classes}")));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.name == c.name) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(Self {
            columns,
            n_classes,
            negative_label: None,
        })
    }

    pub fn with_negative_label(mut self, raw: impl Into<String>) -> Self {
        self.negative_label = Some(raw.into());
        self
    }

    /// Generic layout used for generated data: `cat_0.., num_0.., label`.
    pub fn generated(n_categorical: usize, n_numerical: usize, n_classes: usize) -> Result<Self> {
        let mut columns = Vec::with_capacity(n_categorical + n_numerical + 1);
        columns.extend((0..n_categorical).map(|j| Column::new(format!("cat_{j}"), ColumnKind::Categorical)));
        columns.extend((0..n_numerical).map(|j| Column::new(format!("num_{j}"), ColumnKind::Numerical)));
        columns.push(Column::new("label", ColumnKind::Label));
        Self::new(columns, n_classes)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn negative_label(&self) -> Option<&str> {
        self.negative_label.as_deref()
    }

    fn names_of(&self, kind: ColumnKind) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(move |c| c.kind == kind)
            .map(|c| c.name.as_str())
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Categorical).collect()
    }

    pub fn numerical_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Numerical).collect()
    }

    pub fn label_name(&self) -> &str {
        self.names_of(ColumnKind::Label).next().expect("validated")
    }

    pub fn n_categorical(&self) -> usize {
        self.names_of(ColumnKind::Categorical).count()
    }

    pub fn n_numerical(&self) -> usize {
        self.names_of(ColumnKind::Numerical).count()
    }
}

/// One encoded sample.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub categorical: &'a [u32],
    pub numerical: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    cat_cardinality: Vec<usize>,
    categorical: Vec<u32>,
    numerical: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    /// `categorical` and `numerical` are row-major. Categorical codes may be
    /// at most `cat_cardinality[j]` (the OOD code).
    pub fn new(
        schema: FeatureSchema,
        cat_cardinality: Vec<usize>,
        categorical: Vec<u32>,
        numerical: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        let (nc, nn) = (schema.n_categorical(), schema.n_numerical());
        if cat_cardinality.len() != nc {
            return Err(Error::Shape(format!(
                "{} cardinalities for {nc} categorical columns",
                cat_cardinality.len()
            )));
        }
        if categorical.len() != n * nc || numerical.len() != n * nn {
            return Err(Error::Shape(format!(
                "row counts disagree: {n} labels, {} categorical cells ({nc} cols), {} numerical cells ({nn} cols)",
                categorical.len(),
                numerical.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= schema.n_classes()) {
            return Err(Error::Label(format!(
                "label {bad} outside [0, {})",
                schema.n_classes()
            )));
        }
        if nc > 0 {
            for row in categorical.chunks(nc) {
                for (j, (&code, &card)) in row.iter().zip(&cat_cardinality).enumerate() {
                    if code as usize > card {
                        return Err(Error::Shape(format!(
                            "code {code} in categorical column {j} exceeds OOD code {card}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            schema,
            cat_cardinality,
            categorical,
            numerical,
            labels,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn n_categorical(&self) -> usize {
        self.cat_cardinality.len()
    }

    pub fn n_numerical(&self) -> usize {
        self.schema.n_numerical()
    }

    /// Number of known categories per categorical column; code `n_cats` is OOD.
    pub fn cat_cardinality(&self) -> &[usize] {
        &self.cat_cardinality
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn categorical(&self) -> &[u32] {
        &self.categorical
    }

    pub fn numerical(&self) -> &[f64] {
        &self.numerical
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let (nc, nn) = (self.n_categorical(), self.n_numerical());
        Row {
            categorical: &self.categorical[i * nc..(i + 1) * nc],
            numerical: &self.numerical[i * nn..(i + 1) * nn],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (nc, nn) = (self.n_categorical(), self.n_numerical());
        let mut categorical = Vec::with_capacity(indices.len() * nc);
        let mut numerical = Vec::with_capacity(indices.len() * nn);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self.row(i);
            categorical.extend_from_slice(r.categorical);
            numerical.extend_from_slice(r.numerical);
            labels.push(self.labels[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            cat_cardinality: self.cat_cardinality.clone(),
            categorical,
            numerical,
            labels,
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.schema.clone(),
            self.cat_cardinality.clone(),
            self.categorical.clone(),
            self.numerical.clone(),
            labels,
        )
    }

    pub fn with_numerical(&self, numerical: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.schema.clone(),
            self.cat_cardinality.clone(),
            self.categorical.clone(),
            numerical,
            self.labels.clone(),
        )
    }

    /// Population standard deviation of each numerical column.
    pub fn numerical_std(&self) -> Vec<f64> {
        let nn = self.n_numerical();
        let n = self.n_rows();
        if n == 0 {
            return vec![0.0; nn];
        }
        (0..nn)
            .map(|j| {
                let col = self.numerical.iter().skip(j).step_by(nn);
                let mean = col.clone().sum::<f64>() / n as f64;
                (col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt()
            })
            .collect()
    }
}

/// Raw-value ↔ code translation for categorical columns and labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoryMap {
    columns: Vec<Vec<String>>,
    lookup: Vec<HashMap<String, u32>>,
    labels: Vec<String>,
}

impl CategoryMap {
    pub fn from_parts(columns: Vec<Vec<String>>, labels: Vec<String>) -> Self {
        let lookup = columns
            .iter()
            .map(|vals| {
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i as u32))
                    .collect()
            })
            .collect();
        Self {
            columns,
            lookup,
            labels,
        }
    }

    /// Placeholder names (`c0`, `c1`, …; labels `0`, `1`, …) for a dataset
    /// that was generated rather than loaded.
    pub fn synthetic_for(dataset: &Dataset) -> Self {
        let columns = dataset
            .cat_cardinality()
            .iter()
            .map(|&n| (0..n).map(|i| format!("c{i}")).collect())
            .collect();
        let labels = (0..dataset.n_classes()).map(|i| i.to_string()).collect();
        Self::from_parts(columns, labels)
    }

    pub fn n_cats(&self) -> Vec<usize> {
        self.columns.iter().map(Vec::len).collect()
    }

    /// Code for `raw` in column `j`; unseen values get the OOD code `n_cats`.
    pub fn encode(&self, j: usize, raw: &str) -> u32 {
        self.lookup[j]
            .get(raw)
            .copied()
            .unwrap_or(self.columns[j].len() as u32)
    }

    pub fn decode(&self, j: usize, code: u32) -> Option<&str> {
        self.columns[j].get(code as usize).map(String::as_str)
    }

    pub fn label_index(&self, raw: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == raw)
    }

    pub fn label_raw(&self, y: usize) -> Option<&str> {
        self.labels.get(y).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

fn sort_label_values(values: &mut [String]) {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.trim().parse().ok()).collect();
    match numeric {
        Some(_) => values.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.trim().parse().unwrap(), b.trim().parse().unwrap());
            x.total_cmp(&y)
        }),
        None => values.sort(),
    }
}

/// Reads a comma-separated file with a header row.
///
/// Without `category_map`, a new map is built from this file: categorical
/// codes in first-seen order, labels sorted by raw value (numerically when
/// every label parses as a number). With a map, unseen categorical values
/// get the OOD code and unknown labels are rejected. Header columns not in
/// the schema are ignored.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    category_map: Option<&CategoryMap>,
) -> Result<(Dataset, CategoryMap)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Format {
        path: path.into(),
        message: e.to_string(),
    };
    let header = reader.headers().map_err(csv_err)?.clone();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from {}", path.display())))
    };
    let cat_names = schema.categorical_names();
    let num_names = schema.numerical_names();
    let cat_pos = cat_names.iter().map(|n| position(n)).collect::<Result<Vec<_>>>()?;
    let num_pos = num_names.iter().map(|n| position(n)).collect::<Result<Vec<_>>>()?;
    let label_pos = position(schema.label_name())?;

    let mut raw_cats: Vec<Vec<String>> = vec![Vec::new(); cat_pos.len()];
    let mut raw_labels = Vec::new();
    let mut numerical = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // 1-based data row, header excluded
        let row = r + 1;
        for (j, &p) in cat_pos.iter().enumerate() {
            raw_cats[j].push(record.get(p).unwrap_or("").to_string());
        }
        for (j, &p) in num_pos.iter().enumerate() {
            let text = record.get(p).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                row,
                column: num_names[j].to_string(),
                message: format!("`{text}` is not a number"),
            })?;
            numerical.push(v);
        }
        let label = record.get(label_pos).unwrap_or("").to_string();
        let label = match schema.negative_label() {
            Some(neg) if label == neg => "0".to_string(),
            Some(_) => "1".to_string(),
            None => label,
        };
        raw_labels.push(label);
    }

    let map = match category_map {
        Some(m) => m.clone(),
        None => {
            let columns = raw_cats
                .iter()
                .map(|col| {
                    let mut seen: Vec<String> = Vec::new();
                    let mut set = std::collections::HashSet::new();
                    for v in col {
                        if set.insert(v.as_str()) {
                            seen.push(v.clone());
                        }
                    }
                    seen
                })
                .collect();
            let mut labels: Vec<String> = raw_labels.clone();
            labels.sort();
            labels.dedup();
            sort_label_values(&mut labels);
            if labels.len() > schema.n_classes() {
                return Err(Error::Label(format!(
                    "{} distinct label values but n_classes = {}",
                    labels.len(),
                    schema.n_classes()
                )));
            }
            CategoryMap::from_parts(columns, labels)
        }
    };
    if map.columns.len() != cat_pos.len() {
        return Err(Error::Schema(format!(
            "category map has {} columns, schema has {}",
            map.columns.len(),
            cat_pos.len()
        )));
    }

    let n = raw_labels.len();
    let nc = cat_pos.len();
    let mut categorical = vec![0u32; n * nc];
    for (j, col) in raw_cats.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            categorical[i * nc + j] = map.encode(j, v);
        }
    }
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            map.label_index(l)
                .ok_or_else(|| Error::Label(format!("unknown label `{l}` at row {}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(schema.clone(), map.n_cats(), categorical, numerical, labels)?;
    Ok((dataset, map))
}

/// Writes `dataset` in the dialect [`load_csv`] reads, translating codes
/// back through `map`. Numbers use the shortest representation that parses
/// back to the same `f64`.
pub fn write_csv(dataset: &Dataset, map: &CategoryMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let names: Vec<&str> = dataset.schema().columns().iter().map(|c| c.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..dataset.n_rows() {
        let row = dataset.row(i);
        let (mut ci, mut ni) = (0, 0);
        let mut fields = Vec::with_capacity(names.len());
        for col in dataset.schema().columns() {
            match col.kind {
                ColumnKind::Categorical => {
                    let raw = map.decode(ci, row.categorical[ci]).ok_or_else(|| {
                        Error::Shape(format!("row {i}: OOD code in column `{}` cannot be written", col.name))
                    })?;
                    fields.push(raw.to_string());
                    ci += 1;
                }
                ColumnKind::Numerical => {
                    fields.push(format!("{}", row.numerical[ni]));
                    ni += 1;
                }
                ColumnKind::Label => {
                    let y = dataset.labels()[i];
                    fields.push(
                        map.label_raw(y)
                            .ok_or_else(|| Error::Label(format!("no raw value for label {y}")))?
                            .to_string(),
                    );
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dense re-coding of categorical columns restricted to the categories that
/// occur in a training set; everything else becomes OOD.
#[derive(Clone, Debug)]
pub struct CategoryRemap {
    maps: Vec<HashMap<u32, u32>>,
}

impl CategoryRemap {
    pub fn fit(train: &Dataset) -> Self {
        let nc = train.n_categorical();
        let mut maps: Vec<HashMap<u32, u32>> = vec![HashMap::new(); nc];
        for row in train.rows() {
            for (j, &code) in row.categorical.iter().enumerate() {
                if code as usize == train.cat_cardinality()[j] {
                    continue;
                }
                let next = maps[j].len() as u32;
                maps[j].entry(code).or_insert(next);
            }
        }
        Self { maps }
    }

    pub fn n_cats(&self) -> Vec<usize> {
        self.maps.iter().map(HashMap::len).collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let n_cats = self.n_cats();
        let nc = n_cats.len();
        let categorical = data
            .categorical()
            .iter()
            .enumerate()
            .map(|(i, code)| {
                let j = i % nc;
                self.maps[j].get(code).copied().unwrap_or(n_cats[j] as u32)
            })
            .collect();
        Dataset::new(
            data.schema().clone(),
            n_cats,
            categorical,
            data.numerical().to_vec(),
            data.labels().to_vec(),
        )
    }
}

fn default_categories() -> usize {
    4
}
fn default_separation() -> f64 {
    1.0
}
fn default_signal() -> f64 {
    0.5
}

/// Parameters of the generated benchmark.
///
/// Numerical feature `j` of class `c` is `N(±separation·c, 1)` with the sign
/// alternating over `j`. Categorical column `j` favours category
/// `(c + j) mod categories_per_column` with extra probability `categorical_signal`.
/// `node_noise[k]` is the degradation applied to node `k`'s local training
/// copy (see [`degrade`]); it does not affect the generated rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "SynthSpec::default_name")]
    pub name: String,
    pub n_rows: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub n_categorical: usize,
    #[serde(default)]
    pub n_numerical: usize,
    #[serde(default = "default_categories")]
    pub categories_per_column: usize,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default = "default_signal")]
    pub categorical_signal: f64,
    /// Relative class frequencies; balanced when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub node_noise: Vec<f64>,
}

impl SynthSpec {
    fn default_name() -> String {
        "synthetic".into()
    }

    pub fn new(n_rows: usize, n_classes: usize, n_categorical: usize, n_numerical: usize) -> Self {
        Self {
            name: Self::default_name(),
            n_rows,
            n_classes,
            n_categorical,
            n_numerical,
            categories_per_column: default_categories(),
            class_separation: default_separation(),
            categorical_signal: default_signal(),
            class_weights: None,
            node_noise: Vec::new(),
        }
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Self {
        self.node_noise = noise;
        self
    }

    pub fn with_separation(mut self, separation: f64) -> Self {
        self.class_separation = separation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::Spec("n_rows must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Spec(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.n_categorical + self.n_numerical == 0 {
            return Err(Error::Spec("at least one feature column is required".into()));
        }
        if self.n_categorical > 0 && self.categories_per_column == 0 {
            return Err(Error::Spec("categories_per_column must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.categorical_signal) {
            return Err(Error::Spec("categorical_signal must lie in [0, 1]".into()));
        }
        if !self.class_separation.is_finite() {
            return Err(Error::Spec("class_separation must be finite".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.n_classes || w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Spec("class_weights must be n_classes non-negative values with positive sum".into()));
            }
        }
        if self.node_noise.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Spec("node_noise entries must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Integer counts summing to `total`, proportional to `weights`
/// (largest remainder, ties to the lower index).
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let schema = FeatureSchema::generated(spec.n_categorical, spec.n_numerical, spec.n_classes)?;
    let mut rng = rng_from(&[seed, 0x5EED]);

    let weights = spec
        .class_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; spec.n_classes]);
    let mut labels: Vec<usize> = apportion(spec.n_rows, &weights)
        .into_iter()
        .enumerate()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);

    let m = spec.categories_per_column;
    let mut categorical = Vec::with_capacity(spec.n_rows * spec.n_categorical);
    let mut numerical = Vec::with_capacity(spec.n_rows * spec.n_numerical);
    for &c in &labels {
        for j in 0..spec.n_categorical {
            let code = if rng.random::<f64>() < spec.categorical_signal {
                (c + j) % m
            } else {
                rng.random_range(0..m)
            };
            categorical.push(code as u32);
        }
        for j in 0..spec.n_numerical {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            numerical.push(sign * spec.class_separation * c as f64 + z);
        }
    }
    let cardinality = vec![m; spec.n_categorical];
    Dataset::new(schema, cardinality, categorical, numerical, labels)
}

/// Local-copy degradation: each label is replaced by a uniformly chosen
/// different class with probability `noise`, and each numerical value gets
/// zero-mean Gaussian noise with standard deviation `noise × column std`.
pub fn degrade(data: &Dataset, noise: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Spec(format!("noise {noise} outside [0, 1]")));
    }
    if noise == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = rng_from(&[seed, 0xDE6]);
    let n_classes = data.n_classes();
    let labels = data
        .labels()
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < noise {
                let shift = rng.random_range(1..n_classes);
                (y + shift) % n_classes
            } else {
                y
            }
        })
        .collect();
    let std = data.numerical_std();
    let nn = data.n_numerical();
    let numerical = data
        .numerical()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + noise * std[i % nn] * z
        })
        .collect();
    data.with_labels(labels)?.with_numerical(numerical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema_one_cat_one_num() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Column::new("proto", ColumnKind::Categorical),
                Column::new("bytes", ColumnKind::Numerical),
                Column::new("class", ColumnKind::Label),
            ],
            2,
        )
        .unwrap()
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn schema_invariants() {
        let no_label = vec![Column::new("a", ColumnKind::Numerical)];
        assert!(matches!(FeatureSchema::new(no_label, 2), Err(Error::Schema(_))));
        let two_labels = vec![
            Column::new("a", ColumnKind::Label),
            Column::new("b", ColumnKind::Label),
        ];
        assert!(FeatureSchema::new(two_labels, 2).is_err());
        let only_label = vec![Column::new("y", ColumnKind::Label)];
        assert!(FeatureSchema::new(only_label, 2).is_err());
        assert!(FeatureSchema::generated(1, 1, 1).is_err());
    }

    #[test]
    fn schema_toml() {
        let text = r#"
n_classes = 2
negative_label = "normal"

[[column]]
name = "protocol_type"
kind = "categorical"

[[column]]
name = "duration"
kind = "numerical"

[[column]]
name = "label"
kind = "label"
"#;
        let s = FeatureSchema::from_toml_str(text).unwrap();
        assert_eq!(s.categorical_names(), vec!["protocol_type"]);
        assert_eq!(s.negative_label(), Some("normal"));
        assert_eq!(FeatureSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
        assert!(FeatureSchema::from_toml_str("n_classes = 1\n[[column]]\nname='y'\nkind='label'").is_err());
    }

    #[test]
    fn first_seen_codes_and_ood() {
        let f = write_tmp("proto,bytes,class\ntcp,1.5,a\nudp,2,b\ntcp,3,a\n");
        let schema = schema_one_cat_one_num();
        let (ds, map) = load_csv(f.path(), &schema, None).unwrap();
        assert_eq!(ds.categorical(), &[0, 1, 0]);
        assert_eq!(map.n_cats(), vec![2]);
        assert_eq!(ds.labels(), &[0, 1, 0]);

        let g = write_tmp("proto,bytes,class\ntcp,1.5,a\nudp,2,b\ntcp,3,a\nicmp,4,b\n");
        let (ds2, _) = load_csv(g.path(), &schema, Some(&map)).unwrap();
        assert_eq!(ds2.categorical(), &[0, 1, 0, 2]);
        assert_eq!(ds2.cat_cardinality(), &[2]);
    }

    #[test]
    fn parse_error_names_row() {
        let f = write_tmp("proto,bytes,class\ntcp,1,a\ntcp,abc,b\n");
        match load_csv(f.path(), &schema_one_cat_one_num(), None) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "bytes");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_unknown_label() {
        let f = write_tmp("proto,class\ntcp,a\n");
        assert!(matches!(
            load_csv(f.path(), &schema_one_cat_one_num(), None),
            Err(Error::Schema(_))
        ));
        let g = write_tmp("proto,bytes,class\ntcp,1,a\nudp,1,b\nudp,1,c\n");
        assert!(matches!(
            load_csv(g.path(), &schema_one_cat_one_num(), None),
            Err(Error::Label(_))
        ));
        let train = write_tmp("proto,bytes,class\ntcp,1,a\nudp,1,b\n");
        let (_, map) = load_csv(train.path(), &schema_one_cat_one_num(), None).unwrap();
        let test = write_tmp("proto,bytes,class\ntcp,1,z\n");
        assert!(matches!(
            load_csv(test.path(), &schema_one_cat_one_num(), Some(&map)),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn labels_sorted_by_raw_value() {
        let f = write_tmp("proto,bytes,class\ntcp,1,10\nudp,2,9\ntcp,3,10\n");
        let (ds, map) = load_csv(f.path(), &schema_one_cat_one_num(), None).unwrap();
        // numeric order: 9 < 10
        assert_eq!(map.labels(), &["9".to_string(), "10".to_string()]);
        assert_eq!(ds.labels(), &[1, 0, 1]);
    }

    #[test]
    fn negative_label_binarizes() {
        let schema = schema_one_cat_one_num().with_negative_label("normal");
        let f = write_tmp("proto,bytes,class\ntcp,1,normal\nudp,2,neptune\ntcp,3,smurf\n");
        let (ds, _) = load_csv(f.path(), &schema, None).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 1]);
    }

    #[test]
    fn csv_round_trip() {
        let spec = SynthSpec::new(50, 3, 2, 3);
        let ds = synth_generate(&spec, 7).unwrap();
        let map = CategoryMap::synthetic_for(&ds);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &map, &path).unwrap();
        let (back, _) = load_csv(&path, ds.schema(), Some(&map)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec::new(3000, 2, 1, 2).with_noise(vec![0.0, 0.1, 0.3]);
        let a = synth_generate(&spec, 42).unwrap();
        let b = synth_generate(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&spec, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.class_counts(), vec![1500, 1500]);
    }

    #[test]
    fn synth_rejects_bad_spec() {
        assert!(matches!(synth_generate(&SynthSpec::new(10, 1, 0, 1), 0), Err(Error::Spec(_))));
        assert!(matches!(synth_generate(&SynthSpec::new(0, 2, 0, 1), 0), Err(Error::Spec(_))));
    }

    #[test]
    fn remap_restricts_to_training_categories() {
        let schema = FeatureSchema::generated(1, 0, 2).unwrap();
        let full = Dataset::new(schema, vec![4], vec![3, 1, 3, 0], vec![], vec![0, 1, 0, 1]).unwrap();
        let train = full.select(&[0, 1]);
        let remap = CategoryRemap::fit(&train);
        assert_eq!(remap.n_cats(), vec![2]);
        let test = remap.apply(&full).unwrap();
        assert_eq!(test.categorical(), &[0, 1, 0, 2]);
    }

    #[test]
    fn degrade_flips_about_noise_fraction() {
        let spec = SynthSpec::new(4000, 3, 0, 2);
        let ds = synth_generate(&spec, 1).unwrap();
        let d = degrade(&ds, 0.3, 9).unwrap();
        let flipped = ds.labels().iter().zip(d.labels()).filter(|(a, b)| a != b).count();
        let frac = flipped as f64 / 4000.0;
        assert!((frac - 0.3).abs() < 0.03, "{frac}");
        assert_eq!(degrade(&ds, 0.0, 9).unwrap(), ds);
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(apportion(3, &[0.6, 0.2, 0.2]), vec![2, 1, 0]);
        assert_eq!(apportion(7, &[1.0]), vec![7]);
    }
}
