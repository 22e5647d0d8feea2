//! Task descriptors, process datasets, full factorial input grids and the
//! dataset CSV format.
//!
//! Dataset CSV layout:
//!
//! ```text
//! # descriptor: id=1;thickness=1.5;initial_stress=100;saturation=130
//! in:bhf,in:friction,out:max_stress,out:distance
//! 0.1,0.12,1.0123,4.91
//! ...
//! ```
//!
//! The `id` key in the descriptor line is reserved for the process identifier
//! and is optional (defaults to 1). Every other key is a condition, in order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HpmError, Result};
use crate::serde_matrix;

/// Condition names of the deep-drawing scenario, in descriptor order.
pub const DEEP_DRAWING_CONDITIONS: [&str; 3] = ["thickness", "initial_stress", "saturation"];

/// The condition vector identifying one process variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    id: u32,
    names: Vec<String>,
    values: Vec<f64>,
}

impl TaskDescriptor {
    pub fn new(id: u32, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if id == 0 {
            return Err(HpmError::InvalidArgument("process id must be >= 1".into()));
        }
        if values.is_empty() || values.len() != names.len() {
            return Err(HpmError::InvalidArgument(format!(
                "descriptor needs matching non-empty names and values ({} names, {} values)",
                names.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(HpmError::InvalidArgument(format!(
                "descriptor value {} ({}) is not finite",
                i, names[i]
            )));
        }
        Ok(TaskDescriptor { id, names, values })
    }

    /// Descriptor over the deep-drawing conditions (thickness, initial stress, saturation).
    pub fn deep_drawing(id: u32, thickness: f64, initial_stress: f64, saturation: f64) -> Self {
        TaskDescriptor::new(
            id,
            DEEP_DRAWING_CONDITIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec![thickness, initial_stress, saturation],
        )
        .expect("deep-drawing descriptor")
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        TaskDescriptor {
            id: self.id,
            names: self.names.clone(),
            values,
        }
    }
}

/// Per-dimension min-max bounds over a set of descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a, I>(descriptors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TaskDescriptor>,
    {
        let mut iter = descriptors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| HpmError::InvalidArgument("empty descriptor set".into()))?;
        let mut min = first.values.clone();
        let mut max = first.values.clone();
        for d in iter {
            if d.dim() != min.len() {
                return Err(HpmError::DimensionMismatch {
                    expected: min.len(),
                    found: d.dim(),
                    context: "descriptor dimension",
                });
            }
            for (j, &v) in d.values.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn scale(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Min-max normalize every descriptor dimension to [0, 1] over the whole list.
///
/// Callers ranking against a target must include the target in `descriptors`
/// so that it lands inside the unit box.
pub fn normalize_descriptors(descriptors: &[TaskDescriptor]) -> Result<Vec<TaskDescriptor>> {
    if descriptors.len() < 2 {
        return Err(HpmError::InvalidArgument(
            "normalization needs at least two descriptors".into(),
        ));
    }
    let bounds = MinMax::fit(descriptors)?;
    if let Some(j) = (0..bounds.min.len()).find(|&j| bounds.max[j] <= bounds.min[j]) {
        return Err(HpmError::DegenerateDimension {
            index: j,
            name: descriptors[0].names[j].clone(),
        });
    }
    Ok(descriptors
        .iter()
        .map(|d| d.with_values(bounds.scale(&d.values)))
        .collect())
}

/// Paired (process parameters -> quality) samples for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDataset {
    pub descriptor: TaskDescriptor,
    #[serde(with = "serde_matrix::matrix")]
    pub inputs: DMatrix<f64>,
    #[serde(with = "serde_matrix::matrix")]
    pub outputs: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl ProcessDataset {
    pub fn new(
        descriptor: TaskDescriptor,
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(HpmError::NoSamples);
        }
        if inputs.nrows() != outputs.nrows() {
            return Err(HpmError::DimensionMismatch {
                expected: inputs.nrows(),
                found: outputs.nrows(),
                context: "output rows",
            });
        }
        if input_names.len() != inputs.ncols() || output_names.len() != outputs.ncols() {
            return Err(HpmError::InvalidArgument(
                "column names do not match matrix widths".into(),
            ));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(HpmError::InvalidArgument(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(ProcessDataset {
            descriptor,
            inputs,
            outputs,
            input_names,
            output_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.nrows()
    }
}

/// Full factorial input grid shared by every source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(with = "serde_matrix::matrix")]
    pub points: DMatrix<f64>,
    pub levels: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Grid {
    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.points.ncols()
    }

    /// Stable identifier of the grid definition; shapes sampled on grids with
    /// equal fingerprints are landmark-aligned.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over levels and bound bit patterns.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.levels as u64);
        eat(self.min.len() as u64);
        for v in self.min.iter().chain(&self.max) {
            eat(v.to_bits());
        }
        h
    }
}

/// Equally spaced full factorial design; the last factor varies fastest.
pub fn generate_ffd_grid(min: &[f64], max: &[f64], levels: usize) -> Result<Grid> {
    if levels < 2 {
        return Err(HpmError::InvalidArgument(format!(
            "grid needs at least 2 levels, got {levels}"
        )));
    }
    if min.is_empty() || min.len() != max.len() {
        return Err(HpmError::InvalidArgument(
            "grid bounds must be non-empty and of equal length".into(),
        ));
    }
    if let Some(j) = (0..min.len()).find(|&j| !(min[j] < max[j])) {
        return Err(HpmError::InvalidArgument(format!(
            "grid bound {j}: min {} must be below max {}",
            min[j], max[j]
        )));
    }
    let factors = min.len();
    let axes: Vec<Vec<f64>> = (0..factors)
        .map(|j| {
            (0..levels)
                .map(|i| {
                    if i == levels - 1 {
                        max[j]
                    } else {
                        min[j] + (max[j] - min[j]) * i as f64 / (levels - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let n = levels.pow(factors as u32);
    let mut points = DMatrix::zeros(n, factors);
    for row in 0..n {
        let mut rem = row;
        for j in (0..factors).rev() {
            points[(row, j)] = axes[j][rem % levels];
            rem /= levels;
        }
    }
    Ok(Grid {
        points,
        levels,
        min: min.to_vec(),
        max: max.to_vec(),
    })
}

/// Write a dataset in the canonical CSV format.
pub fn write_dataset_csv(dataset: &ProcessDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_csv(dataset)).map_err(|e| HpmError::io(path, e))
}

pub fn dataset_to_csv(dataset: &ProcessDataset) -> String {
    let d = &dataset.descriptor;
    let mut out = format!("# descriptor: id={}", d.id);
    for (name, value) in d.names.iter().zip(&d.values) {
        let _ = write!(out, ";{name}={value}");
    }
    out.push('\n');
    let header: Vec<String> = dataset
        .input_names
        .iter()
        .map(|n| format!("in:{n}"))
        .chain(dataset.output_names.iter().map(|n| format!("out:{n}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..dataset.n_samples() {
        let row: Vec<String> = dataset
            .inputs
            .row(i)
            .iter()
            .chain(dataset.outputs.row(i).iter())
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<ProcessDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HpmError::io(path, e))?;
    parse_dataset_csv(&text)
}

pub fn parse_dataset_csv(text: &str) -> Result<ProcessDataset> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| HpmError::Parse {
        line: line + 1,
        message,
    };

    let (ln, first) = lines.next().ok_or(HpmError::Parse {
        line: 1,
        message: "missing descriptor line".into(),
    })?;
    let body = first
        .strip_prefix("# descriptor:")
        .ok_or_else(|| parse_err(ln, "expected '# descriptor: name=value;...'".into()))?;
    let mut id = 1u32;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for pair in body.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| parse_err(ln, format!("descriptor entry '{pair}' lacks '='")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "id" {
            id = v
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid process id '{v}'")))?;
        } else {
            let value: f64 = v
                .parse()
                .map_err(|_| parse_err(ln, format!("non-numeric descriptor value '{v}'")))?;
            names.push(k.to_string());
            values.push(value);
        }
    }
    let descriptor =
        TaskDescriptor::new(id, names, values).map_err(|e| parse_err(ln, e.to_string()))?;

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing column header line".into()))?;
    let mut input_names = Vec::new();
    let mut output_names = Vec::new();
    for col in header.split(',').map(str::trim) {
        if let Some(n) = col.strip_prefix("in:") {
            if !output_names.is_empty() {
                return Err(parse_err(ln, "input columns must precede outputs".into()));
            }
            input_names.push(n.to_string());
        } else if let Some(n) = col.strip_prefix("out:") {
            output_names.push(n.to_string());
        } else {
            return Err(parse_err(
                ln,
                format!("column '{col}' lacks an 'in:' or 'out:' prefix"),
            ));
        }
    }
    if input_names.is_empty() || output_names.is_empty() {
        return Err(parse_err(
            ln,
            "need at least one input and one output column".into(),
        ));
    }

    let width = input_names.len() + output_names.len();
    let mut cells = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_err(
                ln,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(ln, format!("non-numeric cell '{f}'")))?;
            if !v.is_finite() {
                return Err(parse_err(ln, format!("non-finite cell '{f}'")));
            }
            cells.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(HpmError::NoSamples);
    }
    let all = DMatrix::from_row_slice(rows, width, &cells);
    let k = input_names.len();
    ProcessDataset::new(
        descriptor,
        all.columns(0, k).into_owned(),
        all.columns(k, width - k).into_owned(),
        input_names,
        output_names,
    )
}
