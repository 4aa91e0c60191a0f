//! CSV curve files and dataset ingestion.
//!
//! A curve file starts with `# key: value` metadata lines (mode, units, sign
//! convention), then a header row and numeric rows. Numbers are written in
//! scientific notation with nine significant digits so outputs are byte stable.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::calibration::{Dataset, DatasetFit, DatasetMeta, DatasetMode, GridCell};
use crate::drivers::{CurveSeries, SweepMode};
use crate::error::{Error, Result};
use crate::visco::{LoadMode, TimeSeries};

pub const SIGN_KEY: &str = "sign";
pub const TENSION_POSITIVE: &str = "tension_positive";
pub const COMPRESSION_POSITIVE: &str = "compression_positive";

/// Columns flipped by a compression-positive sign convention.
pub const STRESS_COLUMNS: [&str; 4] = ["stress_MPa", "s_dev_MPa", "s_sph_MPa", "pressure_MPa"];

pub fn format_number(v: f64) -> String {
    format!("{v:.8e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveFile {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CurveFile {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Invariant(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite value in curve row".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn require(&self, name: &str, source: &str) -> Result<Vec<f64>> {
        self.column(name).ok_or_else(|| Error::Data {
            source_name: source.to_string(),
            row: 1,
            message: format!(
                "missing column '{name}' (found: {})",
                self.columns.join(", ")
            ),
        })
    }

    pub fn is_compression_positive(&self) -> bool {
        self.meta(SIGN_KEY) == Some(COMPRESSION_POSITIVE)
    }

    /// Negates the stress columns, switching between sign conventions.
    pub fn flip_stress_sign(&mut self) {
        let idx: Vec<usize> = STRESS_COLUMNS
            .iter()
            .filter_map(|c| self.column_index(c))
            .collect();
        for row in &mut self.rows {
            for &i in &idx {
                row[i] = -row[i];
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<curve output>", e);
        for (k, v) in &self.meta {
            writeln!(w, "# {k}: {v}").map_err(io)?;
        }
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record(&self.columns)?;
        for row in &self.rows {
            csv.write_record(row.iter().map(|v| format_number(*v)))?;
        }
        csv.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut skipped = 0usize;
        let mut body = text;
        while let Some(line) = body.lines().next() {
            let trimmed = line.trim();
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
            } else if !trimmed.is_empty() {
                break;
            }
            skipped += 1;
            body = body.get(line.len()..).unwrap_or("");
            body = body
                .strip_prefix("\r\n")
                .or_else(|| body.strip_prefix('\n'))
                .unwrap_or(body);
        }
        let data_err = |row: usize, message: String| Error::Data {
            source_name: source.to_string(),
            row,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(body.as_bytes());
        let columns: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        if columns.is_empty() || columns.iter().any(|c| c.is_empty()) {
            return Err(data_err(skipped + 1, "empty header name".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                data_err(skipped + line, e.to_string())
            })?;
            let line = skipped + rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != columns.len() {
                return Err(data_err(
                    line,
                    format!("expected {} fields, found {}", columns.len(), rec.len()),
                ));
            }
            let row = rec
                .iter()
                .zip(&columns)
                .map(|(field, col)| {
                    if field.is_empty() {
                        return Err(data_err(line, format!("empty cell in column '{col}'")));
                    }
                    let v: f64 = field.parse().map_err(|_| {
                        data_err(line, format!("'{field}' in column '{col}' is not a number"))
                    })?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(data_err(
                            line,
                            format!("non-finite value in column '{col}'"),
                        ))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self {
            meta,
            columns,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Row number (1-based, counting data rows) of the first non-monotone step.
    fn first_non_monotone(v: &[f64]) -> Option<usize> {
        if v.len() < 2 {
            return None;
        }
        let up = v[1] > v[0];
        v.windows(2)
            .position(|w| if up { w[1] <= w[0] } else { w[1] >= w[0] })
            .map(|i| i + 2)
    }

    /// Converts to a dataset of the given mode. Stress comes back tension positive.
    pub fn to_dataset(&self, mode: DatasetMode, name: &str, source: &str) -> Result<Dataset> {
        let mut curve = self.clone();
        if curve.is_compression_positive() {
            curve.flip_stress_sign();
        }
        if curve.rows.is_empty() {
            return Err(Error::Data {
                source_name: source.to_string(),
                row: 1,
                message: "no data rows".into(),
            });
        }
        let (strain_col, lateral_col, time_col) = match mode {
            DatasetMode::UniaxialEq => ("strain_log_axial", Some("strain_log_lateral"), None),
            DatasetMode::CyclicShear | DatasetMode::CyclicUniaxial => ("strain", None, Some("t_s")),
            _ => ("strain", None, None),
        };
        let strain = curve.require(strain_col, source)?;
        let stress = curve.require("stress_MPa", source)?;
        let lateral = lateral_col.map(|c| curve.require(c, source)).transpose()?;
        let time = time_col.map(|c| curve.require(c, source)).transpose()?;
        if !mode.is_cyclic() {
            if let Some(row) = Self::first_non_monotone(&strain) {
                return Err(Error::Data {
                    source_name: source.to_string(),
                    row,
                    message: format!("column '{strain_col}' is not strictly monotone"),
                });
            }
        }
        let num = |key: &str| -> Result<Option<f64>> {
            curve
                .meta(key)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Input(format!("{source}: metadata '{key}' is not a number"))
                    })
                })
                .transpose()
        };
        let d = Dataset {
            name: name.to_string(),
            mode,
            strain,
            lateral,
            stress,
            time,
            weight: 1.0,
            meta: DatasetMeta {
                density: curve.meta("material").map(str::to_string),
                frequency: num("frequency_Hz")?,
                amplitude: num("amplitude")?,
                pre_strain: num("pre_strain")?,
            },
        };
        d.validate()?;
        Ok(d)
    }
}

/// Reads and validates a dataset file.
pub fn parse_dataset(path: &Path, mode: DatasetMode) -> Result<Dataset> {
    let curve = CurveFile::load(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| mode.name().to_string());
    curve.to_dataset(mode, &name, &path.display().to_string())
}

/// Curve file for a sweep. Uniaxial and confined curves are written
/// compression positive, shear tension positive.
pub fn sweep_curve(series: &CurveSeries, material: &str) -> CurveFile {
    let cols: Vec<&str> = series.columns.iter().map(String::as_str).collect();
    let sign = match series.mode {
        SweepMode::Shear => TENSION_POSITIVE,
        SweepMode::Uniaxial | SweepMode::PseudoHydro => COMPRESSION_POSITIVE,
    };
    let mut curve = CurveFile::new(&cols)
        .with_meta("mode", series.mode.name())
        .with_meta("material", material)
        .with_meta("units", "strain: log or engineering shear (-), stress: MPa")
        .with_meta(SIGN_KEY, sign);
    curve.rows = series.rows.clone();
    if sign == COMPRESSION_POSITIVE {
        curve.flip_stress_sign();
    }
    curve
}

/// Curve file for a dataset, in the column layout `parse_dataset` reads back.
pub fn dataset_curve(d: &Dataset) -> CurveFile {
    let mut curve = match d.mode {
        DatasetMode::UniaxialEq => {
            let mut c = CurveFile::new(&["strain_log_axial", "strain_log_lateral", "stress_MPa"]);
            let lat = d.lateral.clone().unwrap_or_else(|| vec![0.0; d.len()]);
            c.rows = (0..d.len())
                .map(|i| vec![d.strain[i], lat[i], d.stress[i]])
                .collect();
            c
        }
        DatasetMode::CyclicShear | DatasetMode::CyclicUniaxial => {
            let mut c = CurveFile::new(&["t_s", "strain", "stress_MPa"]);
            let t = d.time.clone().unwrap_or_else(|| vec![0.0; d.len()]);
            c.rows = (0..d.len())
                .map(|i| vec![t[i], d.strain[i], d.stress[i]])
                .collect();
            c
        }
        _ => {
            let mut c = CurveFile::new(&["strain", "stress_MPa"]);
            c.rows = (0..d.len())
                .map(|i| vec![d.strain[i], d.stress[i]])
                .collect();
            c
        }
    };
    curve.set_meta("mode", d.mode.name());
    if let Some(m) = &d.meta.density {
        curve.set_meta("material", m);
    }
    curve.set_meta(
        "units",
        "strain: log or engineering shear (-), stress: MPa, time: s",
    );
    curve.set_meta(SIGN_KEY, TENSION_POSITIVE);
    if let Some(f) = d.meta.frequency {
        curve.set_meta("frequency_Hz", format_number(f));
    }
    if let Some(a) = d.meta.amplitude {
        curve.set_meta("amplitude", format_number(a));
    }
    if let Some(p) = d.meta.pre_strain {
        curve.set_meta("pre_strain", format_number(p));
    }
    curve
}

/// Curve file for a cyclic simulation.
pub fn time_series_curve(series: &TimeSeries, material: &str) -> CurveFile {
    let lp = &series.program;
    let mode = match lp.mode {
        LoadMode::Shear => "cyclic_shear",
        LoadMode::Uniaxial => "cyclic_uniaxial",
    };
    let reported = match lp.mode {
        LoadMode::Shear => "tau12 (Kirchhoff = Cauchy)",
        LoadMode::Uniaxial => "sigma11 (Cauchy), axial log strain",
    };
    let mut curve = CurveFile::new(&TimeSeries::COLUMNS)
        .with_meta("mode", mode)
        .with_meta("material", material)
        .with_meta("units", "time: s, strain: -, stress: MPa")
        .with_meta(SIGN_KEY, TENSION_POSITIVE)
        .with_meta("stress", reported)
        .with_meta("frequency_Hz", format_number(lp.frequency))
        .with_meta("amplitude", format_number(lp.amplitude))
        .with_meta("pre_strain", format_number(lp.pre_strain))
        .with_meta("cycles", lp.cycles)
        .with_meta("steps_per_cycle", lp.steps_per_cycle);
    curve.rows = series
        .samples
        .iter()
        .map(|s| vec![s.t, s.strain, s.stress, s.branch_a_norm, s.branch_b_norm])
        .collect();
    curve
}

/// Measured and model stress side by side for one dataset. Uniaxial sets carry
/// both projections the fit compares against.
pub fn fitted_curve(d: &Dataset, blocks: &[Vec<f64>], model: &str) -> Result<CurveFile> {
    let n = d.len();
    if blocks.is_empty() || blocks.iter().any(|b| b.len() != n) {
        return Err(Error::Invariant(format!(
            "prediction for '{}' has the wrong shape",
            d.name
        )));
    }
    let mut curve = match d.mode {
        DatasetMode::UniaxialEq => {
            let mut c = CurveFile::new(&[
                "strain_log_axial",
                "strain_log_lateral",
                "stress_MPa",
                "model_s_dev_MPa",
                "model_s_sph_MPa",
            ]);
            let lat = d.lateral.clone().unwrap_or_else(|| vec![0.0; n]);
            let sph = blocks.get(1).unwrap_or(&blocks[0]);
            c.rows = (0..n)
                .map(|i| vec![d.strain[i], lat[i], d.stress[i], blocks[0][i], sph[i]])
                .collect();
            c
        }
        DatasetMode::CyclicShear | DatasetMode::CyclicUniaxial => {
            let mut c = CurveFile::new(&["t_s", "strain", "stress_MPa", "model_MPa"]);
            let t = d.time.clone().unwrap_or_else(|| vec![0.0; n]);
            c.rows = (0..n)
                .map(|i| vec![t[i], d.strain[i], d.stress[i], blocks[0][i]])
                .collect();
            c
        }
        _ => {
            let mut c = CurveFile::new(&["strain", "stress_MPa", "model_MPa"]);
            c.rows = (0..n)
                .map(|i| vec![d.strain[i], d.stress[i], blocks[0][i]])
                .collect();
            c
        }
    };
    curve.set_meta("mode", d.mode.name());
    curve.set_meta("dataset", &d.name);
    curve.set_meta("model", model);
    curve.set_meta(
        "units",
        "strain: log or engineering shear (-), stress: MPa, time: s",
    );
    curve.set_meta(SIGN_KEY, TENSION_POSITIVE);
    Ok(curve)
}

/// Plain CSV table with free-form text cells.
pub fn write_table(columns: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    csv.write_record(columns)?;
    for r in rows {
        csv.write_record(r)?;
    }
    let buf = csv
        .into_inner()
        .map_err(|e| Error::io("<table output>", e.into_error()))?;
    Ok(String::from_utf8(buf).expect("utf-8 table"))
}

/// Parameter surface over (frequency, amplitude). Failed cells keep their
/// coordinates, leave the parameter cells empty and carry the error text.
pub fn grid_surface_csv(cells: &[GridCell]) -> Result<String> {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut r = vec![format_number(c.frequency), format_number(c.amplitude)];
            match &c.fit {
                Some(f) => {
                    let p = &f.params;
                    let rms = f.result.per_dataset.first().map_or(f64::NAN, |d| d.rms_mpa);
                    r.extend([p.mu_a, p.k_a, p.mu_b, rms].map(format_number));
                    r.push(u8::from(f.result.converged).to_string());
                    r.push(if f.result.converged {
                        "ok".into()
                    } else {
                        f.result.stop_reason.clone()
                    });
                }
                None => {
                    r.extend(std::iter::repeat_n(String::new(), 4));
                    r.push("0".into());
                    r.push(c.error.clone().unwrap_or_default());
                }
            }
            r
        })
        .collect();
    write_table(&GridCell::COLUMNS, &rows)
}

/// RMS misfit per model and dataset.
pub fn rms_table_csv(entries: &[(String, DatasetFit)]) -> Result<String> {
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|(model, f)| {
            vec![
                model.clone(),
                f.name.clone(),
                f.mode.name().to_string(),
                f.points.to_string(),
                format_number(f.rms_mpa),
            ]
        })
        .collect();
    write_table(&["model", "dataset", "mode", "points", "rms_MPa"], &rows)
}
