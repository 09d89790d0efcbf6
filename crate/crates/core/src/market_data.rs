//! Return histories, sample statistics and rolling estimation/holding windows.
//!
//! Returns are simple per-period returns (`0.01` = 1%). Files use a wide CSV
//! layout: a header `date,<asset1>,<asset2>,...` followed by one row per
//! period. Missing or non-numeric cells are rejected, never imputed.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data file not found: {0}")]
    MissingFile(String),
    #[error("malformed cell at data row {0}, column {1}")]
    MalformedCell(usize, usize),
    #[error("duplicate asset id `{0}`")]
    DuplicateAssetId(String),
    #[error("data contains no periods")]
    Empty,
    #[error("data contains no asset columns")]
    NoAssets,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("non-finite return at data row {0}, column {1}")]
    NonFinite(usize, usize),
    #[error("need at least 2 samples for a covariance, got {0}")]
    TooFewSamples(usize),
    #[error("window plan needs {needed} periods but only {available} are available")]
    PlanTooLong { needed: usize, available: usize },
    #[error("invalid window plan: {0}")]
    InvalidPlan(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// S×N matrix of historical return samples. Row `i` is scenario ξ̂ᵢ and the
/// empirical distribution puts mass 1/S on every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    returns: DMatrix<f64>,
    asset_ids: Vec<String>,
    period_ids: Vec<String>,
}

impl ScenarioSet {
    pub fn new(
        returns: DMatrix<f64>,
        asset_ids: Vec<String>,
        period_ids: Vec<String>,
    ) -> Result<Self, DataError> {
        if returns.nrows() == 0 {
            return Err(DataError::Empty);
        }
        if returns.ncols() == 0 {
            return Err(DataError::NoAssets);
        }
        if asset_ids.len() != returns.ncols() || period_ids.len() != returns.nrows() {
            return Err(DataError::DimensionMismatch(format!(
                "{}x{} matrix with {} asset ids and {} period ids",
                returns.nrows(),
                returns.ncols(),
                asset_ids.len(),
                period_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateAssetId(id.clone()));
            }
        }
        for i in 0..returns.nrows() {
            for j in 0..returns.ncols() {
                if !returns[(i, j)].is_finite() {
                    return Err(DataError::NonFinite(i + 1, j + 1));
                }
            }
        }
        Ok(Self {
            returns,
            asset_ids,
            period_ids,
        })
    }

    /// Builds a set from row vectors with generated ids (`A1..`, `1..`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let s = rows.len();
        if s == 0 {
            return Err(DataError::Empty);
        }
        let n = rows[0].len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(DataError::RaggedRow {
                row: i + 1,
                found: r.len(),
                expected: n,
            });
        }
        let returns = DMatrix::from_fn(s, n, |i, j| rows[i][j]);
        let assets = (1..=n).map(|j| format!("A{j}")).collect();
        let periods = (1..=s).map(|i| i.to_string()).collect();
        Self::new(returns, assets, periods)
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    /// Number of scenarios S.
    pub fn n_scenarios(&self) -> usize {
        self.returns.nrows()
    }

    /// Number of assets N.
    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn scenario(&self, i: usize) -> Vec<f64> {
        self.returns.row(i).iter().copied().collect()
    }

    /// Portfolio return ξ̂ᵢᵀx for every scenario.
    pub fn portfolio_returns(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_assets());
        let xv = DVector::from_column_slice(x);
        (&self.returns * xv).iter().copied().collect()
    }

    pub fn mean_returns(&self) -> Vec<f64> {
        let s = self.n_scenarios() as f64;
        self.returns.row_sum().iter().map(|v| v / s).collect()
    }

    /// Contiguous rows `[start, start + len)`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self, DataError> {
        if len == 0 || start + len > self.n_scenarios() {
            return Err(DataError::PlanTooLong {
                needed: start + len,
                available: self.n_scenarios(),
            });
        }
        Ok(Self {
            returns: self.returns.rows(start, len).into_owned(),
            asset_ids: self.asset_ids.clone(),
            period_ids: self.period_ids[start..start + len].to_vec(),
        })
    }

    /// Keeps only the listed asset columns, in the given order.
    pub fn select_assets(&self, columns: &[usize]) -> Self {
        Self {
            returns: self.returns.select_columns(columns),
            asset_ids: columns.iter().map(|&j| self.asset_ids[j].clone()).collect(),
            period_ids: self.period_ids.clone(),
        }
    }

    /// Rows reordered by `order` (a permutation of `0..S`).
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        Self {
            returns: self.returns.select_rows(order),
            asset_ids: self.asset_ids.clone(),
            period_ids: order.iter().map(|&i| self.period_ids[i].clone()).collect(),
        }
    }
}

/// Sample covariance Σ̂, symmetric and positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    sigma: DMatrix<f64>,
}

impl CovarianceEstimate {
    /// Symmetrizes `m` and clips negative eigenvalues to zero.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, DataError> {
        if m.nrows() != m.ncols() {
            return Err(DataError::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
            return Ok(Self { sigma: sym });
        }
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        Ok(Self {
            sigma: (&rebuilt + rebuilt.transpose()) * 0.5,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Σ̂′: the covariance of the listed assets.
    pub fn restrict(&self, support: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(support.len(), support.len(), |a, b| {
            self.sigma[(support[a], support[b])]
        })
    }

    /// xᵀΣ̂x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        (xv.transpose() * &self.sigma * &xv)[(0, 0)]
    }
}

/// Unbiased sample covariance (divisor S−1).
pub fn sample_covariance(s: &ScenarioSet) -> Result<CovarianceEstimate, DataError> {
    let rows = s.n_scenarios();
    if rows < 2 {
        return Err(DataError::TooFewSamples(rows));
    }
    let mean = DVector::from_vec(s.mean_returns());
    let mut centered = s.returns.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (rows as f64 - 1.0);
    CovarianceEstimate::from_matrix(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub estimation_length: usize,
    pub holding_length: usize,
    pub step: usize,
}

impl WindowPlan {
    pub fn new(
        estimation_length: usize,
        holding_length: usize,
        step: usize,
    ) -> Result<Self, DataError> {
        let plan = Self {
            estimation_length,
            holding_length,
            step,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.estimation_length < 2 {
            return Err(DataError::InvalidPlan(
                "estimation length must be at least 2".into(),
            ));
        }
        if self.holding_length == 0 || self.step == 0 {
            return Err(DataError::InvalidPlan(
                "holding length and step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One (estimation, holding) pair cut from a longer history.
#[derive(Debug, Clone)]
pub struct Window {
    pub offset: usize,
    pub estimation: ScenarioSet,
    pub holding: ScenarioSet,
}

/// Windows start at offsets `0, step, 2·step, …`; the last partial window is dropped.
pub fn rolling_windows(s: &ScenarioSet, plan: &WindowPlan) -> Result<Vec<Window>, DataError> {
    plan.validate()?;
    let span = plan.estimation_length + plan.holding_length;
    if span > s.n_scenarios() {
        return Err(DataError::PlanTooLong {
            needed: span,
            available: s.n_scenarios(),
        });
    }
    (0..)
        .map(|w| w * plan.step)
        .take_while(|&o| o + span <= s.n_scenarios())
        .map(|offset| {
            Ok(Window {
                offset,
                estimation: s.slice_rows(offset, plan.estimation_length)?,
                holding: s.slice_rows(offset + plan.estimation_length, plan.holding_length)?,
            })
        })
        .collect()
}

/// Reads a wide CSV of returns from any reader.
pub fn read_returns<R: Read>(reader: R) -> Result<ScenarioSet, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(DataError::NoAssets);
    }
    let asset_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n = asset_ids.len();
    let mut values = Vec::new();
    let mut period_ids = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != n + 1 {
            return Err(DataError::RaggedRow {
                row,
                found: record.len(),
                expected: n + 1,
            });
        }
        period_ids.push(record[0].to_owned());
        for col in 1..=n {
            let v: f64 = record[col]
                .parse()
                .map_err(|_| DataError::MalformedCell(row, col))?;
            if !v.is_finite() {
                return Err(DataError::MalformedCell(row, col));
            }
            values.push(v);
        }
    }
    if period_ids.is_empty() {
        return Err(DataError::Empty);
    }
    let returns = DMatrix::from_row_slice(period_ids.len(), n, &values);
    ScenarioSet::new(returns, asset_ids, period_ids)
}

pub fn load_returns(path: impl AsRef<Path>) -> Result<ScenarioSet, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::MissingFile(path.display().to_string()),
        _ => DataError::Io(e),
    })?;
    read_returns(file)
}

/// Writes the wide CSV layout. Values use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_returns<W: Write>(s: &ScenarioSet, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_owned()];
    header.extend(s.asset_ids.iter().cloned());
    wtr.write_record(&header)?;
    for (i, period) in s.period_ids.iter().enumerate() {
        let mut rec = vec![period.clone()];
        rec.extend(s.returns.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_returns(s: &ScenarioSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_returns(s, File::create(path)?)
}

/// Reads a single-column series file `date,<name>` (benchmark returns).
pub fn read_series<R: Read>(reader: R) -> Result<(Vec<String>, Vec<f64>), DataError> {
    let set = read_returns(reader)?;
    if set.n_assets() != 1 {
        return Err(DataError::DimensionMismatch(format!(
            "series file must have exactly one value column, found {}",
            set.n_assets()
        )));
    }
    let values = set.returns.column(0).iter().copied().collect();
    Ok((set.period_ids, values))
}

/// Reads market capitalizations from `asset,cap` rows and returns them in
/// the order of `asset_ids`. Every asset must appear exactly once.
pub fn read_caps<R: Read>(reader: R, asset_ids: &[String]) -> Result<Vec<f64>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut caps: Vec<Option<f64>> = vec![None; asset_ids.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != 2 {
            return Err(DataError::RaggedRow {
                row,
                found: record.len(),
                expected: 2,
            });
        }
        let j = asset_ids
            .iter()
            .position(|id| id == &record[0])
            .ok_or_else(|| {
                DataError::DimensionMismatch(format!(
                    "cap given for unknown asset `{}`",
                    &record[0]
                ))
            })?;
        let v: f64 = record[1]
            .parse()
            .map_err(|_| DataError::MalformedCell(row, 1))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(DataError::MalformedCell(row, 1));
        }
        if caps[j].replace(v).is_some() {
            return Err(DataError::DuplicateAssetId(record[0].to_owned()));
        }
    }
    caps.into_iter()
        .zip(asset_ids)
        .map(|(c, id)| {
            c.ok_or_else(|| DataError::DimensionMismatch(format!("no cap for asset `{id}`")))
        })
        .collect()
}

pub fn write_caps<W: Write>(
    asset_ids: &[String],
    caps: &[f64],
    writer: W,
) -> Result<(), DataError> {
    if asset_ids.len() != caps.len() {
        return Err(DataError::DimensionMismatch(format!(
            "{} ids for {} caps",
            asset_ids.len(),
            caps.len()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["asset", "cap"])?;
    for (id, c) in asset_ids.iter().zip(caps) {
        wtr.write_record([id.clone(), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a `date,<name>` series file.
pub fn write_series<W: Write>(
    name: &str,
    labels: &[String],
    values: &[f64],
    writer: W,
) -> Result<(), DataError> {
    let m = DMatrix::from_column_slice(values.len(), 1, values);
    write_returns(
        &ScenarioSet::new(m, vec![name.to_owned()], labels.to_vec())?,
        writer,
    )
}
