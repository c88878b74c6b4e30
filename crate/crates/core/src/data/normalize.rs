use log::warn;
use serde::{Deserialize, Serialize};

use super::{BanditDataset, ColumnKind, DataError};

/// Affine map `z = (x - offset) / scale` for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub offset: f64,
    pub scale: f64,
    /// True when the fitted column was constant and the scale defaulted to 1.
    pub constant: bool,
}

impl ColumnScale {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.offset
    }

    /// Maps a difference of normalized values back to original units.
    pub fn invert_delta(&self, dz: f64) -> f64 {
        dz * self.scale
    }
}

/// Min-max scaling of continuous covariates and the reward, fitted on pooled training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub columns: Vec<ColumnScale>,
}

impl Normalization {
    /// Fits per-variable min-max maps over the union of `datasets`.
    pub fn fit(datasets: &[&BanditDataset]) -> Result<Self, DataError> {
        let first = datasets.first().ok_or_else(|| DataError::Invalid("no datasets to normalize".into()))?;
        if datasets.iter().any(|d| !d.same_schema(first)) {
            return Err(DataError::SchemaMismatch("normalization inputs differ in schema".into()));
        }
        if datasets.iter().all(|d| d.is_empty()) {
            return Err(DataError::Invalid("no rows to normalize".into()));
        }
        let mut names: Vec<String> =
            first.columns.iter().filter(|c| c.kind == ColumnKind::Continuous).map(|c| c.name.clone()).collect();
        names.push(first.reward_name.clone());
        let columns = names
            .into_iter()
            .map(|name| {
                let (lo, hi) = datasets
                    .iter()
                    .flat_map(|d| d.variable(&name).expect("schema checked").iter().copied())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                if hi > lo {
                    ColumnScale { name, offset: lo, scale: hi - lo, constant: false }
                } else {
                    warn!("column {name} is constant; leaving it unscaled");
                    ColumnScale { name, offset: lo, scale: 1.0, constant: true }
                }
            })
            .collect();
        Ok(Self { columns })
    }

    pub fn get(&self, name: &str) -> Option<&ColumnScale> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Returns a scaled copy of `ds` carrying this record.
    pub fn apply(&self, ds: &BanditDataset) -> Result<BanditDataset, DataError> {
        if ds.normalization.is_some() {
            return Err(DataError::Invalid(format!("dataset {} is already normalized", ds.env)));
        }
        let mut out = ds.clone();
        for cs in &self.columns {
            let col: &mut Vec<f64> = if cs.name == ds.reward_name {
                &mut out.rewards
            } else {
                let j = ds.column_index(&cs.name).ok_or_else(|| DataError::MissingColumn(cs.name.clone()))?;
                &mut out.values[j]
            };
            for v in col.iter_mut() {
                *v = cs.apply(*v);
            }
        }
        out.normalization = Some(self.clone());
        Ok(out)
    }

    /// Maps normalized values of variable `name` back to original units.
    pub fn denormalize(&self, name: &str, values: &[f64]) -> Result<Vec<f64>, DataError> {
        let cs = self.get(name).ok_or_else(|| DataError::MissingColumn(name.into()))?;
        Ok(values.iter().map(|&z| cs.invert(z)).collect())
    }
}

/// Fits a record on `train` and applies it to every dataset in `train` and `others`.
pub fn normalize_all(
    train: &[BanditDataset],
    others: &[BanditDataset],
) -> Result<(Vec<BanditDataset>, Vec<BanditDataset>, Normalization), DataError> {
    let refs: Vec<&BanditDataset> = train.iter().collect();
    let rec = Normalization::fit(&refs)?;
    let tr = train.iter().map(|d| rec.apply(d)).collect::<Result<_, _>>()?;
    let ot = others.iter().map(|d| rec.apply(d)).collect::<Result<_, _>>()?;
    Ok((tr, ot, rec))
}
