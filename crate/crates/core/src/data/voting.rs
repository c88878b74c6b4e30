//! Loader for the get-out-the-vote field experiment.
//!
//! Expected header (extra columns are ignored):
//! `yob, sex, hh_size, p2000, p2002, p2004, g2000, g2002, city, treatment, p2006`.
//!
//! Year of birth is binned into five categories with edges 1943, 1952, 1959,
//! 1966 (each bin closed on the left), household size is capped at 4, and the
//! reward is turnout minus a per-action and a per-city mailing cost. Each
//! listed city becomes its own environment.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{BanditDataset, Column, ColumnKind, DataError};

pub const NUM_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["control", "civic duty", "hawthorne", "self", "neighbors"];
pub const YOB_EDGES: [f64; 4] = [1943.0, 1952.0, 1959.0, 1966.0];
pub const HH_SIZE_CAP: f64 = 4.0;

const REQUIRED: [&str; 11] =
    ["yob", "sex", "hh_size", "p2000", "p2002", "p2004", "g2000", "g2002", "city", "treatment", "p2006"];
const BINARY_COVARIATES: [&str; 5] = ["p2000", "p2002", "p2004", "g2000", "g2002"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingConfig {
    /// Mailing cost per action index; the control action is never charged.
    pub action_costs: Vec<f64>,
    /// Training cities and their per-letter cost.
    pub train_cities: BTreeMap<u32, f64>,
    /// Held-out cities and their per-letter cost.
    pub test_cities: BTreeMap<u32, f64>,
    pub logging_policy: Vec<f64>,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            action_costs: vec![0.0, 0.0, 0.01, 0.02, 0.03],
            train_cities: [(1, 0.01), (2, 0.02), (3, 0.03), (4, 0.04), (14, 0.05)].into_iter().collect(),
            test_cities: [(5, 0.06), (6, 0.07), (13, 0.08), (15, 0.09), (8, 0.10)].into_iter().collect(),
            logging_policy: vec![5.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0],
        }
    }
}

/// Per-city environments plus skip counts.
#[derive(Debug, Clone)]
pub struct VotingData {
    pub train: Vec<BanditDataset>,
    pub test: Vec<BanditDataset>,
    pub rows_read: usize,
    /// Rows with an unparseable field.
    pub malformed: usize,
    /// Rows from cities in neither the training nor the test list.
    pub unlisted_city: usize,
}

/// Category index of a birth year.
pub fn yob_bin(yob: f64) -> usize {
    YOB_EDGES.iter().filter(|&&e| yob >= e).count()
}

pub fn cap_household(size: f64) -> f64 {
    size.min(HH_SIZE_CAP)
}

/// Turnout minus mailing costs; the control action (index 0) costs nothing.
pub fn reward(voted: f64, action: usize, city_cost: f64, cfg: &VotingConfig) -> f64 {
    if action == 0 {
        voted
    } else {
        voted - cfg.action_costs[action] - city_cost
    }
}

pub fn schema() -> Vec<Column> {
    let mut cols = vec![
        Column::new("yob", ColumnKind::Categorical(YOB_EDGES.len() + 1)),
        Column::new("sex", ColumnKind::Binary),
        Column::new("hh_size", ColumnKind::Continuous),
    ];
    cols.extend(BINARY_COVARIATES.iter().map(|n| Column::new(*n, ColumnKind::Binary)));
    cols
}

fn parse_binary(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "yes" | "y" | "true" => Some(1.0),
        "0" | "0.0" | "no" | "n" | "false" => Some(0.0),
        _ => None,
    }
}

fn parse_sex(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "male" | "m" => Some(0.0),
        "female" | "f" => Some(1.0),
        other => parse_binary(other),
    }
}

/// Accepts treatment names or the 1-based action numbers 1..=5.
fn parse_treatment(s: &str) -> Option<usize> {
    let t = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
    if let Some(i) = ACTION_NAMES.iter().position(|&n| n == t) {
        return Some(i);
    }
    match t.parse::<usize>() {
        Ok(k) if (1..=NUM_ACTIONS).contains(&k) => Some(k - 1),
        _ => None,
    }
}

fn parse_city(s: &str) -> Result<u32, DataError> {
    let t = s.trim().to_ascii_lowercase();
    let digits = t.strip_prefix("city").map(str::trim).unwrap_or(&t);
    digits.parse::<u32>().map_err(|_| DataError::UnknownCity(s.to_string()))
}

pub fn load_voting(path: &Path, cfg: &VotingConfig) -> Result<VotingData, DataError> {
    parse_voting(std::fs::File::open(path)?, cfg)
}

pub fn parse_voting<R: Read>(reader: R, cfg: &VotingConfig) -> Result<VotingData, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = BTreeMap::new();
    for name in REQUIRED {
        let i = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        idx.insert(name, i);
    }
    let mut envs: BTreeMap<u32, BanditDataset> = BTreeMap::new();
    let mut out = VotingData { train: Vec::new(), test: Vec::new(), rows_read: 0, malformed: 0, unlisted_city: 0 };

    for rec in rdr.records() {
        out.rows_read += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warn!("skipping unreadable row {}: {e}", out.rows_read);
                out.malformed += 1;
                continue;
            }
        };
        let field = |name: &str| rec.get(idx[name]).unwrap_or("");
        let Some(city_field) = rec.get(idx["city"]) else {
            out.malformed += 1;
            continue;
        };
        let city = parse_city(city_field)?;
        let city_cost = match cfg.train_cities.get(&city).or_else(|| cfg.test_cities.get(&city)) {
            Some(&c) => c,
            None => {
                out.unlisted_city += 1;
                continue;
            }
        };
        let parsed = (|| {
            let yob = field("yob").parse::<f64>().ok().filter(|v| v.is_finite())?;
            let sex = parse_sex(field("sex"))?;
            let hh = field("hh_size").parse::<f64>().ok().filter(|v| *v >= 1.0)?;
            let mut x = vec![yob_bin(yob) as f64, sex, cap_household(hh)];
            for b in BINARY_COVARIATES {
                x.push(parse_binary(field(b))?);
            }
            let action = parse_treatment(field("treatment"))?;
            let voted = parse_binary(field("p2006"))?;
            Some((x, action, voted))
        })();
        let Some((x, action, voted)) = parsed else {
            warn!("skipping malformed row {}", out.rows_read);
            out.malformed += 1;
            continue;
        };
        let ds = envs.entry(city).or_insert_with(|| {
            BanditDataset::new(format!("city{city}"), schema(), "Y", NUM_ACTIONS, cfg.logging_policy.clone())
        });
        ds.push_row(&x, action, reward(voted, action, city_cost, cfg));
    }

    for (city, ds) in envs {
        if cfg.train_cities.contains_key(&city) {
            out.train.push(ds);
        } else {
            out.test.push(ds);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn birth_year_bins() {
        assert_eq!(yob_bin(1930.0), 0);
        assert_eq!(yob_bin(1943.0), 1);
        assert_eq!(yob_bin(1950.0), 1);
        assert_eq!(yob_bin(1952.0), 2);
        assert_eq!(yob_bin(1965.0), 3);
        assert_eq!(yob_bin(1966.0), 4);
        assert_eq!(yob_bin(1985.0), 4);
    }

    #[test]
    fn household_cap() {
        assert_eq!(cap_household(7.0), 4.0);
        assert_eq!(cap_household(2.0), 2.0);
    }

    #[test]
    fn monitored_letter_in_first_city() {
        let cfg = VotingConfig::default();
        let r = reward(1.0, 2, cfg.train_cities[&1], &cfg);
        assert!((r - 0.98).abs() < 1e-12);
        assert_eq!(reward(1.0, 0, 0.05, &cfg), 1.0);
        assert!((reward(0.0, 1, 0.02, &cfg) + 0.02).abs() < 1e-12);
    }

    #[test]
    fn parses_rows_and_counts_skips() {
        let text = "\
yob,sex,hh_size,p2000,p2002,p2004,g2000,g2002,city,treatment,p2006,extra
1950,male,7,yes,no,no,yes,yes,1,Hawthorne,yes,z
1970,1,2,0,0,1,1,0,City 5,Control,0,z
1940,female,1,no,no,no,no,no,2,Neighbors,no,z
1960,female,x,no,no,no,no,no,2,Neighbors,no,z
1960,female,3,no,no,no,no,no,99,Self,no,z
";
        let data = parse_voting(text.as_bytes(), &VotingConfig::default()).unwrap();
        assert_eq!(data.rows_read, 5);
        assert_eq!(data.malformed, 1);
        assert_eq!(data.unlisted_city, 1);
        let total: usize = data.train.iter().chain(&data.test).map(|d| d.len()).sum();
        assert_eq!(total, data.rows_read - data.malformed - data.unlisted_city);
        let c1 = &data.train[0];
        assert_eq!(c1.env, "city1");
        assert_eq!(c1.row(0), vec![1.0, 0.0, 4.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(c1.actions[0], 2);
        assert!((c1.rewards[0] - 0.98).abs() < 1e-12);
        assert_eq!(data.test[0].env, "city5");
        assert_eq!(data.test[0].rewards[0], 0.0);
        let c2 = &data.train[1];
        assert!((c2.rewards[0] - (0.0 - 0.03 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn missing_column_and_bad_city_are_errors() {
        let text = "yob,sex\n1950,1\n";
        assert!(matches!(parse_voting(text.as_bytes(), &VotingConfig::default()), Err(DataError::MissingColumn(_))));
        let text = "yob,sex,hh_size,p2000,p2002,p2004,g2000,g2002,city,treatment,p2006\n\
                    1950,1,2,1,1,1,1,1,Springfield,Control,1\n";
        assert!(matches!(parse_voting(text.as_bytes(), &VotingConfig::default()), Err(DataError::UnknownCity(_))));
    }

    #[test]
    fn treatment_spellings() {
        assert_eq!(parse_treatment("Civic Duty"), Some(1));
        assert_eq!(parse_treatment("civic_duty"), Some(1));
        assert_eq!(parse_treatment("3"), Some(2));
        assert_eq!(parse_treatment("0"), None);
        assert_eq!(parse_treatment("letter"), None);
    }
}
