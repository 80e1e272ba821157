//! One-way repeated-measures ANOVA with subject blocking, Bonferroni paired
//! comparisons and the ICC of two variance components.

use serde::{Deserialize, Serialize};

use super::dist::{f_sf, student_t_two_sided};
use super::StatsError;
use crate::dataset::ConditionDataset;

/// Complete subjects × conditions table of per-subject means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmTable {
    pub subjects: Vec<String>,
    pub conditions: Vec<String>,
    /// Row-major, `values[i][j]` for subject `i` and condition `j`.
    pub values: Vec<Vec<f64>>,
}

impl RmTable {
    pub fn new(subjects: Vec<String>, conditions: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if values.len() != subjects.len() || values.iter().any(|r| r.len() != conditions.len()) {
            return Err(StatsError::IncompleteDesign("table shape does not match its labels".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StatsError::IncompleteDesign("table holds a non-finite cell".into()));
        }
        Ok(Self { subjects, conditions, values })
    }

    /// Unlabelled table; subjects and conditions are numbered from 0.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let k = values.first().map_or(0, Vec::len);
        Self::new((0..values.len()).map(|i| i.to_string()).collect(), (0..k).map(|j| j.to_string()).collect(), values)
    }

    /// Subject means for each condition key; every subject must have every
    /// condition.
    pub fn from_dataset(data: &ConditionDataset, condition_keys: &[String]) -> Result<Self, StatsError> {
        let subjects = data.subjects();
        let columns: Vec<_> = condition_keys.iter().map(|k| data.subject_means(k)).collect();
        let mut values = vec![Vec::with_capacity(condition_keys.len()); subjects.len()];
        for (key, col) in condition_keys.iter().zip(&columns) {
            for (row, s) in values.iter_mut().zip(&subjects) {
                let v = col.get(s).ok_or_else(|| {
                    StatsError::IncompleteDesign(format!("subject {s} has no trials in condition {key}"))
                })?;
                row.push(*v);
            }
        }
        Self::new(subjects, condition_keys.to_vec(), values)
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_subjects() as f64;
        (0..self.n_conditions()).map(|j| self.values.iter().map(|r| r[j]).sum::<f64>() / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub first: String,
    pub second: String,
    /// Mean of `first − second` across subjects.
    pub mean_difference: f64,
    pub t: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    /// Every subject has the same difference, so the t statistic is undefined.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_effect: usize,
    pub df_error: usize,
    pub p_value: f64,
    pub ss_condition: f64,
    pub ss_subject: f64,
    pub ss_error: f64,
    pub conditions: Vec<String>,
    pub condition_means: Vec<f64>,
    /// All condition pairs, Bonferroni-adjusted over the full set.
    pub pairwise: Vec<PairwiseComparison>,
}

fn check_shape(table: &RmTable) -> Result<(), StatsError> {
    if table.n_subjects() < 2 || table.n_conditions() < 2 {
        return Err(StatsError::IncompleteDesign(format!(
            "need >= 2 subjects and >= 2 conditions, got {} x {}",
            table.n_subjects(),
            table.n_conditions()
        )));
    }
    Ok(())
}

/// `F = MS_condition / MS_error` with subjects as blocks. The error sum of
/// squares is accumulated from the double-centered residuals.
pub fn rm_anova(table: &RmTable) -> Result<AnovaResult, StatsError> {
    check_shape(table)?;
    let (n, k) = (table.n_subjects(), table.n_conditions());
    let col = table.column_means();
    let row: Vec<f64> = table.values.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let grand = col.iter().sum::<f64>() / k as f64;
    // identical column means give exactly zero, not rounding residue
    let ss_condition = if col.iter().all(|c| *c == col[0]) {
        0.0
    } else {
        n as f64 * col.iter().map(|c| (c - grand).powi(2)).sum::<f64>()
    };
    let ss_subject = k as f64 * row.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ss_error: f64 = table
        .values
        .iter()
        .zip(&row)
        .flat_map(|(r, ri)| r.iter().zip(&col).map(move |(y, cj)| (y - ri - cj + grand).powi(2)))
        .sum();
    let (df_effect, df_error) = (k - 1, (k - 1) * (n - 1));
    let (f, p_value) = if ss_condition == 0.0 {
        (0.0, 1.0)
    } else if ss_error == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_condition / df_effect as f64) / (ss_error / df_error as f64);
        (f, f_sf(f, df_effect as f64, df_error as f64))
    };
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    Ok(AnovaResult {
        f,
        df_effect,
        df_error,
        p_value,
        ss_condition,
        ss_subject,
        ss_error,
        conditions: table.conditions.clone(),
        condition_means: col,
        pairwise: bonferroni_pairwise(table, &pairs)?,
    })
}

/// Paired two-sided t-tests with `adjusted = min(1, raw · pairs.len())`.
/// A zero-variance difference gets p = 1 when the differences are all zero
/// and p = 0 otherwise.
pub fn bonferroni_pairwise(table: &RmTable, pairs: &[(usize, usize)]) -> Result<Vec<PairwiseComparison>, StatsError> {
    check_shape(table)?;
    let k = table.n_conditions();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= k || b >= k || a == b) {
        return Err(StatsError::Argument(format!("invalid condition pair ({a}, {b}) for {k} conditions")));
    }
    let n = table.n_subjects() as f64;
    let m = pairs.len() as f64;
    Ok(pairs
        .iter()
        .map(|&(a, b)| {
            let d: Vec<f64> = table.values.iter().map(|r| r[a] - r[b]).collect();
            let mean = d.iter().sum::<f64>() / n;
            let zero_variance = d.iter().all(|x| *x == d[0]);
            let (t, raw_p) = if zero_variance {
                if mean == 0.0 {
                    (0.0, 1.0)
                } else {
                    (mean.signum() * f64::INFINITY, 0.0)
                }
            } else {
                let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let t = mean / (var / n).sqrt();
                (t, student_t_two_sided(t, n - 1.0))
            };
            PairwiseComparison {
                first: table.conditions[a].clone(),
                second: table.conditions[b].clone(),
                mean_difference: mean,
                t,
                raw_p,
                adjusted_p: (raw_p * m).min(1.0),
                zero_variance,
            }
        })
        .collect())
}

pub fn icc_from_variances(var_between: f64, var_within: f64) -> Result<f64, StatsError> {
    if !(var_between >= 0.0 && var_within >= 0.0) || !var_between.is_finite() || !var_within.is_finite() {
        return Err(StatsError::Argument(format!(
            "variances must be finite and >= 0, got ({var_between}, {var_within})"
        )));
    }
    if var_between == 0.0 && var_within == 0.0 {
        return Err(StatsError::UndefinedIcc);
    }
    Ok(var_between / (var_between + var_within))
}
