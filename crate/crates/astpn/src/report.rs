//! CMC reports: a per-rank CSV and a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use astpn_core::eval::{aggregate, CmcCurve};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Plain decimal with at least 17 significant digits, so parsing the text
/// gives back the same `f64`.
pub fn decimal(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i64;
    let places = (16 - exp).max(0) as usize;
    format!("{x:.places$}")
}

pub fn csv(curves: &[CmcCurve]) -> AppResult<String> {
    let (mean, std) = aggregate(curves)?;
    let mut out = String::from("rank,mean,std");
    for t in 1..=curves.len() {
        out.push_str(&format!(",trial_{t}"));
    }
    out.push('\n');
    for r in 0..mean.len() {
        out.push_str(&format!("{},{},{}", r + 1, decimal(mean[r]), decimal(std[r])));
        for c in curves {
            out.push(',');
            out.push_str(&decimal(c.ranks[r]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a report CSV back into its numeric rows.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if !header.starts_with("rank,mean,std") {
        return Err(format!("unexpected header `{header}`"));
    }
    let width = header.split(',').count();
    lines
        .map(|l| {
            let row = l
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != width {
                return Err(format!("row `{l}` has {} fields, expected {width}", row.len()));
            }
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub trials: usize,
    pub gallery_size: usize,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank20: f64,
}

#[derive(Debug, Clone)]
pub struct ReportMeta<'a> {
    pub dataset: &'a str,
    pub variant: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub timestamp: u64,
}

pub fn summary(curves: &[CmcCurve], meta: &ReportMeta<'_>) -> AppResult<Summary> {
    let (mean, _) = aggregate(curves)?;
    let at = |r: usize| mean[r.min(mean.len()) - 1];
    Ok(Summary {
        dataset: meta.dataset.to_string(),
        variant: meta.variant.to_string(),
        seed: meta.seed,
        config_hash: meta.config_hash.to_string(),
        trials: curves.len(),
        gallery_size: mean.len(),
        rank1: at(1),
        rank5: at(5),
        rank10: at(10),
        rank20: at(20),
    })
}

/// Writes `cmc_<dataset>_<variant>_<timestamp>.{csv,json}` into `dir`.
pub fn emit_report(curves: &[CmcCurve], dir: &Path, meta: &ReportMeta<'_>) -> AppResult<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let stem = format!("cmc_{}_{}_{}", meta.dataset, meta.variant, meta.timestamp);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, csv(curves)?).map_err(|e| AppError::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(&summary(curves, meta)?).expect("plain struct serialises");
    fs::write(&json_path, json + "\n").map_err(|e| AppError::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Checks the CMC invariants of a parsed report: values in `[0, 1]`,
/// non-decreasing means and trial columns, and full recall at the last rank.
pub fn check_rows(rows: &[Vec<f64>]) -> Result<(), String> {
    if rows.is_empty() {
        return Err("report has no ranks".into());
    }
    for (i, row) in rows.iter().enumerate() {
        if row[0] != (i + 1) as f64 {
            return Err(format!("row {i} has rank {}", row[0]));
        }
        let values = row.iter().skip(1).enumerate().filter(|(j, _)| *j != 1).map(|(_, v)| v);
        if values.clone().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("rank {} has a value outside [0, 1]", i + 1));
        }
    }
    for w in rows.windows(2) {
        for c in std::iter::once(1).chain(3..w[0].len()) {
            if w[1][c] < w[0][c] {
                return Err(format!("column {c} decreases at rank {}", w[1][0]));
            }
        }
    }
    let last = rows.last().expect("non-empty");
    if std::iter::once(1).chain(3..last.len()).any(|c| (last[c] - 1.0).abs() > 1e-12) {
        return Err("curve does not reach 1 at the last rank".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(r: &[f64]) -> CmcCurve {
        CmcCurve {
            ranks: r.to_vec(),
            n_probes: 10,
            trial: 0,
        }
    }

    #[test]
    fn one_trial_three_ranks() {
        let text = csv(&[curve(&[0.5, 0.8, 1.0])]).unwrap();
        let rows = parse_csv(&text).unwrap();
        assert_eq!(text.lines().next().unwrap(), "rank,mean,std,trial_1");
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r[2] == 0.0));
        check_rows(&rows).unwrap();
    }

    #[test]
    fn identical_trials_have_zero_std() {
        let c = curve(&[0.3, 0.7, 1.0]);
        let rows = parse_csv(&csv(&[c.clone(), c]).unwrap()).unwrap();
        assert!(rows.iter().all(|r| r[2] == 0.0));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let a = curve(&[0.1, 2.0 / 3.0, 1.0]);
        let b = curve(&[1.0 / 7.0, 0.7, 1.0]);
        let rows = parse_csv(&csv(&[a.clone(), b.clone()]).unwrap()).unwrap();
        let (mean, std) = aggregate(&[a.clone(), b.clone()]).unwrap();
        for r in 0..3 {
            assert_eq!(rows[r][1], mean[r]);
            assert_eq!(rows[r][2], std[r]);
            assert_eq!(rows[r][3], a.ranks[r]);
            assert_eq!(rows[r][4], b.ranks[r]);
        }
    }

    #[test]
    fn decimal_is_plain_and_exact() {
        for x in [0.1, 1.0 / 3.0, 123456.789, 1e-7, 0.875, 2.5e20, -0.3] {
            let s = decimal(x);
            assert!(!s.contains('e'), "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn summary_clamps_ranks_to_gallery() {
        let meta = ReportMeta {
            dataset: "d",
            variant: "astpn",
            seed: 3,
            config_hash: "h",
            timestamp: 0,
        };
        let s = summary(&[curve(&[0.5, 0.75, 1.0])], &meta).unwrap();
        assert_eq!((s.rank1, s.rank5, s.rank20), (0.5, 1.0, 1.0));
        assert_eq!(s.gallery_size, 3);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(csv(&[]).is_err());
    }

    #[test]
    fn invariant_violations() {
        assert!(check_rows(&[vec![1.0, 0.5, 0.0, 0.5], vec![2.0, 0.4, 0.0, 0.4]]).is_err());
        assert!(check_rows(&[vec![1.0, 0.5, 0.0, 0.5]]).is_err());
    }
}
