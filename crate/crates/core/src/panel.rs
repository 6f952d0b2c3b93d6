//! Panels of block maxima and CSV ingestion.
//!
//! Two CSV schemas are understood:
//!
//! * panel: header `year,<site_id_1>,...,<site_id_k>`, one row per year,
//!   missing sentinel `NA`, `.` as decimal separator;
//! * site metadata: header `site_id,lon,lat,alt_m`, altitude converted to km
//!   on load, lon/lat projected to planar km about the station centroid.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sites::{project_coordinates, SiteSet};

/// Marginal scale of the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginState {
    /// Values on the observation scale (e.g. mm of precipitation).
    Raw,
    /// Values transformed to the unit Frechet scale.
    UnitFrechet,
}

/// An n-years x k-sites matrix of block maxima with a missingness mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMaximaPanel {
    years: Vec<i64>,
    values: Vec<f64>,
    missing: Vec<bool>,
    n_sites: usize,
    margin: MarginState,
}

impl BlockMaximaPanel {
    /// Build a panel from a row-major value matrix. `NaN` entries are treated
    /// as missing in addition to the explicit mask.
    pub fn new(
        years: Vec<i64>,
        values: Vec<f64>,
        mut missing: Vec<bool>,
        n_sites: usize,
        margin: MarginState,
    ) -> Result<Self> {
        let n = years.len();
        if n == 0 || n_sites == 0 {
            return Err(Error::Validation("panel must have at least one year and one site".into()));
        }
        if values.len() != n * n_sites || missing.len() != n * n_sites {
            return Err(Error::Validation(format!(
                "panel shape mismatch: {} years x {} sites but {} values / {} mask entries",
                n,
                n_sites,
                values.len(),
                missing.len()
            )));
        }
        for (v, m) in values.iter().zip(missing.iter_mut()) {
            if v.is_nan() {
                *m = true;
            } else if !v.is_finite() {
                return Err(Error::Validation("panel contains a non-finite value".into()));
            }
        }
        if margin == MarginState::UnitFrechet {
            for (v, m) in values.iter().zip(&missing) {
                if !*m && *v <= 0.0 {
                    return Err(Error::Validation(format!(
                        "unit-Frechet panel contains non-positive value {v}"
                    )));
                }
            }
        }
        Ok(BlockMaximaPanel { years, values, missing, n_sites, margin })
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn margin_state(&self) -> MarginState {
        self.margin
    }

    /// Value at (year row, site column); `None` when missing.
    pub fn value(&self, year: usize, site: usize) -> Option<f64> {
        let idx = year * self.n_sites + site;
        if self.missing[idx] {
            None
        } else {
            Some(self.values[idx])
        }
    }

    pub fn is_missing(&self, year: usize, site: usize) -> bool {
        self.missing[year * self.n_sites + site]
    }

    /// Non-missing values of one site column.
    pub fn column(&self, site: usize) -> Vec<f64> {
        (0..self.n_years()).filter_map(|m| self.value(m, site)).collect()
    }

    /// Year indices where both sites are observed.
    pub fn complete_pairs(&self, i: usize, j: usize) -> Vec<usize> {
        (0..self.n_years())
            .filter(|&m| !self.is_missing(m, i) && !self.is_missing(m, j))
            .collect()
    }

    /// Map every non-missing cell, preserving shape and mask.
    pub fn map_values(
        &self,
        margin: MarginState,
        mut f: impl FnMut(usize, usize, f64) -> f64,
    ) -> Result<Self> {
        let mut values = self.values.clone();
        for m in 0..self.n_years() {
            for s in 0..self.n_sites {
                let idx = m * self.n_sites + s;
                if !self.missing[idx] {
                    values[idx] = f(m, s, self.values[idx]);
                }
            }
        }
        BlockMaximaPanel::new(self.years.clone(), values, self.missing.clone(), self.n_sites, margin)
    }

    /// Serialize to the panel CSV schema. Float formatting uses the shortest
    /// round-trip representation, so `load -> save -> load` is bit-exact.
    pub fn to_csv(&self, site_ids: &[String]) -> Result<String> {
        if site_ids.len() != self.n_sites {
            return Err(Error::Validation(format!(
                "{} site ids for a {}-site panel",
                site_ids.len(),
                self.n_sites
            )));
        }
        let mut out = String::from("year");
        for id in site_ids {
            let _ = write!(out, ",{id}");
        }
        out.push('\n');
        for (m, year) in self.years.iter().enumerate() {
            let _ = write!(out, "{year}");
            for s in 0..self.n_sites {
                match self.value(m, s) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn ingest_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// One row of the site metadata CSV.
struct SiteMetaRow {
    id: String,
    lon: f64,
    lat: f64,
    alt_km: f64,
}

fn read_site_meta(path: &Path) -> Result<Vec<SiteMetaRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ingest_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["site_id", "lon", "lat", "alt_m"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(ingest_err(
            path,
            1,
            format!("expected header 'site_id,lon,lat,alt_m', got '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ingest_err(path, line, e.to_string()))?;
        if record.len() != 4 {
            return Err(ingest_err(path, line, format!("expected 4 fields, got {}", record.len())));
        }
        let parse = |field: usize, name: &str| -> Result<f64> {
            record[field]
                .parse::<f64>()
                .map_err(|_| ingest_err(path, line, format!("non-numeric {name} '{}'", &record[field])))
        };
        rows.push(SiteMetaRow {
            id: record[0].to_string(),
            lon: parse(1, "lon")?,
            lat: parse(2, "lat")?,
            alt_km: parse(3, "alt_m")? / 1000.0,
        });
    }
    if rows.is_empty() {
        return Err(ingest_err(path, 2, "site metadata contains no rows"));
    }
    Ok(rows)
}

/// Load a site metadata CSV into a [`SiteSet`], projecting lon/lat to km
/// about the station centroid.
pub fn load_sites(site_meta_path: impl AsRef<Path>) -> Result<SiteSet> {
    let path = site_meta_path.as_ref();
    let mut rows = read_site_meta(path)?;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    for w in rows.windows(2) {
        if w[0].id == w[1].id {
            return Err(Error::Validation(format!("duplicate site id '{}'", w[0].id)));
        }
    }
    let k = rows.len() as f64;
    let reference = (
        rows.iter().map(|r| r.lon).sum::<f64>() / k,
        rows.iter().map(|r| r.lat).sum::<f64>() / k,
    );
    let lon_lat: Vec<(f64, f64)> = rows.iter().map(|r| (r.lon, r.lat)).collect();
    let projected = project_coordinates(&lon_lat, reference)?;
    SiteSet::new(
        rows.iter().map(|r| r.id.clone()).collect(),
        projected.iter().map(|&(x, y)| vec![x, y]).collect(),
        rows.iter().map(|r| vec![r.alt_km]).collect(),
    )
}

/// Load a block-maxima panel plus its site metadata.
///
/// Rows come back sorted by year and columns by site id; values are on the
/// raw margin scale. Cells equal to `NA` are flagged missing.
pub fn load_panel(
    csv_path: impl AsRef<Path>,
    site_meta_path: impl AsRef<Path>,
) -> Result<(SiteSet, BlockMaximaPanel)> {
    let sites = load_sites(site_meta_path)?;
    let path = csv_path.as_ref();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ingest_err(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || &headers[0] != "year" {
        return Err(ingest_err(path, 1, "first header field must be 'year'"));
    }
    let header_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut sorted_ids = header_ids.clone();
    sorted_ids.sort();
    if sorted_ids != sites.ids() {
        return Err(ingest_err(
            path,
            1,
            format!(
                "panel columns {:?} do not match site metadata ids {:?}",
                sorted_ids,
                sites.ids()
            ),
        ));
    }
    // Position of each metadata site (sorted order) among the panel columns.
    let col_of: Vec<usize> = sites
        .ids()
        .iter()
        .map(|id| header_ids.iter().position(|h| h == id).expect("id checked above"))
        .collect();

    let k = sites.len();
    let mut rows: Vec<(i64, Vec<f64>, Vec<bool>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ingest_err(path, line, e.to_string()))?;
        if record.len() != k + 1 {
            return Err(ingest_err(path, line, format!("expected {} fields, got {}", k + 1, record.len())));
        }
        let year: i64 = record[0]
            .parse()
            .map_err(|_| ingest_err(path, line, format!("non-integer year '{}'", &record[0])))?;
        let mut vals = vec![0.0; k];
        let mut miss = vec![false; k];
        for (s, &col) in col_of.iter().enumerate() {
            let cell = &record[col + 1];
            if cell == "NA" {
                miss[s] = true;
            } else {
                vals[s] = cell
                    .parse::<f64>()
                    .map_err(|_| ingest_err(path, line, format!("non-numeric cell '{cell}'")))?;
            }
        }
        rows.push((year, vals, miss));
    }
    if rows.len() < 2 {
        return Err(Error::Validation(format!(
            "panel has {} year row(s); at least two blocks are required",
            rows.len()
        )));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Validation(format!("duplicate year {}", w[0].0)));
        }
    }

    let years: Vec<i64> = rows.iter().map(|r| r.0).collect();
    let values: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
    let missing: Vec<bool> = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
    let panel = BlockMaximaPanel::new(years, values, missing, k, MarginState::Raw)?;
    Ok((sites, panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const SITES_CSV: &str = "site_id,lon,lat,alt_m\nS2,9.5,50.1,480\nS1,9.0,50.0,371\nS3,10.0,49.8,120\n";

    #[test]
    fn well_formed_panel_loads() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(&dir, "sites.csv", SITES_CSV);
        let panel = write_file(
            &dir,
            "panel.csv",
            "year,S1,S2,S3\n1952,11.5,12.25,9.0\n1951,10.0,20.5,30.125\n",
        );
        let (s, p) = load_panel(&panel, &sites).unwrap();
        assert_eq!(s.ids(), &["S1".to_string(), "S2".into(), "S3".into()]);
        assert_eq!((p.n_years(), p.n_sites()), (2, 3));
        assert_eq!(p.margin_state(), MarginState::Raw);
        // Rows sorted by year.
        assert_eq!(p.years(), &[1951, 1952]);
        assert_eq!(p.value(0, 0), Some(10.0));
        assert_eq!(p.value(1, 1), Some(12.25));
        // Altitude in km.
        assert_eq!(s.covariates(0), &[0.371]);
    }

    #[test]
    fn na_cell_becomes_missing() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(&dir, "sites.csv", SITES_CSV);
        let panel = write_file(
            &dir,
            "panel.csv",
            "year,S1,S2,S3\n1951,10.0,NA,30.0\n1952,11.5,12.2,9.0\n",
        );
        let (_, p) = load_panel(&panel, &sites).unwrap();
        assert!(p.is_missing(0, 1));
        assert_eq!(p.value(0, 1), None);
        assert_eq!(p.complete_pairs(0, 1), vec![1]);
    }

    #[test]
    fn non_numeric_cell_is_ingest_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(&dir, "sites.csv", SITES_CSV);
        let panel = write_file(
            &dir,
            "panel.csv",
            "year,S1,S2,S3\n1951,10.0,20.0,30.0\n1952,oops,12.2,9.0\n",
        );
        match load_panel(&panel, &sites).unwrap_err() {
            Error::Ingest { line, .. } => assert_eq!(line, 3),
            other => panic!("expected IngestError, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_station_coordinates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(
            &dir,
            "sites.csv",
            "site_id,lon,lat,alt_m\nS1,9.0,50.0,371\nS2,9.0,50.0,480\n",
        );
        let panel = write_file(&dir, "panel.csv", "year,S1,S2\n1951,1.0,2.0\n1952,2.0,1.0\n");
        assert!(matches!(load_panel(&panel, &sites).unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(&dir, "sites.csv", SITES_CSV);
        let panel_path = write_file(
            &dir,
            "panel.csv",
            "year,S1,S2,S3\n1951,10.338712874,0.1,30.5\n1952,11.5,NA,0.0078125\n",
        );
        let (s, p) = load_panel(&panel_path, &sites).unwrap();
        let rewritten = write_file(&dir, "panel2.csv", &p.to_csv(s.ids()).unwrap());
        let (_, p2) = load_panel(&rewritten, &sites).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn unit_frechet_panel_rejects_nonpositive() {
        let err = BlockMaximaPanel::new(
            vec![1, 2],
            vec![1.0, -0.5, 2.0, 3.0],
            vec![false; 4],
            2,
            MarginState::UnitFrechet,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn single_year_panel_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write_file(&dir, "sites.csv", SITES_CSV);
        let panel = write_file(&dir, "panel.csv", "year,S1,S2,S3\n1951,1.0,2.0,3.0\n");
        assert!(load_panel(&panel, &sites).is_err());
    }
}
