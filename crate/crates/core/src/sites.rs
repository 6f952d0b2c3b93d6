//! Station locations and per-site covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth radius in km used by the local projection.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A set of sites: planar coordinates in km plus an aligned covariate vector
/// per site (altitude in km in all shipped models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    ids: Vec<String>,
    coords: Vec<Vec<f64>>,
    covariates: Vec<Vec<f64>>,
}

/// Borrowed view of a single site, as consumed by dependence kernels.
#[derive(Debug, Clone, Copy)]
pub struct SitePoint<'a> {
    pub coords: &'a [f64],
    pub covariates: &'a [f64],
}

impl SiteSet {
    /// Build a site set, enforcing the shape and distinctness invariants.
    ///
    /// Pairwise fitting divides by site-pair density terms that degenerate at
    /// zero separation, so two sites with identical coordinates are rejected.
    pub fn new(
        ids: Vec<String>,
        coords: Vec<Vec<f64>>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = coords.len();
        if k == 0 {
            return Err(Error::Validation("site set must contain at least one site".into()));
        }
        if ids.len() != k || covariates.len() != k {
            return Err(Error::Validation(format!(
                "ids ({}), coords ({}) and covariates ({}) must have equal length",
                ids.len(),
                k,
                covariates.len()
            )));
        }
        let dim = coords[0].len();
        if dim == 0 {
            return Err(Error::Validation("coordinates must have dimension >= 1".into()));
        }
        let p = covariates[0].len();
        for (i, c) in coords.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::Validation(format!(
                    "site '{}' has coordinate dimension {} != {}",
                    ids[i],
                    c.len(),
                    dim
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("site '{}' has non-finite coordinates", ids[i])));
            }
        }
        for (i, c) in covariates.iter().enumerate() {
            if c.len() != p {
                return Err(Error::Validation(format!(
                    "site '{}' has covariate dimension {} != {}",
                    ids[i],
                    c.len(),
                    p
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("site '{}' has non-finite covariates", ids[i])));
            }
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if coords[i] == coords[j] {
                    return Err(Error::Validation(format!(
                        "sites '{}' and '{}' share identical coordinates",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        Ok(SiteSet { ids, coords, covariates })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Spatial dimension of the coordinates.
    pub fn dim(&self) -> usize {
        self.coords[0].len()
    }

    /// Number of covariates per site.
    pub fn n_covariates(&self) -> usize {
        self.covariates[0].len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.covariates[i]
    }

    pub fn point(&self, i: usize) -> SitePoint<'_> {
        SitePoint {
            coords: &self.coords[i],
            covariates: &self.covariates[i],
        }
    }

    /// Euclidean distance between two sites, in km.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.coords[i]
            .iter()
            .zip(&self.coords[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Project (lon, lat) degree pairs onto a local plane in km.
///
/// Equirectangular projection about `reference`: x = R cos(lat_ref) Δlon,
/// y = R Δlat with angles in radians and R the Earth radius in km. Faithful
/// at the few-hundred-km scale of the study regions.
pub fn project_coordinates(
    lon_lat: &[(f64, f64)],
    reference: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    let (lon_ref, lat_ref) = reference;
    if !lon_ref.is_finite() || !lat_ref.is_finite() {
        return Err(Error::Projection("non-finite reference point".into()));
    }
    if lat_ref.abs() > 89.0 {
        return Err(Error::Projection(format!(
            "reference latitude {lat_ref} too close to a pole (|lat| > 89 deg)"
        )));
    }
    let scale_x = EARTH_RADIUS_KM * lat_ref.to_radians().cos();
    lon_lat
        .iter()
        .map(|&(lon, lat)| {
            if !(lat > -90.0 && lat < 90.0) {
                return Err(Error::Projection(format!("latitude {lat} outside (-90, 90)")));
            }
            let x = scale_x * (lon - lon_ref).to_radians();
            let y = EARTH_RADIUS_KM * (lat - lat_ref).to_radians();
            Ok((x, y))
        })
        .collect()
}
