//! Geohash cells used as simulation blocks.
//!
//! Encoding follows the public geohash algorithm: longitude and latitude
//! bits are interleaved starting with longitude, each bit halving the
//! active interval (a value on the midpoint goes to the upper half), and
//! bits are packed five at a time into the base-32 alphabet below.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geohash base-32 alphabet. `a`, `i`, `l` and `o` are excluded.
pub const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

pub const DEFAULT_PRECISION: usize = 7;
pub const MAX_PRECISION: usize = 12;

/// Meters per degree of latitude (and of longitude at the equator).
const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("precision {0} outside [1, {MAX_PRECISION}]")]
    Precision(usize),
    #[error("invalid geohash {0:?}")]
    InvalidCell(String),
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, GeoError> {
        let p = GeoPoint {
            latitude,
            longitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        // NaN fails both range checks.
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(GeoError::Latitude(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(GeoError::Longitude(self.longitude));
        }
        Ok(())
    }
}

/// A geohash cell identifier. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CellId(String);

impl CellId {
    pub fn parse(code: &str) -> Result<Self, GeoError> {
        if code.is_empty()
            || code.len() > MAX_PRECISION
            || !code.bytes().all(|b| ALPHABET.contains(&b))
        {
            return Err(GeoError::InvalidCell(code.to_string()));
        }
        Ok(CellId(code.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn precision(&self) -> usize {
        self.0.len()
    }

    /// Bounding box of the cell as `(min, max)` corners.
    pub fn bounds(&self) -> (GeoPoint, GeoPoint) {
        let mut lat = (-90.0_f64, 90.0_f64);
        let mut lon = (-180.0_f64, 180.0_f64);
        let mut even = true;
        for b in self.0.bytes() {
            let idx = ALPHABET
                .iter()
                .position(|&c| c == b)
                .expect("validated alphabet");
            for shift in (0..5).rev() {
                let bit = (idx >> shift) & 1 == 1;
                let range = if even { &mut lon } else { &mut lat };
                let mid = (range.0 + range.1) / 2.0;
                if bit {
                    range.0 = mid;
                } else {
                    range.1 = mid;
                }
                even = !even;
            }
        }
        (
            GeoPoint {
                latitude: lat.0,
                longitude: lon.0,
            },
            GeoPoint {
                latitude: lat.1,
                longitude: lon.1,
            },
        )
    }

    /// Center of the cell's bounding box.
    pub fn center(&self) -> GeoPoint {
        let (lo, hi) = self.bounds();
        GeoPoint {
            latitude: (lo.latitude + hi.latitude) / 2.0,
            longitude: (lo.longitude + hi.longitude) / 2.0,
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CellId {
    type Error = GeoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        CellId::parse(&s)
    }
}

impl From<CellId> for String {
    fn from(c: CellId) -> String {
        c.0
    }
}

fn check_precision(precision: usize) -> Result<(), GeoError> {
    if (1..=MAX_PRECISION).contains(&precision) {
        Ok(())
    } else {
        Err(GeoError::Precision(precision))
    }
}

/// Encodes `p` into a geohash of `precision` characters.
pub fn encode(p: GeoPoint, precision: usize) -> Result<CellId, GeoError> {
    p.validate()?;
    check_precision(precision)?;

    let mut lat = (-90.0_f64, 90.0_f64);
    let mut lon = (-180.0_f64, 180.0_f64);
    let mut even = true;
    let mut code = String::with_capacity(precision);
    for _ in 0..precision {
        let mut idx = 0usize;
        for _ in 0..5 {
            let (range, value) = if even {
                (&mut lon, p.longitude)
            } else {
                (&mut lat, p.latitude)
            };
            let mid = (range.0 + range.1) / 2.0;
            idx <<= 1;
            if value >= mid {
                idx |= 1;
                range.0 = mid;
            } else {
                range.1 = mid;
            }
            even = !even;
        }
        code.push(ALPHABET[idx] as char);
    }
    Ok(CellId(code))
}

/// Number of (longitude, latitude) bits in a geohash of `precision` characters.
pub fn bit_split(precision: usize) -> (u32, u32) {
    let total = 5 * precision as u32;
    (total.div_ceil(2), total / 2)
}

/// Approximate `(width, height)` of a cell in meters at `latitude`.
pub fn cell_extent_meters(precision: usize, latitude: f64) -> Result<(f64, f64), GeoError> {
    check_precision(precision)?;
    if !(-90.0..=90.0).contains(&latitude) {
        return Err(GeoError::Latitude(latitude));
    }
    let (lon_bits, lat_bits) = bit_split(precision);
    let height = 180.0 / 2f64.powi(lat_bits as i32) * METERS_PER_DEGREE;
    let width =
        360.0 / 2f64.powi(lon_bits as i32) * METERS_PER_DEGREE * latitude.to_radians().cos();
    Ok((width, height))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn origin_is_s_followed_by_zeros() {
        assert_eq!(encode(pt(0.0, 0.0), 7).unwrap().as_str(), "s000000");
    }

    #[test]
    fn jutland_vector() {
        assert_eq!(
            encode(pt(57.64911, 10.40744), 11).unwrap().as_str(),
            "u4pruydqqvj"
        );
        assert_eq!(
            encode(pt(57.64911, 10.40744), 7).unwrap().as_str(),
            "u4pruyd"
        );
    }

    #[test]
    fn range_errors_name_the_field() {
        assert_eq!(GeoPoint::new(91.0, 0.0), Err(GeoError::Latitude(91.0)));
        assert_eq!(GeoPoint::new(0.0, -180.5), Err(GeoError::Longitude(-180.5)));
        let raw = GeoPoint {
            latitude: 0.0,
            longitude: 200.0,
        };
        assert_eq!(encode(raw, 7), Err(GeoError::Longitude(200.0)));
        assert!(matches!(
            GeoPoint::new(f64::NAN, 0.0),
            Err(GeoError::Latitude(_))
        ));
    }

    #[test]
    fn precision_bounds() {
        assert_eq!(encode(pt(0.0, 0.0), 0), Err(GeoError::Precision(0)));
        assert_eq!(encode(pt(0.0, 0.0), 13), Err(GeoError::Precision(13)));
        assert_eq!(encode(pt(0.0, 0.0), 12).unwrap().precision(), 12);
    }

    #[test]
    fn extremes_encode() {
        assert_eq!(encode(pt(90.0, 180.0), 3).unwrap().as_str(), "zzz");
        assert_eq!(encode(pt(-90.0, -180.0), 3).unwrap().as_str(), "000");
    }

    #[test]
    fn seven_char_cell_is_about_153m() {
        let (w, h) = cell_extent_meters(7, 0.0).unwrap();
        assert!((w - 153.0).abs() / 153.0 < 0.02, "width {w}");
        assert!((h - 153.0).abs() / 153.0 < 0.02, "height {h}");
    }

    #[test]
    fn one_char_cell_spans_45_degrees_of_latitude() {
        let (_, h) = cell_extent_meters(1, 0.0).unwrap();
        assert!((h - 45.0 * 111_320.0).abs() < 1e-6);
    }

    #[test]
    fn width_halves_at_60_degrees() {
        let (w0, h0) = cell_extent_meters(7, 0.0).unwrap();
        let (w60, h60) = cell_extent_meters(7, 60.0).unwrap();
        assert!((w60 / w0 - 0.5).abs() < 1e-12);
        assert_eq!(h0, h60);
    }

    #[test]
    fn bounds_contain_point() {
        let p = pt(31.2304, 121.4737);
        let c = encode(p, 7).unwrap();
        let (lo, hi) = c.bounds();
        assert!(lo.latitude <= p.latitude && p.latitude <= hi.latitude);
        assert!(lo.longitude <= p.longitude && p.longitude <= hi.longitude);
        assert_eq!(encode(c.center(), 7).unwrap(), c);
    }

    #[test]
    fn parse_rejects_excluded_letters() {
        for bad in ["", "abc", "s0i", "l", "o", "u4pruydqqvjxy"] {
            assert!(CellId::parse(bad).is_err(), "{bad}");
        }
        assert!(CellId::parse("u4pruyd").is_ok());
    }
}
