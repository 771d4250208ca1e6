//! CSV readers and writers for quotes and surfaces.
//!
//! Quotes: `asset_id,date,tenor_years,atm,rr25,bf25,rr10,bf10,forward,dom_rate,for_rate`
//! Surfaces: `asset_id,date,maturity_years,delta,vol`, one row per lattice point.
//! Headers are mandatory, dates are ISO-8601, decimals use `.`.

use std::io::{Read, Write};

use chrono::NaiveDate;
use indexmap_lite::OrderedGroups;
use serde::Deserialize;

use super::{GridSpec, MarketQuoteRow, Observation, VolSurface};
use crate::error::{Result, VolError};

pub const QUOTE_HEADER: [&str; 11] = [
    "asset_id",
    "date",
    "tenor_years",
    "atm",
    "rr25",
    "bf25",
    "rr10",
    "bf10",
    "forward",
    "dom_rate",
    "for_rate",
];

pub const SURFACE_HEADER: [&str; 5] = ["asset_id", "date", "maturity_years", "delta", "vol"];

#[derive(Debug, Deserialize)]
struct RawQuote {
    asset_id: String,
    date: String,
    tenor_years: f64,
    atm: f64,
    rr25: f64,
    bf25: f64,
    rr10: f64,
    bf10: f64,
    forward: f64,
    dom_rate: f64,
    for_rate: f64,
}

#[derive(Debug, Deserialize)]
struct RawPoint {
    asset_id: String,
    date: String,
    maturity_years: f64,
    delta: f64,
    vol: f64,
}

/// A quote row together with its asset and date.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRecord {
    pub asset_id: String,
    pub date: NaiveDate,
    pub quote: MarketQuoteRow,
}

/// Observations sharing an asset and date.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub asset_id: String,
    pub date: NaiveDate,
    pub observations: Vec<Observation>,
}

fn parse_err(line: u64, message: impl Into<String>) -> VolError {
    VolError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> VolError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(line, e.to_string())
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| parse_err(line, format!("bad date {s:?}: {e}")))
}

fn open<R: Read>(reader: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            1,
            format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(rdr)
}

pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<QuoteRecord>> {
    let mut rdr = open(reader, &QUOTE_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<RawQuote>() {
        let raw = rec.map_err(csv_err)?;
        let line = out.len() as u64 + 2;
        let date = parse_date(&raw.date, line)?;
        if !(raw.tenor_years > 0.0) {
            return Err(parse_err(line, "tenor_years must be positive"));
        }
        out.push(QuoteRecord {
            asset_id: raw.asset_id,
            date,
            quote: MarketQuoteRow {
                tenor: raw.tenor_years,
                atm: raw.atm,
                rr25: raw.rr25,
                bf25: raw.bf25,
                rr10: raw.rr10,
                bf10: raw.bf10,
                forward: raw.forward,
                domestic_rate: raw.dom_rate,
                foreign_rate: raw.for_rate,
            },
        });
    }
    Ok(out)
}

fn read_points<R: Read>(
    reader: R,
) -> Result<OrderedGroups<(String, NaiveDate), (u64, Observation)>> {
    let mut rdr = open(reader, &SURFACE_HEADER)?;
    let mut groups = OrderedGroups::default();
    let mut line = 1u64;
    for rec in rdr.deserialize::<RawPoint>() {
        line += 1;
        let raw = rec.map_err(csv_err)?;
        let date = parse_date(&raw.date, line)?;
        if !(raw.maturity_years > 0.0) || !(raw.delta > 0.0 && raw.delta < 1.0) {
            return Err(parse_err(
                line,
                "maturity must be positive and delta in (0,1)",
            ));
        }
        if !(raw.vol > 0.0) || !raw.vol.is_finite() {
            return Err(parse_err(
                line,
                format!("vol must be positive, got {}", raw.vol),
            ));
        }
        groups.push(
            (raw.asset_id, date),
            (
                line,
                Observation {
                    maturity: raw.maturity_years,
                    delta: raw.delta,
                    vol: raw.vol,
                },
            ),
        );
    }
    Ok(groups)
}

/// Read complete surfaces; every `(asset_id, date)` group must cover the grid exactly once.
pub fn read_surfaces<R: Read>(reader: R, grid: &GridSpec) -> Result<Vec<VolSurface>> {
    let groups = read_points(reader)?;
    let mut out = Vec::with_capacity(groups.len());
    for ((asset, date), points) in groups.into_iter() {
        let mut vols = vec![f64::NAN; grid.len()];
        for (line, obs) in &points {
            let idx = grid.locate(obs.maturity, obs.delta).ok_or_else(|| {
                VolError::Mismatch(format!(
                    "line {line}: point (maturity {}, delta {}) is not on the model grid",
                    obs.maturity, obs.delta
                ))
            })?;
            if !vols[idx].is_nan() {
                return Err(parse_err(*line, "duplicate grid point"));
            }
            vols[idx] = obs.vol;
        }
        if vols.iter().any(|v| v.is_nan()) {
            let last = points.last().map(|p| p.0).unwrap_or(0);
            return Err(parse_err(
                last,
                format!(
                    "surface {asset} {date} has {} of {} grid points",
                    points.len(),
                    grid.len()
                ),
            ));
        }
        out.push(VolSurface::from_flat(asset, date, grid.clone(), vols)?);
    }
    Ok(out)
}

/// Read possibly partial, possibly off-grid points grouped by `(asset_id, date)`.
pub fn read_observations<R: Read>(reader: R) -> Result<Vec<ObservationSet>> {
    Ok(read_points(reader)?
        .into_iter()
        .map(|((asset_id, date), pts)| ObservationSet {
            asset_id,
            date,
            observations: pts.into_iter().map(|(_, o)| o).collect(),
        })
        .collect())
}

pub fn write_surfaces<W: Write>(writer: W, surfaces: &[VolSurface]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SURFACE_HEADER).map_err(csv_err)?;
    for s in surfaces {
        let date = s.observation_date.format("%Y-%m-%d").to_string();
        for ((t, d), v) in s.grid().coordinates().into_iter().zip(s.as_flat()) {
            wtr.write_record([
                s.asset_id.as_str(),
                date.as_str(),
                &t.to_string(),
                &d.to_string(),
                &v.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Insertion-ordered grouping without pulling in a map crate.
mod indexmap_lite {
    use std::collections::HashMap;
    use std::hash::Hash;

    pub struct OrderedGroups<K, V> {
        index: HashMap<K, usize>,
        groups: Vec<(K, Vec<V>)>,
    }

    impl<K, V> Default for OrderedGroups<K, V> {
        fn default() -> Self {
            Self {
                index: HashMap::new(),
                groups: Vec::new(),
            }
        }
    }

    impl<K: Hash + Eq + Clone, V> OrderedGroups<K, V> {
        pub fn push(&mut self, key: K, value: V) {
            match self.index.get(&key) {
                Some(&i) => self.groups[i].1.push(value),
                None => {
                    self.index.insert(key.clone(), self.groups.len());
                    self.groups.push((key, vec![value]));
                }
            }
        }

        pub fn len(&self) -> usize {
            self.groups.len()
        }

        pub fn into_iter(self) -> std::vec::IntoIter<(K, Vec<V>)> {
            self.groups.into_iter()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> String {
        let g = GridSpec::default();
        let mut s = String::from("asset_id,date,maturity_years,delta,vol\n");
        for (k, (t, d)) in g.coordinates().into_iter().enumerate() {
            s.push_str(&format!(
                "EURUSD,2020-01-02,{t},{d},{}\n",
                0.08 + 0.001 * k as f64
            ));
        }
        s
    }

    #[test]
    fn surfaces_roundtrip_exactly() {
        let g = GridSpec::default();
        let surfaces = read_surfaces(sample_csv().as_bytes(), &g).unwrap();
        assert_eq!(surfaces.len(), 1);
        let mut buf = Vec::new();
        write_surfaces(&mut buf, &surfaces).unwrap();
        let again = read_surfaces(buf.as_slice(), &g).unwrap();
        assert_eq!(again, surfaces);
    }

    #[test]
    fn missing_header_is_line_one_error() {
        let err = read_surfaces("a,b,c\n".as_bytes(), &GridSpec::default()).unwrap_err();
        assert!(matches!(err, VolError::Parse { line: 1, .. }));
    }

    #[test]
    fn malformed_value_reports_line() {
        let mut csv = sample_csv();
        csv = csv.replacen("2020-01-02,", "2020-01-02,abc", 1);
        let err = read_surfaces(csv.as_bytes(), &GridSpec::default()).unwrap_err();
        match err {
            VolError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn incomplete_surface_is_rejected() {
        let csv: String = sample_csv()
            .lines()
            .take(30)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(read_surfaces(csv.as_bytes(), &GridSpec::default()).is_err());
        let sets = read_observations(csv.as_bytes()).unwrap();
        assert_eq!(sets[0].observations.len(), 29);
    }

    #[test]
    fn off_grid_point_is_a_mismatch() {
        let csv = sample_csv().replacen(",0.1,", ",0.15,", 1);
        let err = read_surfaces(csv.as_bytes(), &GridSpec::default()).unwrap_err();
        assert!(matches!(err, VolError::Mismatch(_)));
    }

    #[test]
    fn quotes_parse() {
        let csv = "asset_id,date,tenor_years,atm,rr25,bf25,rr10,bf10,forward,dom_rate,for_rate\n\
                   AUDUSD,2019-05-01,0.0821917808219178,0.08,-0.01,0.002,-0.018,0.006,0.70,0.015,0.024\n";
        let rows = read_quotes(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].quote.rr25, -0.01);
        let bad = csv.replace("2019-05-01", "05/01/2019");
        assert!(matches!(
            read_quotes(bad.as_bytes()),
            Err(VolError::Parse { line: 2, .. })
        ));
    }
}
