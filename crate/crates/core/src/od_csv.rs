//! OD series persistence: `hour,origin,destination,flow` CSV plus a JSON sidecar holding the
//! region populations and horizon.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::MobilitySeries;

pub const OD_HEADER: [&str; 4] = ["hour", "origin", "destination", "flow"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesMeta {
    num_regions: usize,
    horizon: usize,
    population: Vec<f64>,
}

/// Location of the metadata sidecar for an OD CSV file.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes every non-zero flow, hour-major then row-major, plus the sidecar.
pub fn save_od_csv(series: &MobilitySeries, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(OD_HEADER)?;
    let k = series.num_regions();
    for hour in 0..series.horizon() {
        let m = series.demand(hour);
        for i in 0..k {
            for j in 0..k {
                let flow = m[[i, j]];
                if flow != 0.0 {
                    out.write_record(&[
                        hour.to_string(),
                        i.to_string(),
                        j.to_string(),
                        flow.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;

    let meta = SeriesMeta {
        num_regions: k,
        horizon: series.horizon(),
        population: series.population().to_vec(),
    };
    let mut w = BufWriter::new(File::create(meta_path(path))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_od_csv(path: &Path) -> Result<MobilitySeries> {
    let meta_file = meta_path(path);
    let meta: SeriesMeta = serde_json::from_reader(BufReader::new(File::open(&meta_file)?))?;
    if meta.population.len() != meta.num_regions {
        return Err(Error::Parse {
            path: meta_file,
            line: 1,
            message: format!(
                "{} populations for {} regions",
                meta.population.len(),
                meta.num_regions
            ),
        });
    }
    let k = meta.num_regions;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::NoRecords(path.to_owned()));
    }
    if headers.iter().collect::<Vec<_>>() != OD_HEADER {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header {}", OD_HEADER.join(",")),
        });
    }

    let mut by_hour: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let mut seen: HashMap<(usize, usize, usize), u64> = HashMap::new();
    let mut records = 0usize;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if row.len() != 4 {
            return Err(fail(format!("expected 4 fields, found {}", row.len())));
        }
        let index = |col: usize, name: &str| -> Result<usize> {
            row[col]
                .trim()
                .parse::<usize>()
                .map_err(|e| fail(format!("bad {name} {:?}: {e}", &row[col])))
        };
        let hour = index(0, "hour")?;
        let origin = index(1, "origin")?;
        let destination = index(2, "destination")?;
        let flow: f64 = row[3]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad flow {:?}: {e}", &row[3])))?;
        if !flow.is_finite() || flow < 0.0 {
            return Err(fail(format!("negative or non-finite flow {flow}")));
        }
        if origin >= k || destination >= k {
            return Err(fail(format!(
                "region index out of range for K = {k}: {origin} -> {destination}"
            )));
        }
        if origin == destination {
            return Err(fail(format!("intra-region flow at region {origin}")));
        }
        if hour >= meta.horizon {
            return Err(fail(format!("hour {hour} beyond horizon {}", meta.horizon)));
        }
        if let Some(first) = seen.insert((hour, origin, destination), line) {
            return Err(fail(format!("duplicate OD pair, first seen on line {first}")));
        }
        by_hour.entry(hour).or_default().push((origin, destination, flow));
        records += 1;
    }
    if records == 0 {
        return Err(Error::NoRecords(path.to_owned()));
    }

    let hourly = (0..meta.horizon)
        .map(|hour| {
            let mut m = Array2::zeros((k, k));
            for &(i, j, f) in by_hour.get(&hour).map(Vec::as_slice).unwrap_or_default() {
                m[[i, j]] = f;
            }
            m
        })
        .collect();
    MobilitySeries::from_hourly(meta.population, hourly)
}
