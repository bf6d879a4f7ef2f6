//! CSV renderings of trajectories, series, point clouds, predictions and
//! CCM curves.
//!
//! Floats use Rust's shortest round-trip formatting, so a value read back
//! is bit-identical to the one written. Time columns use 17 significant
//! digits.

use std::io::{Read, Write};

use crate::causality::CcmCurve;
use crate::dynsys::State3;
use crate::embedding::{PointCloud, TimeSeries};
use crate::forecast::PredictionSet;
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn time(step: usize, dt: f64) -> String {
    format!("{:.16e}", step as f64 * dt)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(csv_err)
}

/// `step,t,x,y,z`.
pub fn write_trajectory<W: Write>(out: W, dt: f64, states: &[State3]) -> Result<()> {
    let mut w = writer(out);
    write_row(&mut w, &["step", "t", "x", "y", "z"].map(String::from))?;
    for (i, s) in states.iter().enumerate() {
        write_row(
            &mut w,
            &[
                i.to_string(),
                time(i, dt),
                s.x.to_string(),
                s.y.to_string(),
                s.z.to_string(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `step,t,value`.
pub fn write_series<W: Write>(out: W, series: &TimeSeries) -> Result<()> {
    let mut w = writer(out);
    write_row(&mut w, &["step", "t", "value"].map(String::from))?;
    for (i, v) in series.values.iter().enumerate() {
        write_row(&mut w, &[i.to_string(), time(i, series.dt), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

type Table = (Vec<String>, Vec<(usize, Vec<f64>)>);

fn read_table<R: Read>(input: R, header: Option<&[&str]>) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let names: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if let Some(expected) = header {
        if names != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {}, got {}", expected.join(","), names.join(",")),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok((names, rows))
}

/// Recovers `dt` from the time column and checks steps run 0, 1, 2, ...
fn check_steps(rows: &[(usize, Vec<f64>)]) -> Result<f64> {
    for (i, (line, r)) in rows.iter().enumerate() {
        if r[0] != i as f64 {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected step {i}, got {}", r[0]),
            });
        }
    }
    match rows.get(1) {
        Some((_, r)) if r[1] > 0.0 => Ok(r[1]),
        Some((line, _)) => Err(Error::Parse {
            line: *line,
            msg: "time must increase".into(),
        }),
        None => Err(Error::InsufficientData {
            what: "rows",
            needed: 2,
            got: rows.len(),
        }),
    }
}

/// Reads `step,t,x,y,z`, returning `dt` and the states.
pub fn read_trajectory<R: Read>(input: R) -> Result<(f64, Vec<State3>)> {
    let (_, rows) = read_table(input, Some(&["step", "t", "x", "y", "z"]))?;
    let dt = check_steps(&rows)?;
    Ok((dt, rows.iter().map(|(_, r)| State3::new(r[2], r[3], r[4])).collect()))
}

/// Reads `step,t,value`.
pub fn read_series<R: Read>(input: R) -> Result<TimeSeries> {
    let (_, rows) = read_table(input, Some(&["step", "t", "value"]))?;
    let dt = check_steps(&rows)?;
    TimeSeries::new(dt, rows.into_iter().map(|(_, r)| r[2]).collect())
}

/// `source_index,c0,...,c{k-1}`.
pub fn write_point_cloud<W: Write>(out: W, cloud: &PointCloud) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["source_index".to_string()];
    header.extend((0..cloud.k()).map(|j| format!("c{j}")));
    write_row(&mut w, &header)?;
    for (i, p) in cloud.points().enumerate() {
        let mut row = vec![cloud.source_index()[i].to_string()];
        row.extend(p.iter().map(f64::to_string));
        write_row(&mut w, &row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud<R: Read>(input: R) -> Result<PointCloud> {
    let (names, rows) = read_table(input, None)?;
    let k = names.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("source_index".to_string())
        .chain((0..k).map(|j| format!("c{j}")))
        .collect();
    if k == 0 || names != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad point cloud header {}", names.join(",")),
        });
    }
    let mut coords = Vec::with_capacity(rows.len() * k);
    let mut source = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let t = r[0];
        if t < 0.0 || t.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("bad source index {t}"),
            });
        }
        source.push(t as usize);
        coords.extend_from_slice(&r[1..]);
    }
    PointCloud::from_parts(k, coords, source)
}

/// `query_index,mode,weight,mean_c0..,spread_c0..`, one row per mode.
pub fn write_predictions<W: Write>(out: W, k: usize, sets: &[(usize, PredictionSet)]) -> Result<()> {
    let mut w = writer(out);
    let mut header: Vec<String> = ["query_index", "mode", "weight"].map(String::from).to_vec();
    header.extend((0..k).map(|j| format!("mean_c{j}")));
    header.extend((0..k).map(|j| format!("spread_c{j}")));
    write_row(&mut w, &header)?;
    for (q, set) in sets {
        for (m, p) in set.modes.iter().enumerate() {
            if p.mean.len() != k {
                return Err(Error::WidthMismatch {
                    expected: k,
                    got: p.mean.len(),
                });
            }
            let mut row = vec![q.to_string(), m.to_string(), p.weight.to_string()];
            row.extend(p.mean.iter().chain(&p.spread).map(f64::to_string));
            write_row(&mut w, &row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `library_size,skill_target_from_source,skill_source_from_target`.
pub fn write_ccm<W: Write>(out: W, forward: &CcmCurve, reverse: &CcmCurve) -> Result<()> {
    if forward.library_sizes != reverse.library_sizes {
        return Err(Error::Alignment("CCM curves use different library sizes".into()));
    }
    let mut w = writer(out);
    write_row(
        &mut w,
        &["library_size", "skill_target_from_source", "skill_source_from_target"].map(String::from),
    )?;
    for (i, l) in forward.library_sizes.iter().enumerate() {
        write_row(
            &mut w,
            &[
                l.to_string(),
                forward.skill[i].to_string(),
                reverse.skill[i].to_string(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `step,anomaly,pooled_overlap`.
pub fn write_anomaly_trace<W: Write>(out: W, rows: &[(usize, f64, usize)]) -> Result<()> {
    let mut w = writer(out);
    write_row(&mut w, &["step", "anomaly", "pooled_overlap"].map(String::from))?;
    for (step, a, o) in rows {
        write_row(&mut w, &[step.to_string(), a.to_string(), o.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
