//! Leader trajectory ingestion: NGSIM-style records or plain `t,x` files.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::LeaderTrajectory;

pub const FEET_TO_METERS: f64 = 0.3048;
/// NGSIM frame interval, seconds.
pub const NGSIM_FRAME_S: f64 = 0.1;
/// Largest deviation of any sample interval from the first one, seconds.
pub const UNIFORM_DT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub position: f64,
    pub speed: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    /// Headered `vehicle_id,frame,local_y_m,velocity_mps`, 10 Hz frames.
    Ngsim,
    /// Two columns `t,x`, optional header.
    TimePosition,
    /// NGSIM if the first line names the NGSIM columns, otherwise `t,x`.
    #[default]
    Auto,
}

const NGSIM_COLUMNS: [&str; 4] = ["vehicle_id", "frame", "local_y_m", "velocity_mps"];

pub fn load_trajectory(path: &Path, format: TrajectoryFormat, feet: bool) -> Result<Vec<TrajectoryRecord>> {
    let file = File::open(path).map_err(|e| Error::invalid("trajectory.path", format!("{}: {e}", path.display())))?;
    read_trajectory(BufReader::new(file), format, feet)
}

/// Parses and validates records. With `feet`, positions and speeds are
/// converted to meters. NGSIM files keep the first vehicle's rows only.
pub fn read_trajectory<R: Read>(reader: R, format: TrajectoryFormat, feet: bool) -> Result<Vec<TrajectoryRecord>> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let looks_ngsim = split(first).first().is_some_and(|c| c.eq_ignore_ascii_case("vehicle_id"));
    let ngsim = match format {
        TrajectoryFormat::Ngsim => true,
        TrajectoryFormat::TimePosition => false,
        TrajectoryFormat::Auto => looks_ngsim,
    };
    let mut records = if ngsim { parse_ngsim(&text)? } else { parse_time_position(&text)? };
    if feet {
        for r in &mut records {
            r.position *= FEET_TO_METERS;
            r.speed = r.speed.map(|v| v * FEET_TO_METERS);
        }
    }
    check_uniform(&records)?;
    Ok(records)
}

fn split(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn number(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::Parse { line, reason: format!("{name}: cannot parse {field:?} as a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, reason: format!("{name}: non-finite value") });
    }
    Ok(v)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_time_position(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (idx, (line, content)) in data_lines(text).enumerate() {
        let cols = split(content);
        if idx == 0 && cols.first().is_some_and(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        if cols.len() != 2 {
            return Err(Error::Parse { line, reason: format!("expected 2 columns (t, x), found {}", cols.len()) });
        }
        out.push(TrajectoryRecord { time: number(cols[0], line, "t")?, position: number(cols[1], line, "x")?, speed: None });
    }
    Ok(out)
}

fn parse_ngsim(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = data_lines(text);
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "empty file".into() })?;
    let names = split(header);
    let mut index = [0usize; 4];
    for (slot, want) in index.iter_mut().zip(NGSIM_COLUMNS) {
        *slot = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(want))
            .ok_or_else(|| Error::Parse { line: hline, reason: format!("missing column {want}") })?;
    }
    let mut vehicle = None;
    let mut frame0 = None;
    let mut out = Vec::new();
    for (line, content) in lines {
        let cols = split(content);
        if cols.len() != names.len() {
            return Err(Error::Parse { line, reason: format!("expected {} columns, found {}", names.len(), cols.len()) });
        }
        let id = cols[index[0]];
        if *vehicle.get_or_insert_with(|| id.to_string()) != id {
            continue;
        }
        let frame = number(cols[index[1]], line, "frame")?;
        if frame.fract() != 0.0 {
            return Err(Error::Parse { line, reason: "frame must be an integer".into() });
        }
        let f0 = *frame0.get_or_insert(frame);
        out.push(TrajectoryRecord {
            time: (frame - f0) * NGSIM_FRAME_S,
            position: number(cols[index[2]], line, "local_y_m")?,
            speed: Some(number(cols[index[3]], line, "velocity_mps")?),
        });
    }
    Ok(out)
}

fn check_uniform(records: &[TrajectoryRecord]) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::invalid("trajectory", "needs at least two samples"));
    }
    let dt0 = records[1].time - records[0].time;
    for (k, w) in records.windows(2).enumerate() {
        let dt = w[1].time - w[0].time;
        if dt <= 0.0 {
            return Err(Error::invalid("trajectory", format!("time not strictly increasing at sample {}", k + 1)));
        }
        if (dt - dt0).abs() > UNIFORM_DT_TOL {
            return Err(Error::invalid(
                "trajectory",
                format!("non-uniform sampling at sample {}: interval {dt} s vs {dt0} s", k + 1),
            ));
        }
    }
    Ok(())
}

/// Linear interpolation onto `t₀ + k·dt`. Speeds are interpolated when every
/// record carries one, otherwise derived by central differences.
pub fn resample(records: &[TrajectoryRecord], dt: f64) -> Result<LeaderTrajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("sim.dt", "must be positive"));
    }
    check_uniform(records)?;
    let t0 = records[0].time;
    let span = records[records.len() - 1].time - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let src_dt = records[1].time - t0;
    let sample = |k: usize, get: &dyn Fn(&TrajectoryRecord) -> f64| -> f64 {
        let u = k as f64 * dt / src_dt;
        let j = (u + 1e-9).floor() as usize;
        let frac = u - j as f64;
        if j + 1 >= records.len() || frac.abs() < 1e-9 {
            get(&records[j.min(records.len() - 1)])
        } else {
            get(&records[j]) * (1.0 - frac) + get(&records[j + 1]) * frac
        }
    };
    let position: Vec<f64> = (0..n).map(|k| sample(k, &|r| r.position)).collect();
    if records.iter().all(|r| r.speed.is_some()) {
        let speed = (0..n).map(|k| sample(k, &|r| r.speed.unwrap_or(0.0))).collect();
        LeaderTrajectory::from_position_speed(position, speed, dt)
    } else {
        LeaderTrajectory::from_positions(position, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_column_ramp() {
        let r = read_trajectory("0,0\n0.1,1\n0.2,2".as_bytes(), TrajectoryFormat::Auto, false).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[2], TrajectoryRecord { time: 0.2, position: 2.0, speed: None });
        let l = resample(&r, 0.1).unwrap();
        assert!(l.speeds().iter().all(|v| (v - 10.0).abs() < 1e-9));
    }

    #[test]
    fn ngsim_identity_resampling() {
        let mut text = String::from("vehicle_id,frame,local_y_m,velocity_mps\n");
        for k in 0..20 {
            text += &format!("7,{},{},{}\n", 100 + k, 3.0 * k as f64 + 0.25 * (k * k) as f64, 30.0 + 5.0 * k as f64);
        }
        text += "8,100,0,0\n";
        let r = read_trajectory(text.as_bytes(), TrajectoryFormat::Auto, false).unwrap();
        assert_eq!(r.len(), 20);
        let l = resample(&r, 0.1).unwrap();
        assert_eq!(l.len(), 20);
        for (k, rec) in r.iter().enumerate() {
            assert_eq!(l.positions()[k], rec.position);
            assert_eq!(l.speeds()[k], rec.speed.unwrap());
        }
    }

    #[test]
    fn feet_flag_scales_positions() {
        let m = read_trajectory("t,x\n0,10\n0.5,20".as_bytes(), TrajectoryFormat::TimePosition, false).unwrap();
        let f = read_trajectory("t,x\n0,10\n0.5,20".as_bytes(), TrajectoryFormat::TimePosition, true).unwrap();
        for (a, b) in m.iter().zip(&f) {
            assert_eq!(b.position, a.position * 0.3048);
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let e = read_trajectory("0,0\n0.1,1\n0.2,oops\n".as_bytes(), TrajectoryFormat::Auto, false).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = read_trajectory("0,0\n0.1\n".as_bytes(), TrajectoryFormat::Auto, false).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn non_uniform_rejected() {
        let e = read_trajectory("0,0\n0.1,1\n0.25,2\n".as_bytes(), TrajectoryFormat::Auto, false).unwrap_err();
        assert!(matches!(e, Error::Invalid { .. }));
        assert!(read_trajectory("0,0\n0.1,1\n0.2000005,2\n".as_bytes(), TrajectoryFormat::Auto, false).is_ok());
    }

    #[test]
    fn upsampling_interpolates() {
        let r = read_trajectory("0,0\n1,10\n2,30".as_bytes(), TrajectoryFormat::Auto, false).unwrap();
        let l = resample(&r, 0.5).unwrap();
        assert_eq!(l.positions(), &[0.0, 5.0, 10.0, 20.0, 30.0]);
    }
}
