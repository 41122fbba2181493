use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::format::format_g9;
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 12] =
    ["tick", "t_min", "building", "cx", "u", "delta_r", "dr_min", "dr_max", "t_set", "s_accum", "sat", "sing"];

/// One building over one tick. Power quantities are in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRow {
    pub tick: usize,
    pub t_min: f64,
    pub building: String,
    /// Measured consumption at the start of the tick.
    pub cx: f64,
    pub u: f64,
    /// Dispatched ramp (kW/min).
    pub delta_r: f64,
    pub dr_min: f64,
    pub dr_max: f64,
    /// Set point at the start of the tick.
    pub t_set: f64,
    /// Dispatched regulation accumulated through the end of the tick (kW min).
    pub s_accum: f64,
    pub saturated: bool,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoRow {
    pub tick: usize,
    pub t_min: f64,
    pub delta_p: f64,
    pub p_spin: f64,
    pub objective: f64,
}

/// Estimation error of one building's observer after a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverRow {
    pub tick: usize,
    pub t_min: f64,
    pub building: String,
    pub error_norm: f64,
    pub x_n: f64,
    pub x_n_est: f64,
    pub x_2n: f64,
    pub x_2n_est: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt_min: f64,
    pub rows: Vec<BuildingRow>,
    pub iso: Vec<IsoRow>,
    pub observer: Vec<ObserverRow>,
    /// Aggregate demand on the fleet, `(t_min, kW)`, one more sample than ticks.
    pub demand: Vec<(f64, f64)>,
}

impl SimTrace {
    pub fn ticks(&self) -> usize {
        self.iso.len()
    }

    /// Writes the CSV trace: each tick's building rows followed by its ISO row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        let mut rows = self.rows.iter().peekable();
        for iso in &self.iso {
            while let Some(r) = rows.next_if(|r| r.tick == iso.tick) {
                w.write_record([
                    r.tick.to_string(),
                    format_g9(r.t_min),
                    r.building.clone(),
                    format_g9(r.cx),
                    format_g9(r.u),
                    format_g9(r.delta_r),
                    format_g9(r.dr_min),
                    format_g9(r.dr_max),
                    format_g9(r.t_set),
                    format_g9(r.s_accum),
                    flag(r.saturated),
                    flag(r.singular),
                ])?;
            }
            // ISO rows reuse the cx/u/delta_r columns for delta_p/p_spin/objective
            w.write_record([
                iso.tick.to_string(),
                format_g9(iso.t_min),
                "ISO".to_string(),
                format_g9(iso.delta_p),
                format_g9(iso.p_spin),
                format_g9(iso.objective),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the spinning-reserve series and tick length back from a CSV trace.
pub fn read_trace_p_spin<R: Read>(input: R, source: &std::path::Path) -> Result<(Vec<f64>, f64)> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse { path: source.into(), line: 1, message: "not a thermoflex trace header".into() });
    }
    let mut times = Vec::new();
    let mut spin = Vec::new();
    for record in reader.records() {
        let record = record?;
        if &record[2] != "ISO" {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| {
            record[i].parse::<f64>().map_err(|_| Error::Parse {
                path: source.into(),
                line,
                message: format!("column {} is not a number: {:?}", TRACE_HEADER[i], &record[i]),
            })
        };
        times.push(num(1)?);
        spin.push(num(4)?);
    }
    let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
    Ok((spin, dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimTrace {
        let row = |tick: usize, b: &str| BuildingRow {
            tick,
            t_min: tick as f64 / 15.0,
            building: b.into(),
            cx: 333.333333333,
            u: -0.125,
            delta_r: 1.0 / 3.0,
            dr_min: -50.0,
            dr_max: 50.0,
            t_set: 22.0,
            s_accum: 0.0,
            saturated: tick == 1,
            singular: false,
        };
        SimTrace {
            dt_min: 1.0 / 15.0,
            rows: vec![row(0, "a"), row(0, "b"), row(1, "a"), row(1, "b")],
            iso: (0..2)
                .map(|tick| IsoRow { tick, t_min: tick as f64 / 15.0, delta_p: 2.0, p_spin: -1.5 * tick as f64, objective: 9.0 })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tick,t_min,building,cx,u,delta_r,dr_min,dr_max,t_set,s_accum,sat,sing");
        assert_eq!(lines[1], "0,0,a,333.333333,-0.125,0.333333333,-50,50,22,0,0,0");
        assert_eq!(lines[3], "0,0,ISO,2,0,9,,,,,,");
        assert_eq!(lines[4], "1,0.0666666667,a,333.333333,-0.125,0.333333333,-50,50,22,0,1,0");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn round_trips_spin_series() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let (spin, dt) = read_trace_p_spin(&buf[..], std::path::Path::new("mem")).unwrap();
        assert_eq!(spin, vec![0.0, -1.5]);
        assert!((dt - 1.0 / 15.0).abs() < 1e-9);
    }
}
