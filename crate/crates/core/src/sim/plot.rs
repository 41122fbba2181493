use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::format::format_g9;
use super::trace::SimTrace;
use crate::error::Result;

/// Writes long-format CSVs (`t_min,[building,]series,value`) for plotting;
/// returns the files written.
pub fn write_plot_data(dir: &Path, trace: &SimTrace) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("plot_buildings.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    w.write_record(["t_min", "building", "series", "value"])?;
    for r in &trace.rows {
        for (series, v) in [
            ("cx", r.cx),
            ("t_set", r.t_set),
            ("u", r.u),
            ("delta_r", r.delta_r),
            ("dr_min", r.dr_min),
            ("dr_max", r.dr_max),
            ("s_accum", r.s_accum),
        ] {
            w.write_record([format_g9(r.t_min).as_str(), &r.building, series, &format_g9(v)])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("plot_dispatch.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    w.write_record(["t_min", "series", "value"])?;
    for (t, d) in &trace.demand {
        w.write_record([format_g9(*t), "demand".into(), format_g9(*d)])?;
    }
    for r in &trace.iso {
        for (series, v) in [("delta_p", r.delta_p), ("p_spin", r.p_spin), ("objective", r.objective)] {
            w.write_record([format_g9(r.t_min), series.into(), format_g9(v)])?;
        }
    }
    w.flush()?;
    written.push(path);

    if !trace.observer.is_empty() {
        let path = dir.join("plot_observer.csv");
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
        w.write_record(["t_min", "building", "series", "value"])?;
        for r in &trace.observer {
            for (series, v) in [
                ("error_norm", r.error_norm),
                ("x_n", r.x_n),
                ("x_n_est", r.x_n_est),
                ("x_2n", r.x_2n),
                ("x_2n_est", r.x_2n_est),
            ] {
                w.write_record([format_g9(r.t_min).as_str(), &r.building, series, &format_g9(v)])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
