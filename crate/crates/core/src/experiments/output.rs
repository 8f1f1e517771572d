//! Sweep artifacts: `results.csv`, per-cell `epochs.csv` and gnuplot scripts.
//!
//! `results.csv` has one row per cell with columns
//! `cell,activation,dw0,w_max,w_sym,w_sym_abs,zero_shift,seed_index,seed,
//! nominal_states,final_error_pct,min_error_pct,last_layer_mean,error,epochs_csv`.
//! `w_sym` is relative to `w_max`; empty numeric fields mean the cell failed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, CellResult, SweepError, SweepResult, SweepSpec};
use crate::network::{write_epochs_csv, Activation};

#[derive(Serialize, Deserialize)]
struct Row {
    cell: usize,
    activation: Activation,
    dw0: f64,
    w_max: f64,
    w_sym: f64,
    w_sym_abs: f64,
    zero_shift: bool,
    seed_index: usize,
    seed: u64,
    nominal_states: f64,
    final_error_pct: Option<f64>,
    min_error_pct: Option<f64>,
    last_layer_mean: Option<f64>,
    error: Option<String>,
    epochs_csv: String,
}

fn epochs_path(c: &Cell) -> String {
    format!("cells/{}/epochs.csv", c.id())
}

pub fn write_results_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), SweepError> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in &result.records {
        let c = &r.cell;
        wtr.serialize(Row {
            cell: c.index,
            activation: c.activation,
            dw0: c.dw0,
            w_max: c.w_max,
            w_sym: c.w_sym,
            w_sym_abs: c.w_sym_abs(),
            zero_shift: c.zero_shift,
            seed_index: c.seed_index,
            seed: c.seed,
            nominal_states: c.nominal_states(),
            final_error_pct: r.final_error_pct,
            min_error_pct: r.min_error_pct,
            last_layer_mean: r.last_layer_mean,
            error: r.error.clone(),
            epochs_csv: epochs_path(c),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read `results.csv` back; per-epoch records are not restored.
pub fn read_results_csv<R: Read>(input: R) -> Result<SweepResult, SweepError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut records = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        records.push(CellResult {
            cell: Cell {
                index: row.cell,
                dw0: row.dw0,
                w_max: row.w_max,
                w_sym: row.w_sym,
                zero_shift: row.zero_shift,
                activation: row.activation,
                seed_index: row.seed_index,
                seed: row.seed,
            },
            final_error_pct: row.final_error_pct,
            min_error_pct: row.min_error_pct,
            last_layer_mean: row.last_layer_mean,
            error: row.error,
            epochs: Vec::new(),
        });
    }
    Ok(SweepResult { records })
}

const CONTOUR_GP: &str = r#"# Final test error over the (dw0, w_max) grid, balanced uncompensated cells.
set datafile separator ','
set logscale xy
set logscale cb
set xlabel 'dw0'
set ylabel 'w_max'
set cblabel 'test error [%]'
set view map
set key off
plot 'results.csv' every ::1 using 3:4:((column(5) == 0 && stringcolumn(7) eq 'false') ? column(11) : 1/0) with points pt 5 ps 3 palette
"#;

const WSYM_GP: &str = r#"# Minimum test error against relative w_sym, with and without zero-shifting.
set datafile separator ','
set xlabel 'w_sym / w_max'
set ylabel 'test error [%]'
set logscale y
plot 'results.csv' every ::1 using 5:((stringcolumn(7) eq 'false') ? column(12) : 1/0) with points pt 7 title 'uncompensated', \
     '' every ::1 using 5:((stringcolumn(7) eq 'true') ? column(12) : 1/0) with points pt 5 title 'zero-shifted'
"#;

const STATES_GP: &str = r#"# Final test error against nominal number of states.
set datafile separator ','
set logscale xy
set xlabel 'nominal states'
set ylabel 'test error [%]'
set key off
plot 'results.csv' every ::1 using 10:11 with points pt 7
"#;

/// Write `spec.json`, `results.csv`, per-cell `epochs.csv` and plot scripts.
pub fn write_outputs(dir: &Path, spec: &SweepSpec, result: &SweepResult) -> Result<(), SweepError> {
    fs::create_dir_all(dir)?;
    let spec_json = serde_json::to_string_pretty(spec).map_err(std::io::Error::other)?;
    fs::write(dir.join("spec.json"), spec_json + "\n")?;
    write_results_csv(result, fs::File::create(dir.join("results.csv"))?)?;
    for r in &result.records {
        let path = dir.join(epochs_path(&r.cell));
        fs::create_dir_all(path.parent().unwrap())?;
        write_epochs_csv(&r.epochs, fs::File::create(path)?)?;
    }
    fs::write(dir.join("contour.gp"), CONTOUR_GP)?;
    fs::write(dir.join("wsym.gp"), WSYM_GP)?;
    fs::write(dir.join("states.gp"), STATES_GP)?;
    Ok(())
}
