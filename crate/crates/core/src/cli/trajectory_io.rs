//! Trajectory CSV: `step,t,x_1..x_n,H,S,dS,solver_iters,residual`.
//!
//! Optional `#` lines before the header carry the scenario id, the method
//! and a `truncated` marker. Floats are written with 17 significant digits so
//! a file read back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrate::{IntegratorConfig, Method, StepRecord, Trajectory};

const TRAILING: [&str; 5] = ["H", "S", "dS", "solver_iters", "residual"];

pub fn header(dim: usize) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "t".to_string()];
    cols.extend((1..=dim).map(|i| format!("x_{i}")));
    cols.extend(TRAILING.iter().map(|s| s.to_string()));
    cols
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut preamble = String::new();
    if !traj.scenario_id.is_empty() {
        writeln!(preamble, "# scenario: {}", traj.scenario_id).unwrap();
    }
    writeln!(preamble, "# method: {}", traj.method).unwrap();
    if traj.truncated {
        preamble.push_str("# truncated\n");
    }
    let mut out = out;
    out.write_all(preamble.as_bytes())?;

    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(traj.dim())).map_err(csv_error)?;
    for (k, r) in traj.records.iter().enumerate() {
        let mut row = vec![k.to_string(), float(r.t)];
        row.extend(r.state.iter().map(|&v| float(v)));
        row.extend([
            float(r.energy),
            float(r.entropy),
            float(r.delta_entropy),
            r.solver_iters.to_string(),
            float(r.residual),
        ]);
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Reads a trajectory written by [`write_trajectory`]; `config` supplies the step settings.
pub fn read_trajectory<R: Read>(mut input: R, config: IntegratorConfig) -> Result<Trajectory> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut traj = Trajectory::new(config, Method::Metriplectic);
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let Some(comment) = line.trim_end().strip_prefix('#') else {
            break;
        };
        body_start += line.len();
        let comment = comment.trim();
        if comment == "truncated" {
            traj.truncated = true;
        } else if let Some(id) = comment.strip_prefix("scenario:") {
            traj.scenario_id = id.trim().to_string();
        } else if let Some(m) = comment.strip_prefix("method:") {
            traj.method = m.parse()?;
        }
    }

    let mut rdr = csv::Reader::from_reader(&text.as_bytes()[body_start..]);
    let head = rdr.headers().map_err(csv_error)?.clone();
    if head.len() < header(0).len() + 1 {
        return Err(Error::Parse(format!("trajectory header has only {} columns", head.len())));
    }
    let dim = head.len() - header(0).len();
    let expected = header(dim);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!(
            "unexpected trajectory header '{}', expected '{}'",
            head.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }

    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = k + 2;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {line}, column {}: {e}", expected[i])))
        };
        let step: usize = row[0]
            .parse()
            .map_err(|e| Error::Parse(format!("row {line}, column step: {e}")))?;
        if step != k {
            return Err(Error::Parse(format!("row {line}: step {step} out of sequence")));
        }
        let state = (0..dim).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let base = 2 + dim;
        traj.records.push(StepRecord {
            t: num(1)?,
            state,
            energy: num(base)?,
            entropy: num(base + 1)?,
            delta_entropy: num(base + 2)?,
            solver_iters: row[base + 3]
                .parse()
                .map_err(|e| Error::Parse(format!("row {line}, column solver_iters: {e}")))?,
            residual: num(base + 4)?,
        });
    }
    if traj.records.is_empty() {
        return Err(Error::Parse("trajectory has no rows".into()));
    }
    Ok(traj)
}

pub fn write_trajectory_file(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory(traj, std::io::BufWriter::new(file))
}

pub fn read_trajectory_file(path: &Path, config: IntegratorConfig) -> Result<Trajectory> {
    let file = std::fs::File::open(path)?;
    read_trajectory(file, config)
}
