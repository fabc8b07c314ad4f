//! CSV output and command-file input.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use phdae::{ImplicitPhSystem, Trajectory, Vector};

/// 17 significant digits, enough for an exact round trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(sys: &dyn ImplicitPhSystem) -> Vec<String> {
    let d = sys.dims();
    let mut cols = vec!["t".to_string()];
    fn indexed(prefix: &'static str, count: usize) -> impl Iterator<Item = String> {
        (1..=count).map(move |i| format!("{prefix}{i}"))
    }
    cols.extend(indexed("r", d.n));
    cols.extend(indexed("p", d.n));
    cols.extend(indexed("nu", d.k));
    cols.extend(indexed("mu", d.k));
    cols.extend(["H", "g_res", "f_res"].map(String::from));
    cols.extend(indexed("y", d.m));
    cols.extend(indexed("u", d.m));
    cols.push("newton_iters".into());
    cols
}

fn trajectory_rows(traj: &Trajectory) -> impl Iterator<Item = Vec<String>> + '_ {
    traj.records.iter().map(|rec| {
        let s = &rec.result;
        let m = &s.multipliers;
        std::iter::once(rec.t)
            .chain(s.state.r.iter().copied())
            .chain(s.state.p.iter().copied())
            .chain(m.nu.iter().copied())
            .chain(m.mu.iter().copied())
            .chain([s.energy, m.g_residual, m.f_residual])
            .chain(s.y.iter().copied())
            .chain(s.u.iter().copied())
            .map(num)
            .chain(std::iter::once(m.newton_iters.to_string()))
            .collect()
    })
}

/// Writes the trajectory; a failure message becomes a trailing `# FAILURE`
/// comment.
pub fn write_trajectory(
    path: &Path,
    sys: &dyn ImplicitPhSystem,
    traj: &Trajectory,
    failure: Option<&str>,
) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(trajectory_header(sys))?;
    for row in trajectory_rows(traj) {
        out.write_record(row)?;
    }
    let mut inner = out.into_inner().map_err(|e| e.into_error())?;
    if let Some(msg) = failure {
        writeln!(inner, "# FAILURE: {}", msg.replace('\n', " "))?;
    }
    inner.flush()
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()
}

/// Reads commands, one row of `m` comma-separated numbers per sample.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_commands(path: &Path, m: usize) -> Result<Vec<Vector>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != m {
            return Err(format!(
                "line {line}: expected {m} values, got {}",
                record.len()
            ));
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format!("line {line}: malformed number '{f}'"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Vector::from_vec(values));
    }
    if rows.is_empty() {
        return Err("command file holds no rows".into());
    }
    Ok(rows)
}
