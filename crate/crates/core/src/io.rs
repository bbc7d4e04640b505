//! Text formats. Numbers are written with 17 significant digits so a file
//! read back reproduces the values bit for bit. Lines starting with `#` are
//! comments and are skipped on reading.
//!
//! * Dataset: a line `n p sigma`, then `n` rows `x_1,…,x_p,y`.
//! * Truth sidecar (`<dataset>.truth`): rows `j,beta_j,z_j`.
//! * Samples: header `sweep,z,beta_0,…,beta_{p-1},log_joint`, optionally
//!   followed by `omega_0,…,omega_{n-1}`.
//! * Vectors: header `path,beta_0,…`, one row per path.
//! * Table: header `z,prob,log_prob`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gibbs::GibbsSample;
use crate::model::{Dataset, JointState, ModelIndicator, PosteriorTable, Truth};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Parse(format!("not an integer: {s:?}")))
}

/// Non-comment, non-blank lines.
fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<String>> {
    reader.lines().filter_map(|line| match line {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#')).then(|| Ok(t.to_string()))
        }
        Err(e) => Some(Err(Error::Io(e))),
    })
}

pub fn write_header<W: Write>(w: &mut W, header: &str) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

pub fn write_dataset<W: Write>(w: &mut W, data: &Dataset, sigma: f64, header: &str) -> Result<()> {
    write_header(w, header)?;
    writeln!(w, "{} {} {}", data.n(), data.p(), fmt_f64(sigma))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.p()).map(|j| fmt_f64(data.x()[(i, j)])).collect();
        row.push(fmt_f64(data.y()[i]));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a dataset and its noise level.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<(Dataset, f64)> {
    let mut lines = data_lines(reader);
    let head = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let fields: Vec<&str> = head.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse(format!("expected `n p sigma`, got {head:?}")));
    }
    let (n, p, sigma) = (parse_usize(fields[0])?, parse_usize(fields[1])?, parse_f64(fields[2])?);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let line = lines.next().ok_or_else(|| Error::Dimension(format!("dataset has fewer than {n} rows")))??;
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != p + 1 {
            return Err(Error::Dimension(format!("row {i} has {} fields, expected {}", vals.len(), p + 1)));
        }
        for j in 0..p {
            x[(i, j)] = parse_f64(vals[j])?;
        }
        y[i] = parse_f64(vals[p])?;
    }
    if lines.next().is_some() {
        return Err(Error::Dimension(format!("dataset has more than {n} rows")));
    }
    Ok((Dataset::new(x, y)?, sigma))
}

pub fn write_truth<W: Write>(w: &mut W, truth: &Truth, header: &str) -> Result<()> {
    write_header(w, header)?;
    for j in 0..truth.beta_star.len() {
        writeln!(w, "{j},{},{}", fmt_f64(truth.beta_star[j]), u8::from(truth.z_star.get(j)))?;
    }
    Ok(())
}

pub fn read_truth<R: BufRead>(reader: R, p: usize) -> Result<Truth> {
    let mut beta = DVector::zeros(p);
    let mut bits = vec![false; p];
    let mut seen = vec![false; p];
    for line in data_lines(reader) {
        let line = line?;
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != 3 {
            return Err(Error::Parse(format!("truth row {line:?} needs `j,beta,z`")));
        }
        let j = parse_usize(vals[0])?;
        if j >= p {
            return Err(Error::Dimension(format!("truth index {j} out of range")));
        }
        beta[j] = parse_f64(vals[1])?;
        bits[j] = match vals[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("indicator {other:?} is not 0 or 1"))),
        };
        seen[j] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Dimension("truth file does not cover every coordinate".into()));
    }
    Ok(Truth { beta_star: beta, z_star: ModelIndicator::from_bits(bits) })
}

pub fn truth_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".truth");
    PathBuf::from(s)
}

/// Writes the dataset and, when present, its truth sidecar.
pub fn save_dataset(path: &Path, data: &Dataset, sigma: f64, header: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, data, sigma, header)?;
    w.flush()?;
    if let Some(t) = data.truth() {
        let mut w = BufWriter::new(File::create(truth_path(path))?);
        write_truth(&mut w, t, header)?;
        w.flush()?;
    }
    Ok(())
}

/// Reads the dataset and attaches the sidecar truth if it exists.
pub fn load_dataset(path: &Path) -> Result<(Dataset, f64)> {
    let (data, sigma) = read_dataset(BufReader::new(File::open(path)?))?;
    let tp = truth_path(path);
    if tp.exists() {
        let truth = read_truth(BufReader::new(File::open(tp)?), data.p())?;
        return Ok((data.with_truth(truth)?, sigma));
    }
    Ok((data, sigma))
}

/// Streaming writer for joint states.
pub struct SampleWriter<W: Write> {
    out: W,
    p: usize,
    omega_len: usize,
}

impl<W: Write> SampleWriter<W> {
    pub fn new(mut out: W, header: &str, p: usize, omega_len: usize) -> Result<Self> {
        write_header(&mut out, header)?;
        let mut cols = vec!["sweep".to_string(), "z".to_string()];
        cols.extend((0..p).map(|j| format!("beta_{j}")));
        cols.push("log_joint".into());
        cols.extend((0..omega_len).map(|i| format!("omega_{i}")));
        writeln!(out, "{}", cols.join(","))?;
        Ok(Self { out, p, omega_len })
    }

    pub fn write(&mut self, sample: &GibbsSample, omega: Option<&DVector<f64>>) -> Result<()> {
        if sample.state.beta.len() != self.p {
            return Err(Error::Dimension("sample has the wrong length".into()));
        }
        let mut row = vec![sample.sweep.to_string(), sample.state.z.to_bit_string()];
        row.extend(sample.state.beta.iter().map(|&b| fmt_f64(b)));
        row.push(fmt_f64(sample.log_joint));
        match (omega, self.omega_len) {
            (_, 0) => {}
            (Some(w), len) if w.len() == len => row.extend(w.iter().map(|&v| fmt_f64(v))),
            _ => return Err(Error::Dimension("omega block has the wrong length".into())),
        }
        writeln!(self.out, "{}", row.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Reads rows written by [`SampleWriter`]; any ω block is ignored.
pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<GibbsSample>> {
    let mut lines = data_lines(reader);
    let head = lines.next().ok_or_else(|| Error::Parse("empty sample file".into()))??;
    let cols: Vec<&str> = head.split(',').collect();
    let p = cols.iter().filter(|c| c.starts_with("beta_")).count();
    if cols.len() < p + 3 || cols[0] != "sweep" || cols[1] != "z" {
        return Err(Error::Parse("sample header must start with `sweep,z`".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols.len() {
            return Err(Error::Dimension(format!("sample row has {} fields, expected {}", vals.len(), cols.len())));
        }
        let z = ModelIndicator::parse_bits(vals[1])?;
        let beta = DVector::from_iterator(p, vals[2..2 + p].iter().map(|v| parse_f64(v)).collect::<Result<Vec<_>>>()?);
        out.push(GibbsSample {
            sweep: parse_usize(vals[0])?,
            state: JointState::new(beta, z)?,
            log_joint: parse_f64(vals[2 + p])?,
        });
    }
    Ok(out)
}

pub fn write_vectors<W: Write>(w: &mut W, header: &str, rows: &[DVector<f64>]) -> Result<()> {
    write_header(w, header)?;
    let p = rows.first().map_or(0, |r| r.len());
    let mut cols = vec!["path".to_string()];
    cols.extend((0..p).map(|j| format!("beta_{j}")));
    writeln!(w, "{}", cols.join(","))?;
    for (i, r) in rows.iter().enumerate() {
        let vals: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{i},{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_vectors<R: BufRead>(reader: R) -> Result<Vec<DVector<f64>>> {
    let mut lines = data_lines(reader);
    let head = lines.next().ok_or_else(|| Error::Parse("empty vector file".into()))??;
    let width = head.split(',').count();
    lines
        .map(|line| {
            let line = line?;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != width {
                return Err(Error::Dimension("vector row has the wrong width".into()));
            }
            Ok(DVector::from_vec(vals[1..].iter().map(|v| parse_f64(v)).collect::<Result<Vec<_>>>()?))
        })
        .collect()
}

pub fn write_table<W: Write>(w: &mut W, header: &str, table: &PosteriorTable) -> Result<()> {
    write_header(w, header)?;
    writeln!(w, "z,prob,log_prob")?;
    for i in 0..table.len() {
        writeln!(
            w,
            "{},{},{}",
            table.model(i).to_bit_string(),
            fmt_f64(table.prob_at(i)),
            fmt_f64(table.log_prob_at(i))
        )?;
    }
    Ok(())
}

/// Reads a table file as `(model, probability)` pairs.
pub fn read_table<R: BufRead>(reader: R) -> Result<Vec<(ModelIndicator, f64)>> {
    let mut lines = data_lines(reader);
    let head = lines.next().ok_or_else(|| Error::Parse("empty table file".into()))??;
    if !head.starts_with("z,prob") {
        return Err(Error::Parse("table header must be `z,prob,log_prob`".into()));
    }
    lines
        .map(|line| {
            let line = line?;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != 3 {
                return Err(Error::Parse(format!("table row {line:?} needs three fields")));
            }
            Ok((ModelIndicator::parse_bits(vals[0])?, parse_f64(vals[1])?))
        })
        .collect()
}
