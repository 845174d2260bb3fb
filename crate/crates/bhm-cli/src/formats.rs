//! On-disk formats: `BHMHIST 1` histograms and `BHMSPLINE 1` spline files.
//!
//! Reals are printed with 17 significant digits, enough to reproduce any
//! finite f64 bit-for-bit, and both writers are canonical: reading a file
//! and writing it again yields identical bytes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use bhm_core::accum::{BinStats, Domain, Edges, SampleAccumulator};
use bhm_core::nalgebra::{DMatrix, DVector};
use bhm_core::splinefit::{FitDiagnostics, LevelGoodness, SplineModel};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("not a {expect} file")]
    BadHeader { expect: &'static str },
    #[error("inconsistent histogram: {0}")]
    Inconsistent(String),
    #[error("bad spline file: {0}")]
    BadSpline(String),
}

fn bad(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Malformed { line, msg: msg.into() }
}

/// 17 significant digits: the shortest width that reproduces every finite
/// f64 exactly on read-back.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_real(x: f64) -> String {
    if x.is_finite() {
        fmt_real(x)
    } else if x.is_nan() {
        "\"nan\"".to_owned()
    } else if x > 0.0 {
        "\"inf\"".to_owned()
    } else {
        "\"-inf\"".to_owned()
    }
}

// ---------------------------------------------------------------- BHMHIST

pub fn write_hist<W: Write + ?Sized>(w: &mut W, acc: &SampleAccumulator) -> io::Result<()> {
    writeln!(w, "BHMHIST 1")?;
    let d = acc.domain();
    writeln!(w, "domain {} {}", fmt_real(d.x_lo), fmt_real(d.x_hi))?;
    writeln!(w, "K {}", acc.levels())?;
    writeln!(w, "N {}", acc.total())?;
    match acc.edges() {
        Edges::Uniform => writeln!(w, "edges uniform")?,
        Edges::Explicit(e) => {
            write!(w, "edges")?;
            for x in e {
                write!(w, " {}", fmt_real(*x))?;
            }
            writeln!(w)?;
        }
    }
    for (i, b) in acc.bins().iter().enumerate() {
        if b.count > 0 {
            writeln!(w, "bin {i} {} {} {}", b.count, fmt_real(b.mean), fmt_real(b.m2))?;
        }
    }
    Ok(())
}

pub fn read_hist(r: impl BufRead) -> Result<SampleAccumulator, FormatError> {
    let mut lines = r.lines().enumerate();
    let mut next = || -> Result<(usize, String), FormatError> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(bad(0, "unexpected end of file")),
        }
    };

    let (ln, line) = next()?;
    if line.trim() != "BHMHIST 1" {
        let _ = ln;
        return Err(FormatError::BadHeader { expect: "BHMHIST 1" });
    }

    let (ln, line) = next()?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "domain" {
        return Err(bad(ln, "expected `domain <x_lo> <x_hi>`"));
    }
    let x_lo: f64 = parts[1].parse().map_err(|_| bad(ln, "bad x_lo"))?;
    let x_hi: f64 = parts[2].parse().map_err(|_| bad(ln, "bad x_hi"))?;
    let domain = Domain::new(x_lo, x_hi)
        .map_err(|e| FormatError::Inconsistent(e.to_string()))?;

    let (ln, line) = next()?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "K" {
        return Err(bad(ln, "expected `K <levels>`"));
    }
    let k: u32 = parts[1].parse().map_err(|_| bad(ln, "bad K"))?;
    if k > 26 {
        return Err(bad(ln, "K exceeds the 2^26-bin cap"));
    }
    let n_bins = 1usize << k;

    let (ln, line) = next()?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "N" {
        return Err(bad(ln, "expected `N <total>`"));
    }
    let total: u64 = parts[1].parse().map_err(|_| bad(ln, "bad N"))?;

    let (ln, line) = next()?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    let edges = match parts.as_slice() {
        ["edges", "uniform"] => Edges::Uniform,
        ["edges", rest @ ..] if rest.len() == n_bins + 1 => {
            let mut e = Vec::with_capacity(rest.len());
            for s in rest {
                e.push(s.parse().map_err(|_| bad(ln, "bad edge value"))?);
            }
            Edges::Explicit(e)
        }
        ["edges", ..] => return Err(bad(ln, format!("expected {} edges", n_bins + 1))),
        _ => return Err(bad(ln, "expected `edges uniform` or `edges <values>`")),
    };

    let mut bins = vec![BinStats::default(); n_bins];
    for (i, line) in lines {
        let ln = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "bin" {
            return Err(bad(ln, "expected `bin <i> <count> <mean> <m2>`"));
        }
        let idx: usize = parts[1].parse().map_err(|_| bad(ln, "bad bin index"))?;
        if idx >= n_bins {
            return Err(bad(ln, format!("bin index {idx} out of range")));
        }
        if bins[idx].count > 0 {
            return Err(bad(ln, format!("duplicate bin {idx}")));
        }
        bins[idx] = BinStats {
            count: parts[2].parse().map_err(|_| bad(ln, "bad count"))?,
            mean: parts[3].parse().map_err(|_| bad(ln, "bad mean"))?,
            m2: parts[4].parse().map_err(|_| bad(ln, "bad m2"))?,
        };
        if bins[idx].count == 0 {
            return Err(bad(ln, "bin line with zero count"));
        }
    }

    SampleAccumulator::from_parts(domain, k, edges, bins, total)
        .map_err(|e| FormatError::Inconsistent(e.to_string()))
}

pub fn write_hist_file(path: &Path, acc: &SampleAccumulator) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hist(&mut w, acc)?;
    Ok(w.flush()?)
}

pub fn read_hist_file(path: &Path) -> Result<SampleAccumulator, FormatError> {
    read_hist(BufReader::new(File::open(path)?))
}

// -------------------------------------------------------------- BHMSPLINE

pub fn write_spline(
    w: &mut (impl Write + ?Sized),
    model: &SplineModel,
    diag: &FitDiagnostics,
) -> io::Result<()> {
    let lo = model.breakpoints[0];
    let hi = *model.breakpoints.last().unwrap();
    writeln!(w, "{{")?;
    writeln!(w, "  \"format\": \"BHMSPLINE\",")?;
    writeln!(w, "  \"version\": 1,")?;
    writeln!(w, "  \"order\": {},", model.order)?;
    writeln!(w, "  \"domain\": [{}, {}],", json_real(lo), json_real(hi))?;
    writeln!(w, "  \"accepted\": {},", diag.accepted)?;
    writeln!(w, "  \"threshold_used\": {},", json_real(diag.accepted_threshold))?;
    writeln!(w, "  \"constraint_lambda\": {},", json_real(diag.constraint_lambda))?;
    writeln!(w, "  \"objective\": {},", json_real(diag.objective))?;
    writeln!(w, "  \"full_rank\": {},", diag.full_rank)?;
    writeln!(w, "  \"pieces\": [")?;
    for p in 0..model.n_pieces() {
        writeln!(w, "    {{")?;
        writeln!(w, "      \"lo\": {},", json_real(model.breakpoints[p]))?;
        writeln!(w, "      \"hi\": {},", json_real(model.breakpoints[p + 1]))?;
        let coeffs: Vec<String> =
            model.piece_coeffs[p].iter().map(|c| json_real(*c)).collect();
        writeln!(w, "      \"coefficients\": [{}],", coeffs.join(", "))?;
        writeln!(w, "      \"covariance\": [")?;
        let cov = model.piece_cov(p);
        for i in 0..cov.nrows() {
            let row: Vec<String> =
                (0..cov.ncols()).map(|j| json_real(cov[(i, j)])).collect();
            let comma = if i + 1 < cov.nrows() { "," } else { "" };
            writeln!(w, "        [{}]{comma}", row.join(", "))?;
        }
        writeln!(w, "      ]")?;
        let comma = if p + 1 < model.n_pieces() { "," } else { "" };
        writeln!(w, "    }}{comma}")?;
    }
    writeln!(w, "  ],")?;
    writeln!(w, "  \"levels\": [")?;
    for (i, l) in diag.per_level.iter().enumerate() {
        let comma = if i + 1 < diag.per_level.len() { "," } else { "" };
        writeln!(
            w,
            "    {{ \"n\": {}, \"usable\": {}, \"chi2_over_n\": {} }}{comma}",
            l.level,
            l.usable,
            json_real(l.chi2_over_n)
        )?;
    }
    writeln!(w, "  ]")?;
    writeln!(w, "}}")?;
    Ok(())
}

fn real_of(v: &Value, what: &str) -> Result<f64, FormatError> {
    match v {
        Value::Number(n) => {
            n.as_f64().ok_or_else(|| FormatError::BadSpline(format!("{what}: bad number")))
        }
        Value::String(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            _ => Err(FormatError::BadSpline(format!("{what}: bad real `{s}`"))),
        },
        _ => Err(FormatError::BadSpline(format!("{what}: expected a real"))),
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, FormatError> {
    v.get(name)
        .ok_or_else(|| FormatError::BadSpline(format!("missing field `{name}`")))
}

fn uint_of(v: &Value, what: &str) -> Result<u64, FormatError> {
    v.as_u64().ok_or_else(|| FormatError::BadSpline(format!("{what}: expected an integer")))
}

fn array_of<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, FormatError> {
    v.as_array().ok_or_else(|| FormatError::BadSpline(format!("{what}: expected an array")))
}

pub fn read_spline(r: impl Read) -> Result<(SplineModel, FitDiagnostics), FormatError> {
    let root: Value = serde_json::from_reader(r)
        .map_err(|e| FormatError::BadSpline(e.to_string()))?;
    if root.get("format").and_then(Value::as_str) != Some("BHMSPLINE") {
        return Err(FormatError::BadHeader { expect: "BHMSPLINE 1" });
    }
    if root.get("version").and_then(Value::as_u64) != Some(1) {
        return Err(FormatError::BadHeader { expect: "BHMSPLINE 1" });
    }

    let order = uint_of(field(&root, "order")?, "order")? as u32;
    let np = order as usize + 1;
    let pieces = array_of(field(&root, "pieces")?, "pieces")?;
    if pieces.is_empty() {
        return Err(FormatError::BadSpline("no pieces".into()));
    }

    let mut breakpoints = Vec::with_capacity(pieces.len() + 1);
    let mut piece_coeffs = Vec::with_capacity(pieces.len());
    let mut blocks = Vec::with_capacity(pieces.len());
    for (p, piece) in pieces.iter().enumerate() {
        let lo = real_of(field(piece, "lo")?, "piece lo")?;
        let hi = real_of(field(piece, "hi")?, "piece hi")?;
        if p == 0 {
            breakpoints.push(lo);
        } else if breakpoints[p] != lo {
            return Err(FormatError::BadSpline(format!(
                "piece {p} starts at {lo}, previous ends at {}",
                breakpoints[p]
            )));
        }
        if !(hi > lo) {
            return Err(FormatError::BadSpline(format!("piece {p} is empty")));
        }
        breakpoints.push(hi);

        let cs = array_of(field(piece, "coefficients")?, "coefficients")?;
        if cs.len() != np {
            return Err(FormatError::BadSpline(format!(
                "piece {p}: expected {np} coefficients, got {}",
                cs.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(np);
        for c in cs {
            coeffs.push(real_of(c, "coefficient")?);
        }
        piece_coeffs.push(coeffs);

        let rows = array_of(field(piece, "covariance")?, "covariance")?;
        if rows.len() != np {
            return Err(FormatError::BadSpline(format!("piece {p}: covariance not {np}x{np}")));
        }
        let mut block = DMatrix::zeros(np, np);
        for (i, row) in rows.iter().enumerate() {
            let row = array_of(row, "covariance row")?;
            if row.len() != np {
                return Err(FormatError::BadSpline(format!(
                    "piece {p}: covariance not {np}x{np}"
                )));
            }
            for (j, v) in row.iter().enumerate() {
                block[(i, j)] = real_of(v, "covariance entry")?;
            }
        }
        blocks.push(block);
    }

    let dom = array_of(field(&root, "domain")?, "domain")?;
    if dom.len() != 2
        || real_of(&dom[0], "domain lo")? != breakpoints[0]
        || real_of(&dom[1], "domain hi")? != *breakpoints.last().unwrap()
    {
        return Err(FormatError::BadSpline("domain does not match pieces".into()));
    }

    // equivalent parameterization: free vector = concatenated piece
    // coefficients, block-diagonal covariance, selector maps. piece_cov
    // then returns the stored blocks bit-for-bit.
    let n_pieces = piece_coeffs.len();
    let n_free = n_pieces * np;
    let mut theta = DVector::zeros(n_free);
    let mut free_cov = DMatrix::zeros(n_free, n_free);
    let mut param_map = Vec::with_capacity(n_pieces);
    for p in 0..n_pieces {
        let off = p * np;
        let mut map = DMatrix::zeros(np, n_free);
        for i in 0..np {
            theta[off + i] = piece_coeffs[p][i];
            map[(i, off + i)] = 1.0;
            for j in 0..np {
                free_cov[(off + i, off + j)] = blocks[p][(i, j)];
            }
        }
        param_map.push(map);
    }

    let model = SplineModel { order, breakpoints, piece_coeffs, theta, free_cov, param_map };

    let mut per_level = Vec::new();
    for l in array_of(field(&root, "levels")?, "levels")? {
        per_level.push(LevelGoodness {
            level: uint_of(field(l, "n")?, "level n")? as u32,
            usable: uint_of(field(l, "usable")?, "level usable")? as usize,
            chi2_over_n: real_of(field(l, "chi2_over_n")?, "chi2_over_n")?,
        });
    }
    let accepted = field(&root, "accepted")?
        .as_bool()
        .ok_or_else(|| FormatError::BadSpline("accepted: expected a bool".into()))?;
    let full_rank = field(&root, "full_rank")?
        .as_bool()
        .ok_or_else(|| FormatError::BadSpline("full_rank: expected a bool".into()))?;
    let diag = FitDiagnostics {
        per_level,
        accepted_threshold: real_of(field(&root, "threshold_used")?, "threshold_used")?,
        pieces: n_pieces,
        accepted,
        constraint_lambda: real_of(
            field(&root, "constraint_lambda")?,
            "constraint_lambda",
        )?,
        objective: real_of(field(&root, "objective")?, "objective")?,
        full_rank,
    };
    Ok((model, diag))
}

pub fn write_spline_file(
    path: &Path,
    model: &SplineModel,
    diag: &FitDiagnostics,
) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spline(&mut w, model, diag)?;
    Ok(w.flush()?)
}

pub fn read_spline_file(path: &Path) -> Result<(SplineModel, FitDiagnostics), FormatError> {
    read_spline(BufReader::new(File::open(path)?))
}
