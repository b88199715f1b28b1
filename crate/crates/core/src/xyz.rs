//! Extended-XYZ trajectories and plain point clouds.
//!
//! Extended XYZ, per frame:
//!
//! ```text
//! <atom count>
//! energy=<real> [key=value ...]
//! <symbol> <x> <y> <z> <fx> <fy> <fz>
//! ...
//! ```
//!
//! Point clouds are `element x y z` lines; blank lines separate groups
//! (molecules or chains) and `#` starts a comment.

use std::io::{BufRead, Write};

use crate::injector::{Configuration, Vec3};
use crate::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits a comment line into `key=value` pairs, honouring double quotes.
pub fn parse_comment(line: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        let mut value = String::new();
        if chars.peek() == Some(&'=') {
            chars.next();
            if chars.peek() == Some(&'"') {
                chars.next();
                for c in chars.by_ref() {
                    if c == '"' {
                        break;
                    }
                    value.push(c);
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
        }
        out.push((key, value));
    }
    out
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, found {tok:?}")))
}

pub fn read_xyz<R: BufRead>(reader: R) -> Result<Vec<Configuration>> {
    let mut lines = reader.lines().enumerate();
    let mut frames = Vec::new();
    loop {
        let (ln, count_line) = loop {
            match lines.next() {
                None => return Ok(frames),
                Some((i, l)) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break (i + 1, l);
                    }
                }
            }
        };
        let n: usize = count_line
            .trim()
            .parse()
            .map_err(|_| parse_err(ln, format!("expected atom count, found {count_line:?}")))?;
        let (cl, comment) = lines
            .next()
            .ok_or_else(|| parse_err(ln + 1, "missing comment line"))?;
        let comment = comment?;
        let mut energy = None;
        let mut extra = Vec::new();
        for (k, v) in parse_comment(&comment) {
            if k.eq_ignore_ascii_case("energy") {
                energy = Some(parse_f64(&v, cl + 1)?);
            } else if !k.eq_ignore_ascii_case("properties") {
                extra.push((k, v));
            }
        }
        let energy = energy.ok_or_else(|| parse_err(cl + 1, "comment line lacks energy=<real>"))?;
        let mut symbols = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces = Vec::with_capacity(n);
        for _ in 0..n {
            let (al, atom) = lines
                .next()
                .ok_or_else(|| parse_err(cl + 1, format!("frame ends before {n} atoms")))?;
            let atom = atom?;
            let toks: Vec<&str> = atom.split_whitespace().collect();
            if toks.len() < 7 {
                return Err(parse_err(
                    al + 1,
                    "atom line needs `symbol x y z fx fy fz`",
                ));
            }
            symbols.push(toks[0].to_string());
            let v: Vec<f64> = toks[1..7]
                .iter()
                .map(|t| parse_f64(t, al + 1))
                .collect::<Result<_>>()?;
            positions.push([v[0], v[1], v[2]]);
            forces.push([v[3], v[4], v[5]]);
        }
        let mut cfg = Configuration::new(symbols, positions, energy, forces)?;
        cfg.extra = extra;
        frames.push(cfg);
    }
}

/// Ten significant digits, plain notation where it stays short.
pub fn fmt_real(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            let t = s.trim_end_matches('0').trim_end_matches('.');
            if t == "-0" {
                "0".to_string()
            } else {
                t.to_string()
            }
        } else {
            s
        }
    } else {
        format!("{v:.9e}")
    }
}

pub fn write_xyz<W: Write>(mut w: W, frames: &[Configuration]) -> Result<()> {
    for f in frames {
        writeln!(w, "{}", f.n_atoms())?;
        write!(w, "energy={}", fmt_real(f.energy))?;
        for (k, v) in &f.extra {
            if v.is_empty() {
                write!(w, " {k}")?;
            } else if v.contains(char::is_whitespace) {
                write!(w, " {k}=\"{v}\"")?;
            } else {
                write!(w, " {k}={v}")?;
            }
        }
        writeln!(w, " Properties=species:S:1:pos:R:3:forces:R:3")?;
        for ((s, p), fo) in f.symbols.iter().zip(&f.positions).zip(&f.forces) {
            writeln!(
                w,
                "{s} {} {} {} {} {} {}",
                fmt_real(p[0]),
                fmt_real(p[1]),
                fmt_real(p[2]),
                fmt_real(fo[0]),
                fmt_real(fo[1]),
                fmt_real(fo[2])
            )?;
        }
    }
    Ok(())
}

/// One molecule or chain of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGroup {
    pub elements: Vec<String>,
    pub positions: Vec<Vec3>,
}

pub fn read_point_cloud<R: BufRead>(reader: R) -> Result<Vec<PointGroup>> {
    let mut groups = Vec::new();
    let mut cur = PointGroup {
        elements: Vec::new(),
        positions: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            if !cur.positions.is_empty() && !line.trim_start().starts_with('#') {
                groups.push(std::mem::replace(
                    &mut cur,
                    PointGroup {
                        elements: Vec::new(),
                        positions: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(i + 1, "point line needs `element x y z`"));
        }
        cur.elements.push(toks[0].to_string());
        cur.positions.push([
            parse_f64(toks[1], i + 1)?,
            parse_f64(toks[2], i + 1)?,
            parse_f64(toks[3], i + 1)?,
        ]);
    }
    if !cur.positions.is_empty() {
        groups.push(cur);
    }
    Ok(groups)
}

impl From<&Configuration> for PointGroup {
    fn from(c: &Configuration) -> Self {
        Self {
            elements: c.symbols.clone(),
            positions: c.positions.clone(),
        }
    }
}

/// Reads either format; a leading integer line selects extended XYZ.
pub fn read_structures<R: BufRead>(mut reader: R) -> Result<Vec<PointGroup>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        Some(l) if l.parse::<usize>().is_ok() => Ok(read_xyz(text.as_bytes())?
            .iter()
            .map(PointGroup::from)
            .collect()),
        _ => read_point_cloud(text.as_bytes()),
    }
}
