//! Plain-text network checkpoints.
//!
//! ```text
//! goalctl-mlp 1
//! sizes 8 64 64 1
//! w0 64 8 <64·8 values, column-major>
//! b0 64 <64 values>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "goalctl-mlp";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_string(net: &Mlp) -> String {
    let mut s = String::new();
    let sizes: Vec<String> = net.sizes().iter().map(|v| v.to_string()).collect();
    writeln!(s, "{FORMAT_NAME} {FORMAT_VERSION}").unwrap();
    writeln!(s, "sizes {}", sizes.join(" ")).unwrap();
    for (i, l) in net.layers.iter().enumerate() {
        write!(s, "w{i} {} {}", l.w.nrows(), l.w.ncols()).unwrap();
        for v in l.w.iter() {
            write!(s, " {v}").unwrap();
        }
        writeln!(s).unwrap();
        write!(s, "b{i} {}", l.b.len()).unwrap();
        for v in l.b.iter() {
            write!(s, " {v}").unwrap();
        }
        writeln!(s).unwrap();
    }
    s
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| bad(format!("missing {what}")))?
        .parse()
        .map_err(|_| bad(format!("invalid {what}")))
}

fn parse_values<'a>(toks: impl Iterator<Item = &'a str>, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals = toks
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("invalid number in {what}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != n {
        return Err(bad(format!("{what}: expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

pub fn from_str(text: &str) -> Result<Mlp> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
    let mut h = header.split_whitespace();
    if h.next() != Some(FORMAT_NAME) {
        return Err(bad("not a network checkpoint"));
    }
    let version = parse_usize(h.next(), "version")?;
    if version != FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let sizes_line = lines.next().ok_or_else(|| bad("missing sizes line"))?;
    let mut st = sizes_line.split_whitespace();
    if st.next() != Some("sizes") {
        return Err(bad("missing sizes line"));
    }
    let sizes = st
        .map(|t| t.parse::<usize>().map_err(|_| bad("invalid layer size")))
        .collect::<Result<Vec<_>>>()?;
    let mut net = Mlp::zeros(&sizes).map_err(|e| bad(e.to_string()))?;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let wl = lines.next().ok_or_else(|| bad(format!("missing w{i}")))?;
        let mut t = wl.split_whitespace();
        if t.next() != Some(format!("w{i}").as_str()) {
            return Err(bad(format!("expected w{i}")));
        }
        let (r, c) = (parse_usize(t.next(), "rows")?, parse_usize(t.next(), "cols")?);
        if (r, c) != layer.w.shape() {
            return Err(bad(format!("w{i} shape {r}x{c} disagrees with sizes")));
        }
        let w = DMatrix::from_vec(r, c, parse_values(t, r * c, &format!("w{i}"))?);

        let bl = lines.next().ok_or_else(|| bad(format!("missing b{i}")))?;
        let mut t = bl.split_whitespace();
        if t.next() != Some(format!("b{i}").as_str()) {
            return Err(bad(format!("expected b{i}")));
        }
        let n = parse_usize(t.next(), "bias length")?;
        if n != layer.b.len() {
            return Err(bad(format!("b{i} length {n} disagrees with sizes")));
        }
        let b = DVector::from_vec(parse_values(t, n, &format!("b{i}"))?);
        *layer = Layer { w, b };
    }
    if lines.next().is_some() {
        return Err(bad("trailing data after last layer"));
    }
    Ok(net)
}

pub fn save(net: &Mlp, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_string(net)).map_err(|e| bad(format!("{}: {e}", path.display())))
}

pub fn load(path: &std::path::Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    from_str(&text)
}
