//! Plain-text edge lists: a `N E` header line, then `E` lines of `src dst`
//! (0-based). The writer emits edges in CSR order.

use std::io::{BufRead, Write};

use super::GraphTopology;
use crate::error::{Error, Result};

pub fn write_edge_list<W: Write>(g: &GraphTopology, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", g.num_nodes(), g.num_edges())?;
    for (u, v) in g.edges() {
        writeln!(out, "{u} {v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_edge_list<R: BufRead>(input: R) -> Result<GraphTopology> {
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("missing `N E` header".into()))?;
    let header = header?;
    let (n, e) = parse_pair(&header, 1)?;

    let mut src = Vec::with_capacity(e);
    let mut dst = Vec::with_capacity(e);
    for (idx, line) in lines {
        let (u, v) = parse_pair(&line?, idx + 1)?;
        src.push(u);
        dst.push(v);
    }
    if src.len() != e {
        return Err(Error::Parse(format!(
            "header declares {e} edges but {} were listed",
            src.len()
        )));
    }
    GraphTopology::from_coo(n, &src, &dst)
}

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Parse(format!(
            "line {lineno}: expected two integers, got `{line}`"
        ))),
    }
}
