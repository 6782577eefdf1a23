//! Plain-text serialization of paths and oracle tables.
//!
//! CSV files carry the header `t,z_1,...,z_d`, LF line endings, and floats in
//! shortest round-trip form.

use std::io::{self, Write};

use serde::Serialize;

use crate::path::{ContinuousPath, Path};
use crate::stats::TransientDistribution;

pub fn csv_header<W: Write>(w: &mut W, prefix: &str, d: usize, extra: &[&str]) -> io::Result<()> {
    write!(w, "t")?;
    for j in 1..=d {
        write!(w, ",{prefix}_{j}")?;
    }
    for e in extra {
        write!(w, ",{e}")?;
    }
    w.write_all(b"\n")
}

/// One row per breakpoint.
pub fn write_path_csv_rows<W: Write>(w: &mut W, path: &Path) -> io::Result<()> {
    for (t, s) in &path.breakpoints {
        write!(w, "{t}")?;
        for x in s {
            write!(w, ",{x}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One row per recorded step.
pub fn write_continuous_csv_rows<W: Write>(w: &mut W, path: &ContinuousPath) -> io::Result<()> {
    for k in 0..path.len() {
        write!(w, "{}", path.times[k])?;
        for x in path.state(k) {
            write!(w, ",{x}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a, T> {
    path: u64,
    t: f64,
    state: &'a [T],
    #[serde(skip_serializing_if = "Option::is_none")]
    jump: Option<bool>,
}

pub fn write_path_jsonl<W: Write>(w: &mut W, index: u64, path: &Path) -> io::Result<()> {
    for (t, s) in &path.breakpoints {
        serde_json::to_writer(&mut *w, &JsonRow { path: index, t: *t, state: s, jump: None })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_continuous_jsonl<W: Write>(w: &mut W, index: u64, path: &ContinuousPath) -> io::Result<()> {
    for k in 0..path.len() {
        let row = JsonRow {
            path: index,
            t: path.times[k],
            state: path.state(k),
            jump: Some(path.jumped[k]),
        };
        serde_json::to_writer(&mut *w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Oracle table: `z_1,...,z_d,probability`, then a `leak` row.
pub fn write_oracle_csv<W: Write>(w: &mut W, law: &TransientDistribution) -> io::Result<()> {
    let d = law.states.first().map_or(0, Vec::len);
    let cols: Vec<String> = (1..=d).map(|j| format!("z_{j}")).collect();
    writeln!(w, "{},probability", cols.join(","))?;
    for (s, p) in law.states.iter().zip(&law.probs) {
        let st: Vec<String> = s.iter().map(i64::to_string).collect();
        writeln!(w, "{},{p}", st.join(","))?;
    }
    writeln!(w, "{}leak,{}", ",".repeat(d.saturating_sub(1)), law.leak)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let path = Path {
            breakpoints: vec![(0.0, vec![2, 1]), (0.25, vec![1, 1])],
            horizon: 1.0,
        };
        let mut buf = Vec::new();
        csv_header(&mut buf, "z", 2, &[]).unwrap();
        write_path_csv_rows(&mut buf, &path).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,z_1,z_2\n0,2,1\n0.25,1,1\n");
        let mut buf = Vec::new();
        write_path_jsonl(&mut buf, 3, &path).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().next().unwrap(),
            r#"{"path":3,"t":0.0,"state":[2,1]}"#
        );
    }
}
