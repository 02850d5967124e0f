//! Trace files: one CSV row per recorded path point.
//!
//! Columns are `rho, segment_index, event_kind, x_1..x_n, zero_eq, zero_in`,
//! then one multiplier column per equality (`lambda_i`) and inequality
//! (`omega_j`), blank while the constraint is off its zero set, then any
//! extra series. Reals carry 17 significant digits so they read back bit for
//! bit.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use penalty_path::{ConstraintRef, Point, Trace};

/// A derived per-point series appended after the multipliers.
pub struct Extra<'a> {
    pub name: &'a str,
    pub value: &'a dyn Fn(&Point) -> f64,
}

pub fn real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn row(out: &mut String, p: &Point, segment: usize, event: &str, extras: &[Extra]) {
    let _ = write!(out, "{},{segment},{event}", real(p.rho));
    for v in p.x.iter() {
        let _ = write!(out, ",{}", real(*v));
    }
    let _ = write!(out, ",{},{}", p.config.zero_eq().len(), p.config.zero_in().len());
    let refs = (0..p.config.eq.len())
        .map(ConstraintRef::Equality)
        .chain((0..p.config.ineq.len()).map(ConstraintRef::Inequality));
    for c in refs {
        match p.multiplier(c) {
            Some(m) => {
                let _ = write!(out, ",{}", real(m));
            }
            None => out.push(','),
        }
    }
    for e in extras {
        let _ = write!(out, ",{}", real((e.value)(p)));
    }
    out.push('\n');
}

pub fn header(n: usize, m: usize, k: usize, extras: &[Extra]) -> String {
    let mut cols = vec!["rho".to_string(), "segment_index".into(), "event_kind".into()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.push("zero_eq".into());
    cols.push("zero_in".into());
    cols.extend((1..=m).map(|i| format!("lambda_{i}")));
    cols.extend((1..=k).map(|j| format!("omega_{j}")));
    cols.extend(extras.iter().map(|e| e.name.to_string()));
    cols.join(",") + "\n"
}

/// Renders a trace: the start point, initial transitions, every segment's
/// recorded points followed by its events, and the terminal point.
pub fn write_trace(trace: &Trace, extras: &[Extra]) -> String {
    let s = &trace.start;
    let mut out = header(s.x.len(), s.config.eq.len(), s.config.ineq.len(), extras);
    row(&mut out, s, 0, "start", extras);
    for e in &trace.initial_events {
        row(&mut out, &e.point, 0, &e.kind.to_string(), extras);
    }
    for (k, seg) in trace.segments.iter().enumerate() {
        for p in seg.points() {
            row(&mut out, p, k + 1, "", extras);
        }
        for e in &seg.events {
            row(&mut out, &e.point, k + 1, &e.kind.to_string(), extras);
        }
    }
    let t = &trace.termination;
    row(&mut out, &t.point, trace.segments.len(), &t.kind.to_string(), extras);
    out
}

/// A trace file read back as named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rho: Vec<f64>,
    pub segment: Vec<usize>,
    pub event: Vec<String>,
    /// `values[c][r]` for every column after `event_kind`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl TraceTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, head)) = lines.next() else {
            bail!("trace is empty");
        };
        let names: Vec<&str> = head.split(',').collect();
        if names.get(..3) != Some(&["rho", "segment_index", "event_kind"]) {
            bail!("trace header must start with rho,segment_index,event_kind");
        }
        let columns: Vec<String> = names[3..].iter().map(|s| s.to_string()).collect();
        let mut t = TraceTable {
            values: vec![Vec::new(); columns.len()],
            columns,
            rho: Vec::new(),
            segment: Vec::new(),
            event: Vec::new(),
        };
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                bail!("line {}: {} fields, header has {}", ln + 1, fields.len(), names.len());
            }
            t.rho.push(fields[0].parse().with_context(|| format!("line {}: rho", ln + 1))?);
            t.segment
                .push(fields[1].parse().with_context(|| format!("line {}: segment_index", ln + 1))?);
            t.event.push(fields[2].to_string());
            for (c, f) in fields[3..].iter().enumerate() {
                let v = if f.is_empty() {
                    None
                } else {
                    Some(f.parse().with_context(|| format!("line {}: {}", ln + 1, t.columns[c]))?)
                };
                t.values[c].push(v);
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(&self.values[c])
    }

    /// Coordinates and extra series; counts and multipliers are left out.
    pub fn plotted_series(&self) -> Vec<&str> {
        self.columns
            .iter()
            .map(String::as_str)
            .filter(|n| !(n.starts_with("lambda_") || n.starts_with("omega_") || n.starts_with("zero_")))
            .collect()
    }
}

/// One piece of a series between consecutive events.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub series: String,
    pub piece: usize,
    pub points: Vec<(f64, f64)>,
}

/// Splits every plotted series at event rows. An event row ends the current
/// piece and starts the next one; repeated identical points are dropped.
pub fn polylines(table: &TraceTable) -> Vec<Polyline> {
    let mut out = Vec::new();
    for name in table.plotted_series() {
        let col = table.column(name).unwrap_or_default();
        let mut piece: Vec<(f64, f64)> = Vec::new();
        let mut index = 0;
        for r in 0..table.len() {
            let Some(v) = col[r] else { continue };
            let pt = (table.rho[r], v);
            if piece.last() != Some(&pt) {
                piece.push(pt);
            }
            let event = &table.event[r];
            let is_break = !event.is_empty() && event != "start";
            if is_break && piece.iter().any(|q| q.0 != pt.0) {
                out.push(Polyline {
                    series: name.to_string(),
                    piece: index,
                    points: std::mem::take(&mut piece),
                });
                index += 1;
                piece.push(pt);
            }
        }
        if !piece.is_empty() && (index == 0 || piece.len() > 1) {
            out.push(Polyline {
                series: name.to_string(),
                piece: index,
                points: piece,
            });
        }
    }
    out
}

pub fn write_polylines(lines: &[Polyline]) -> String {
    let mut out = String::from("series,piece,rho,value\n");
    for l in lines {
        for (r, v) in &l.points {
            let _ = writeln!(out, "{},{},{},{}", l.series, l.piece, real(*r), real(*v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_bit_for_bit() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6f64.powf(0.2), f64::MAX, 5e-324] {
            let back: f64 = real(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    const SMALL: &str = "rho,segment_index,event_kind,x_1,zero_eq,zero_in,omega_1\n\
        0,0,start,2,0,0,\n\
        1,1,,1,0,0,\n\
        2,1,,0,0,0,\n\
        2,1,hit-in-1,0,0,1,2\n\
        3,1,stationary,0,0,1,2\n";

    #[test]
    fn parses_blank_multipliers() {
        let t = TraceTable::parse(SMALL).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.column("omega_1").unwrap()[0], None);
        assert_eq!(t.column("omega_1").unwrap()[3], Some(2.0));
        assert_eq!(t.plotted_series(), vec!["x_1"]);
    }

    #[test]
    fn splits_at_events() {
        let t = TraceTable::parse(SMALL).unwrap();
        let lines = polylines(&t);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].points, vec![(0.0, 2.0), (1.0, 1.0), (2.0, 0.0)]);
        assert_eq!(lines[1].points, vec![(2.0, 0.0), (3.0, 0.0)]);
    }

    #[test]
    fn single_point_path() {
        let t = TraceTable::parse(
            "rho,segment_index,event_kind,x_1,zero_eq,zero_in\n0,0,start,0.5,0,0\n0,0,stationary,0.5,0,0\n",
        )
        .unwrap();
        let lines = polylines(&t);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].points, vec![(0.0, 0.5)]);
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = TraceTable::parse("rho,segment_index,event_kind,x_1\n0,0,start\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
