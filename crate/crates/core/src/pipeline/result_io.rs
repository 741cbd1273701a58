//! Plain-text segmentation results, one block per window.
//!
//! ```text
//! nfseg-result v1
//! window <index> start <t0> duration <dt> sensor <w> <h> observations <n>
//! energy <data> <smoothness> <label_cost> <total>
//! iterations <k>
//! background <label>
//! model <label> <rho> <theta> <t_x> <t_y>
//! box <label> <x_min> <y_min> <x_max> <y_max>
//! o <t> <x> <y> <n_x> <n_y> <label>
//! end
//! ```
//!
//! Windows without a segmentation carry `empty` instead of the energy
//! through observation lines. Flow is written in px/window. Floats use the
//! shortest representation that parses back to the same value, so a
//! write/read/write cycle is byte-identical. The energy trace is not stored.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mrf::EnergyBreakdown;
use crate::types::{AffineMotionModel, BBox, LabelId, Labeling, NormalFlowObservation, SegmentationResult, Window};

pub const RESULT_HEADER: &str = "nfseg-result v1";

/// One window block of a result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub index: i64,
    pub window: Window,
    pub result: Option<SegmentationResult>,
}

/// Writes one window block; the header is the caller's job.
pub fn write_record(out: &mut impl Write, index: i64, window: &Window, result: Option<&SegmentationResult>) -> std::io::Result<()> {
    writeln!(
        out,
        "window {index} start {} duration {} sensor {} {} observations {}",
        window.start_time,
        window.duration,
        window.width,
        window.height,
        window.len()
    )?;
    match result {
        None => writeln!(out, "empty")?,
        Some(r) => {
            let e = r.final_energy;
            writeln!(out, "energy {} {} {} {}", e.data, e.smoothness, e.label_cost, e.total)?;
            writeln!(out, "iterations {}", r.iterations)?;
            writeln!(out, "background {}", r.background_label)?;
            for (l, m) in &r.models {
                writeln!(out, "model {l} {} {} {} {}", m.rho, m.theta, m.t_x, m.t_y)?;
            }
            for (l, b) in &r.imo_boxes {
                writeln!(out, "box {l} {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max)?;
            }
            for (o, l) in window.observations.iter().zip(r.labeling.assignment()) {
                writeln!(out, "o {} {} {} {} {} {l}", o.t, o.x, o.y, o.n.x, o.n.y)?;
            }
        }
    }
    writeln!(out, "end")
}

/// Writes the header followed by one block per window.
pub fn write_results<'a>(
    out: &mut impl Write,
    records: impl IntoIterator<Item = (i64, &'a Window, Option<&'a SegmentationResult>)>,
) -> std::io::Result<()> {
    writeln!(out, "{RESULT_HEADER}")?;
    for (index, window, result) in records {
        write_record(out, index, window, result)?;
    }
    Ok(())
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn next_str(&mut self) -> Result<&'a str> {
        self.it
            .next()
            .ok_or_else(|| Error::format(self.line, "line ends early"))
    }

    fn num<T: std::str::FromStr>(&mut self) -> Result<T> {
        let s = self.next_str()?;
        s.parse()
            .map_err(|_| Error::format(self.line, format!("cannot parse `{s}`")))
    }

    fn keyword(&mut self, k: &str) -> Result<()> {
        let s = self.next_str()?;
        if s == k {
            Ok(())
        } else {
            Err(Error::format(self.line, format!("expected `{k}`, got `{s}`")))
        }
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(s) => Err(Error::format(self.line, format!("unexpected trailing `{s}`"))),
        }
    }
}

/// Parses a whole result file. Line numbers in errors are 1-based.
pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == RESULT_HEADER => {}
        _ => return Err(Error::format(1, format!("missing `{RESULT_HEADER}` header"))),
    }
    let mut records = Vec::new();
    while let Some((ln, line)) = lines.next() {
        let mut f = Fields { line: ln, it: line.split_whitespace() };
        f.keyword("window")?;
        let index: i64 = f.num()?;
        f.keyword("start")?;
        let start: f64 = f.num()?;
        f.keyword("duration")?;
        let duration: f64 = f.num()?;
        f.keyword("sensor")?;
        let width: u32 = f.num()?;
        let height: u32 = f.num()?;
        f.keyword("observations")?;
        let count: usize = f.num()?;
        f.finish()?;
        let mut window = Window::new(start, duration, width, height);

        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(ln, format!("window block ends before `{what}`")))
        };
        let (ln, line) = next("energy")?;
        let result = if line == "empty" {
            None
        } else {
            let mut f = Fields { line: ln, it: line.split_whitespace() };
            f.keyword("energy")?;
            let (d, s, l, t): (f64, f64, f64, f64) = (f.num()?, f.num()?, f.num()?, f.num()?);
            f.finish()?;
            let final_energy = EnergyBreakdown { data: d, smoothness: s, label_cost: l, total: t };

            let (ln, line) = next("iterations")?;
            let mut f = Fields { line: ln, it: line.split_whitespace() };
            f.keyword("iterations")?;
            let iterations: usize = f.num()?;
            f.finish()?;

            let (ln, line) = next("background")?;
            let mut f = Fields { line: ln, it: line.split_whitespace() };
            f.keyword("background")?;
            let background_label: LabelId = f.num()?;
            f.finish()?;

            let mut models = BTreeMap::new();
            let mut imo_boxes = Vec::new();
            let mut assignment = Vec::with_capacity(count);
            let mut pending = next("observations")?;
            loop {
                let (ln, line) = pending;
                let mut f = Fields { line: ln, it: line.split_whitespace() };
                match f.next_str()? {
                    "model" => {
                        let l: LabelId = f.num()?;
                        let m = AffineMotionModel::new(f.num()?, f.num()?, f.num()?, f.num()?);
                        models.insert(l, m);
                    }
                    "box" => {
                        let l: LabelId = f.num()?;
                        imo_boxes.push((l, BBox::new(f.num()?, f.num()?, f.num()?, f.num()?)));
                    }
                    "o" => {
                        let (t, x, y, nx, ny): (f64, f64, f64, f64, f64) = (f.num()?, f.num()?, f.num()?, f.num()?, f.num()?);
                        window.observations.push(NormalFlowObservation::new(t, x, y, nx, ny));
                        assignment.push(f.num()?);
                        if assignment.len() == count {
                            f.finish()?;
                            break;
                        }
                    }
                    other => return Err(Error::format(ln, format!("unexpected `{other}`"))),
                }
                f.finish()?;
                pending = next("observations")?;
            }
            let labeling = Labeling::new(assignment);
            for l in labeling.active_labels() {
                if !models.contains_key(l) {
                    return Err(Error::MissingModel(*l));
                }
            }
            Some(SegmentationResult {
                labeling,
                models,
                background_label,
                imo_boxes,
                final_energy,
                energy_trace: Vec::new(),
                iterations,
            })
        };
        if result.is_none() && count != 0 {
            return Err(Error::format(ln, "an empty window cannot list observations"));
        }
        let (ln, line) = next("end")?;
        if line != "end" {
            return Err(Error::format(ln, format!("expected `end`, got `{line}`")));
        }
        records.push(ResultRecord { index, window, result });
    }
    Ok(records)
}

pub fn read_results(reader: impl BufRead) -> Result<Vec<ResultRecord>> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    parse_results(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Window, SegmentationResult) {
        let mut w = Window::new(0.02, 0.01, 64, 48);
        w.observations = vec![
            NormalFlowObservation::new(0.021, 3.0, 4.0, 0.1, -0.2),
            NormalFlowObservation::new(0.0255, 10.0, 11.0, 1.0 / 3.0, 2.5),
            NormalFlowObservation::new(0.029, 30.0, 20.0, -7.25, 0.0),
        ];
        let mut models = BTreeMap::new();
        models.insert(1, AffineMotionModel::new(1.0, 0.0, 0.1, 0.0));
        models.insert(4, AffineMotionModel::new(0.99, 0.003, 2.0 / 3.0, -1.5));
        let r = SegmentationResult {
            labeling: Labeling::new(vec![1, 4, 1]),
            models,
            background_label: 1,
            imo_boxes: vec![(4, BBox::new(7.0, 8.0, 14.0, 15.0))],
            final_energy: EnergyBreakdown::new(0.125, 1.0, 60.0),
            energy_trace: Vec::new(),
            iterations: 3,
        };
        (w, r)
    }

    fn to_text(records: &[(i64, &Window, Option<&SegmentationResult>)]) -> String {
        let mut buf = Vec::new();
        write_results(&mut buf, records.iter().copied()).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (w, r) = sample();
        let empty = Window::new(0.03, 0.01, 64, 48);
        let text = to_text(&[(2, &w, Some(&r)), (3, &empty, None)]);
        let parsed = parse_results(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].window, w);
        assert_eq!(parsed[0].result.as_ref(), Some(&r));
        assert!(parsed[1].result.is_none());
        let again: Vec<_> = parsed.iter().map(|p| (p.index, &p.window, p.result.as_ref())).collect();
        assert_eq!(to_text(&again), text);
    }

    #[test]
    fn malformed_input_reports_the_line() {
        let (w, r) = sample();
        let text = to_text(&[(0, &w, Some(&r))]);
        assert!(matches!(parse_results("nope\n"), Err(Error::Format { record: 1, .. })));
        let broken = text.replace("o 0.0255", "o zz");
        let line = text.lines().position(|l| l.starts_with("o 0.0255")).unwrap() + 1;
        assert!(matches!(parse_results(&broken), Err(Error::Format { record, .. }) if record == line));
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(parse_results(&truncated).is_err());
        let no_model = text.replace("model 4 ", "model 5 ");
        assert!(matches!(parse_results(&no_model), Err(Error::MissingModel(4))));
    }
}
