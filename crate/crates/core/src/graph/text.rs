//! Line-oriented text format for graphs and values.
//!
//! Graph files hold one declaration per line:
//!
//! ```text
//! VAR POSE 0
//! VAR DPOINT 0 1 2 5
//! CONST POSE 0
//! FACTOR 7 OBSERVATION POSE 5 DPOINT 0 1 2 5 zx zy zz cxx cxy cxz cyy cyz czz
//! FACTOR 8 RIGIDITY DPOINT 0 1 2 5 DPOINT 0 1 3 5 SEGMENT 0 1 2 3 var
//! FACTOR 9 MOTION DPOINT 0 1 2 5 DPOINT 0 1 2 6 MOTION 0 1 0 cxx cxy cxz cyy cyz czz
//! ```
//!
//! Values files hold a variable id followed by its value: `tx ty tz qx qy qz qw`
//! for poses and motions, `x y z` for points, one number for segment lengths.
//! Numbers are written with 17 significant digits. `#` starts a comment line.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{FactorGraph, FactorId, FactorRegistry, GraphError, Value, VariableId, VariableKind, Values};
use crate::geometry::{Pose, Rotation};
use crate::numfmt::exact;

fn parse_err(line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse { line, message: message.into() }
}

struct Tokens<'a> {
    line: usize,
    items: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        Tokens { line, items: text.split_whitespace().peekable() }
    }

    fn word(&mut self, what: &str) -> Result<&'a str, GraphError> {
        self.items.next().ok_or_else(|| parse_err(self.line, format!("missing {what}")))
    }

    fn number(&mut self, what: &str) -> Result<f64, GraphError> {
        let w = self.word(what)?;
        w.parse().map_err(|_| parse_err(self.line, format!("bad number {w:?} for {what}")))
    }

    fn integer<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, GraphError> {
        let w = self.word(what)?;
        w.parse().map_err(|_| parse_err(self.line, format!("bad index {w:?} for {what}")))
    }

    fn variable(&mut self) -> Result<VariableId, GraphError> {
        let tag = self.word("variable tag")?;
        let kind = VariableKind::from_tag(tag)
            .ok_or_else(|| parse_err(self.line, format!("unknown variable tag {tag:?}")))?;
        let idx = (0..kind.index_count())
            .map(|_| self.integer::<u32>("variable index"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VariableId::from_indices(kind, &idx).expect("index count matches kind"))
    }

    fn finish(mut self) -> Result<(), GraphError> {
        match self.items.next() {
            None => Ok(()),
            Some(extra) => Err(parse_err(self.line, format!("unexpected trailing token {extra:?}"))),
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn write_graph(graph: &FactorGraph) -> String {
    let mut out = String::from("# factor graph v1\n");
    for v in graph.variables() {
        let _ = writeln!(out, "VAR {v}");
    }
    for v in graph.constants() {
        let _ = writeln!(out, "CONST {v}");
    }
    for e in graph.factors() {
        let _ = write!(out, "FACTOR {} {}", e.id, e.factor.kind().tag());
        for k in e.factor.keys() {
            let _ = write!(out, " {k}");
        }
        for p in e.factor.params() {
            let _ = write!(out, " {}", exact(p));
        }
        out.push('\n');
    }
    out
}

pub fn read_graph(text: &str, registry: &FactorRegistry) -> Result<FactorGraph, GraphError> {
    let mut graph = FactorGraph::new();
    let located = |line: usize, e: GraphError| match e {
        GraphError::Parse { .. } => e,
        other => parse_err(line, other.to_string()),
    };
    for (line, content) in content_lines(text) {
        let mut t = Tokens::new(line, content);
        match t.word("record type")? {
            "VAR" => {
                let id = t.variable()?;
                t.finish()?;
                graph.add_variable(id).map_err(|e| located(line, e))?;
            }
            "CONST" => {
                let id = t.variable()?;
                t.finish()?;
                graph.hold_constant(id).map_err(|e| located(line, e))?;
            }
            "FACTOR" => {
                let id = FactorId(t.integer("factor id")?);
                let tag = t.word("factor tag")?;
                let spec = registry
                    .get(tag)
                    .ok_or_else(|| parse_err(line, format!("unknown factor tag {tag:?}")))?;
                let keys = (0..spec.arity).map(|_| t.variable()).collect::<Result<Vec<_>, _>>()?;
                let params =
                    (0..spec.params).map(|_| t.number("factor parameter")).collect::<Result<Vec<_>, _>>()?;
                t.finish()?;
                let factor = (spec.build)(&keys, &params).map_err(|e| located(line, e))?;
                graph.insert_factor(id, factor).map_err(|e| located(line, e))?;
            }
            other => return Err(parse_err(line, format!("unknown record type {other:?}"))),
        }
    }
    Ok(graph)
}

fn write_pose_numbers(out: &mut String, p: &Pose) {
    let [w, x, y, z] = p.rotation.wxyz();
    for v in [p.translation.x, p.translation.y, p.translation.z, x, y, z, w] {
        let _ = write!(out, " {}", exact(v));
    }
}

pub fn write_values(values: &Values) -> String {
    let mut out = String::from("# values v1\n");
    for (id, v) in values.iter() {
        let _ = write!(out, "{id}");
        match v {
            Value::Pose(p) => write_pose_numbers(&mut out, p),
            Value::Point(p) => {
                for c in p.iter() {
                    let _ = write!(out, " {}", exact(*c));
                }
            }
            Value::Scalar(s) => {
                let _ = write!(out, " {}", exact(*s));
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_values(text: &str) -> Result<Values, GraphError> {
    let mut values = Values::new();
    for (line, content) in content_lines(text) {
        let mut t = Tokens::new(line, content);
        let id = t.variable()?;
        let value = match id.kind() {
            VariableKind::CameraPose | VariableKind::ObjectMotion => {
                let mut n = [0.0; 7];
                for v in n.iter_mut() {
                    *v = t.number("pose component")?;
                }
                let rotation = Rotation::from_wxyz(n[6], n[3], n[4], n[5])
                    .map_err(|e| parse_err(line, e.to_string()))?;
                Value::Pose(Pose::new(rotation, Vector3::new(n[0], n[1], n[2])))
            }
            VariableKind::StaticPoint | VariableKind::DynamicPoint => Value::Point(Vector3::new(
                t.number("x")?,
                t.number("y")?,
                t.number("z")?,
            )),
            VariableKind::SegmentLength => Value::Scalar(t.number("segment length")?),
        };
        t.finish()?;
        if values.contains(&id) {
            return Err(parse_err(line, format!("duplicate value for {id}")));
        }
        values.insert(id, value).map_err(|e| parse_err(line, e.to_string()))?;
    }
    Ok(values)
}
