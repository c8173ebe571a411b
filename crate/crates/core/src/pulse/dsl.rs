//! Textual pulse-sequence language.
//!
//! ```text
//! pulse := ("pi" | "pi/2" | "rot(" FLOAT "rad)") target transition ["phase=" (x|y|FLOAT"rad")] ["if" cond]
//! target := A | B | AB
//! transition := 0+ | 0- | dq | n
//! cond := (mI=+1/2 | mI=-1/2 | mS=0 | mS=+1 | mS=-1) "@" (A|B)
//! delay := "wait" FLOAT (ns|us|ms)
//! ```
//! `n` drives the 15N nuclear spin of the target defect.

use std::fmt;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Angle {
    HalfPi,
    Pi,
    Radians(f64),
}

impl Angle {
    pub fn value(&self) -> f64 {
        match self {
            Angle::HalfPi => FRAC_PI_2,
            Angle::Pi => PI,
            Angle::Radians(r) => *r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Defect {
    A,
    B,
}

impl Defect {
    pub fn index(&self) -> usize {
        match self {
            Defect::A => 0,
            Defect::B => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    A,
    B,
    AB,
}

impl Target {
    pub fn defects(&self) -> &'static [Defect] {
        match self {
            Target::A => &[Defect::A],
            Target::B => &[Defect::B],
            Target::AB => &[Defect::A, Defect::B],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    ZeroPlus,
    ZeroMinus,
    /// Direct `+1 ↔ -1` rotation, identity on `0`.
    DoubleQuantum,
    Nuclear,
}

impl Transition {
    /// Basis indices `(up, down)` of the driven pair inside the local space.
    pub fn pair(&self) -> (usize, usize) {
        match self {
            Transition::ZeroPlus => (0, 1),
            Transition::ZeroMinus => (1, 2),
            Transition::DoubleQuantum => (0, 2),
            Transition::Nuclear => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    X,
    Y,
    Radians(f64),
}

impl Phase {
    pub fn value(&self) -> f64 {
        match self {
            Phase::X => 0.0,
            Phase::Y => FRAC_PI_2,
            Phase::Radians(r) => *r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Twice the nuclear projection.
    Nuclear { two_mi: i8, on: Defect },
    Electron { ms: i8, on: Defect },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseOp {
    pub angle: Angle,
    pub target: Target,
    pub transition: Transition,
    pub phase: Phase,
    pub condition: Option<Condition>,
}

impl PulseOp {
    pub fn new(angle: Angle, target: Target, transition: Transition, phase: Phase) -> Self {
        PulseOp {
            angle,
            target,
            transition,
            phase,
            condition: None,
        }
    }

    pub fn when(mut self, condition: Condition) -> Self {
        self.condition = Some(condition);
        self
    }

    pub fn needs_nuclear_space(&self) -> bool {
        self.condition.is_some() || self.transition == Transition::Nuclear
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    Ns,
    Us,
    Ms,
}

impl TimeUnit {
    fn exponent(&self) -> i32 {
        match self {
            TimeUnit::Ns => -9,
            TimeUnit::Us => -6,
            TimeUnit::Ms => -3,
        }
    }

    fn suffix(&self) -> &'static str {
        match self {
            TimeUnit::Ns => "ns",
            TimeUnit::Us => "us",
            TimeUnit::Ms => "ms",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duration {
    pub value: f64,
    pub unit: TimeUnit,
}

impl Duration {
    pub fn new(value: f64, unit: TimeUnit) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(NvError::InvalidArgument(format!("duration must be >= 0, got {value}")));
        }
        Ok(Duration { value, unit })
    }

    /// Picks the unit that prints most compactly.
    pub fn from_seconds(s: f64) -> Result<Self> {
        let unit = if s >= 1e-3 {
            TimeUnit::Ms
        } else if s >= 1e-6 || s == 0.0 {
            TimeUnit::Us
        } else {
            TimeUnit::Ns
        };
        let sci = format!("{s:e}");
        let (mant, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
        let exp: i32 = exp.parse().unwrap_or(0);
        let value = format!("{mant}e{}", exp - unit.exponent()).parse().unwrap_or(f64::NAN);
        Duration::new(value, unit)
    }

    /// Decimal value shifted by the unit exponent, then rounded once.
    pub fn seconds(&self) -> f64 {
        format!("{}e{}", self.value, self.unit.exponent())
            .parse()
            .unwrap_or(self.value * 10f64.powi(self.unit.exponent()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SequenceItem {
    Pulse(PulseOp),
    Delay(Duration),
}

/// Consecutive pulses applied at one instant, or a free-evolution interval.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Pulses(Vec<PulseOp>),
    Delay(Duration),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub items: Vec<SequenceItem>,
    pub source: String,
}

impl PulseSequence {
    pub fn from_items(items: Vec<SequenceItem>) -> Self {
        let mut s = PulseSequence {
            items,
            source: String::new(),
        };
        s.source = s.to_text();
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&item.to_string());
            out.push('\n');
        }
        out
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out: Vec<Block> = Vec::new();
        for item in &self.items {
            match item {
                SequenceItem::Delay(d) => out.push(Block::Delay(*d)),
                SequenceItem::Pulse(p) => match out.last_mut() {
                    Some(Block::Pulses(v)) => v.push(*p),
                    _ => out.push(Block::Pulses(vec![*p])),
                },
            }
        }
        out
    }

    pub fn total_duration(&self) -> f64 {
        self.items
            .iter()
            .map(|i| match i {
                SequenceItem::Delay(d) => d.seconds(),
                _ => 0.0,
            })
            .sum()
    }

    pub fn needs_nuclear_space(&self) -> bool {
        self.items
            .iter()
            .any(|i| matches!(i, SequenceItem::Pulse(p) if p.needs_nuclear_space()))
    }

    /// Rejects nuclear transitions and conditions when compiling for the electron-only space.
    pub fn validate_space(&self, full: bool) -> Result<()> {
        if !full && self.needs_nuclear_space() {
            return Err(NvError::InvalidArgument(
                "conditional or nuclear pulses need the 36-dimensional space".into(),
            ));
        }
        Ok(())
    }

    pub fn then(&self, other: &PulseSequence) -> PulseSequence {
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        PulseSequence::from_items(items)
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lhs, on) = match self {
            Condition::Nuclear { two_mi, on } => {
                (if *two_mi > 0 { "mI=+1/2" } else { "mI=-1/2" }, on)
            }
            Condition::Electron { ms, on } => (
                match ms {
                    1 => "mS=+1",
                    0 => "mS=0",
                    _ => "mS=-1",
                },
                on,
            ),
        };
        write!(f, "{lhs}@{}", if *on == Defect::A { "A" } else { "B" })
    }
}

impl fmt::Display for SequenceItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceItem::Delay(d) => write!(f, "wait {}{}", fmt_float(d.value), d.unit.suffix()),
            SequenceItem::Pulse(p) => {
                let angle = match p.angle {
                    Angle::HalfPi => "pi/2".to_string(),
                    Angle::Pi => "pi".to_string(),
                    Angle::Radians(r) => format!("rot({}rad)", fmt_float(r)),
                };
                let target = match p.target {
                    Target::A => "A",
                    Target::B => "B",
                    Target::AB => "AB",
                };
                let tr = match p.transition {
                    Transition::ZeroPlus => "0+",
                    Transition::ZeroMinus => "0-",
                    Transition::DoubleQuantum => "dq",
                    Transition::Nuclear => "n",
                };
                let phase = match p.phase {
                    Phase::X => "x".to_string(),
                    Phase::Y => "y".to_string(),
                    Phase::Radians(r) => format!("{}rad", fmt_float(r)),
                };
                write!(f, "{angle} {target} {tr} phase={phase}")?;
                if let Some(c) = p.condition {
                    write!(f, " if {c}")?;
                }
                Ok(())
            }
        }
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut col = 0;
    for (byte, ch) in line.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                out.push(Token {
                    text: &line[b..byte],
                    column: c,
                });
            }
        } else if start.is_none() {
            start = Some((byte, col));
        }
    }
    if let Some((b, c)) = start {
        out.push(Token {
            text: &line[b..],
            column: c,
        });
    }
    out
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> NvError {
    NvError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn parse_float(s: &str) -> Option<f64> {
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        && s.chars().any(|c| c.is_ascii_digit());
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_defect(s: &str) -> Option<Defect> {
    match s {
        "A" => Some(Defect::A),
        "B" => Some(Defect::B),
        _ => None,
    }
}

fn parse_condition(tok: &Token, line: usize) -> Result<Condition> {
    let (lhs, on) = tok
        .text
        .split_once('@')
        .ok_or_else(|| syntax(line, tok.column, "condition needs '@A' or '@B'"))?;
    let on = parse_defect(on).ok_or_else(|| {
        syntax(line, tok.column + lhs.chars().count() + 1, "condition defect must be A or B")
    })?;
    match lhs {
        "mI=+1/2" => Ok(Condition::Nuclear { two_mi: 1, on }),
        "mI=-1/2" => Ok(Condition::Nuclear { two_mi: -1, on }),
        "mS=+1" => Ok(Condition::Electron { ms: 1, on }),
        "mS=0" => Ok(Condition::Electron { ms: 0, on }),
        "mS=-1" => Ok(Condition::Electron { ms: -1, on }),
        _ => Err(syntax(line, tok.column, format!("unknown condition '{lhs}'"))),
    }
}

fn parse_line(toks: &[Token], line: usize) -> Result<SequenceItem> {
    let head = &toks[0];
    if head.text == "wait" {
        let arg = toks
            .get(1)
            .ok_or_else(|| syntax(line, head.column + 4, "wait needs a duration"))?;
        if let Some(extra) = toks.get(2) {
            return Err(syntax(line, extra.column, "unexpected token after duration"));
        }
        let unit = [("ns", TimeUnit::Ns), ("us", TimeUnit::Us), ("ms", TimeUnit::Ms)]
            .iter()
            .find(|(s, _)| arg.text.ends_with(s))
            .map(|(_, u)| *u)
            .ok_or_else(|| syntax(line, arg.column, "duration needs a unit of ns, us or ms"))?;
        let num = &arg.text[..arg.text.len() - 2];
        let value = parse_float(num).ok_or_else(|| syntax(line, arg.column, "invalid duration value"))?;
        let d = Duration::new(value, unit).map_err(|_| syntax(line, arg.column, "duration must be >= 0"))?;
        return Ok(SequenceItem::Delay(d));
    }
    let angle = match head.text {
        "pi" => Angle::Pi,
        "pi/2" => Angle::HalfPi,
        t if t.starts_with("rot(") && t.ends_with("rad)") => {
            let inner = &t[4..t.len() - 4];
            Angle::Radians(
                parse_float(inner).ok_or_else(|| syntax(line, head.column + 4, "invalid rotation angle"))?,
            )
        }
        _ => {
            return Err(syntax(
                line,
                head.column,
                format!("expected 'pi', 'pi/2', 'rot(..rad)' or 'wait', found '{}'", head.text),
            ))
        }
    };
    let after_head = head.column + head.text.chars().count();
    let tt = toks
        .get(1)
        .ok_or_else(|| syntax(line, after_head, "missing target"))?;
    let target = match tt.text {
        "A" => Target::A,
        "B" => Target::B,
        "AB" => Target::AB,
        _ => return Err(syntax(line, tt.column, format!("unknown target '{}'", tt.text))),
    };
    let tr = toks
        .get(2)
        .ok_or_else(|| syntax(line, tt.column + tt.text.chars().count(), "missing transition"))?;
    let transition = match tr.text {
        "0+" => Transition::ZeroPlus,
        "0-" => Transition::ZeroMinus,
        "dq" => Transition::DoubleQuantum,
        "n" => Transition::Nuclear,
        _ => return Err(syntax(line, tr.column, format!("unknown transition '{}'", tr.text))),
    };
    let mut phase = Phase::X;
    let mut condition = None;
    let mut i = 3;
    if let Some(t) = toks.get(i) {
        if let Some(p) = t.text.strip_prefix("phase=") {
            phase = match p {
                "x" => Phase::X,
                "y" => Phase::Y,
                _ => Phase::Radians(
                    p.strip_suffix("rad")
                        .and_then(parse_float)
                        .ok_or_else(|| syntax(line, t.column + 6, format!("invalid phase '{p}'")))?,
                ),
            };
            i += 1;
        }
    }
    if let Some(t) = toks.get(i) {
        if t.text != "if" {
            return Err(syntax(line, t.column, format!("unexpected token '{}'", t.text)));
        }
        let ct = toks
            .get(i + 1)
            .ok_or_else(|| syntax(line, t.column + 2, "missing condition after 'if'"))?;
        condition = Some(parse_condition(ct, line)?);
        i += 2;
    }
    if let Some(t) = toks.get(i) {
        return Err(syntax(line, t.column, format!("unexpected token '{}'", t.text)));
    }
    Ok(SequenceItem::Pulse(PulseOp {
        angle,
        target,
        transition,
        phase,
        condition,
    }))
}

pub fn parse_sequence(text: &str) -> Result<PulseSequence> {
    let mut items = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let toks = tokenize(line);
        if toks.is_empty() {
            continue;
        }
        items.push(parse_line(&toks, n + 1)?);
    }
    Ok(PulseSequence {
        items,
        source: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_simultaneous_pulse() {
        let s = parse_sequence("pi/2 AB 0+ phase=y").unwrap();
        assert_eq!(
            s.items,
            vec![SequenceItem::Pulse(PulseOp::new(
                Angle::HalfPi,
                Target::AB,
                Transition::ZeroPlus,
                Phase::Y
            ))]
        );
    }

    #[test]
    fn malformed_transition_reports_column() {
        match parse_sequence("pi A 0%") {
            Err(NvError::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 6)),
            other => panic!("{other:?}"),
        }
        match parse_sequence("# header\n  wait 3us\n pi  C 0+") {
            Err(NvError::Syntax { line, column, .. }) => assert_eq!((line, column), (3, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_errors() {
        for bad in [
            "wait 3",
            "wait -1us",
            "wait 1us 2",
            "pi",
            "pi A",
            "pi A 0+ phase=z",
            "pi A 0+ if",
            "pi A 0+ if mI=+1/2",
            "pi A 0+ if mI=+1/2@C",
            "pi A 0+ when",
            "rot(abcrad) A 0+",
            "pulse A 0+",
        ] {
            assert!(matches!(parse_sequence(bad), Err(NvError::Syntax { .. })), "{bad}");
        }
    }

    #[test]
    fn comments_conditions_and_rotations() {
        let s = parse_sequence("rot(0.25rad) B n phase=1.5rad if mS=-1@B # note\n\nwait 12.5us\n").unwrap();
        assert_eq!(s.items.len(), 2);
        match s.items[0] {
            SequenceItem::Pulse(p) => {
                assert_eq!(p.angle, Angle::Radians(0.25));
                assert_eq!(p.phase, Phase::Radians(1.5));
                assert_eq!(p.condition, Some(Condition::Electron { ms: -1, on: Defect::B }));
            }
            _ => panic!(),
        }
        assert_eq!(s.total_duration(), 12.5e-6);
        assert!(s.validate_space(false).is_err());
        assert!(s.validate_space(true).is_ok());
    }

    #[test]
    fn round_trip() {
        let text = "pi/2 AB 0+ phase=y\nwait 12.68us\npi A dq\nwait 0.5ms\npi/2 B 0- phase=-0.3rad if mI=-1/2@A\n";
        let a = parse_sequence(text).unwrap();
        let b = parse_sequence(&a.to_text()).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn blocks_group_simultaneous_pulses() {
        let s = parse_sequence("pi/2 AB 0+\npi AB 0-\nwait 1us\npi AB 0+\nwait 1us\npi/2 AB 0+").unwrap();
        let b = s.blocks();
        assert_eq!(b.len(), 5);
        assert!(matches!(&b[0], Block::Pulses(v) if v.len() == 2));
    }

    #[test]
    fn decimal_durations() {
        let d = Duration::new(0.1, TimeUnit::Us).unwrap();
        assert_eq!(d.seconds(), 1e-7);
        let e = Duration::from_seconds(12.68e-6).unwrap();
        assert_eq!(e.unit, TimeUnit::Us);
        assert_eq!(e.value, 12.68);
        assert_eq!(e.seconds(), 12.68e-6);
    }
}
