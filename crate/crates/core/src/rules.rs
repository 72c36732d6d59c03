//! Disjunctive rule sets translated from subspace feature ranges.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iforest::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    /// `x > thr`
    #[serde(rename = ">")]
    Gt,
    /// `x <= thr`
    #[serde(rename = "<=")]
    Le,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Gt => ">",
            Op::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub f: usize,
    pub op: Op,
    pub thr: f64,
}

impl Predicate {
    pub fn matches(&self, x: &[f64]) -> bool {
        match self.op {
            Op::Gt => x[self.f] > self.thr,
            Op::Le => x[self.f] <= self.thr,
        }
    }
}

/// Conjunction of predicates; the empty conjunction is `true`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Conjunction(pub Vec<Predicate>);

impl Conjunction {
    /// One predicate per finite bound, features ascending, lower bound first.
    pub fn from_bounds(bounds: &[Interval]) -> Self {
        let mut preds = Vec::new();
        for (f, b) in bounds.iter().enumerate() {
            if b.lo.is_finite() {
                preds.push(Predicate { f, op: Op::Gt, thr: b.lo });
            }
            if b.hi.is_finite() {
                preds.push(Predicate { f, op: Op::Le, thr: b.hi });
            }
        }
        Conjunction(preds)
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        self.0.iter().all(|p| p.matches(x))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn canonical(&self) -> Vec<Predicate> {
        let mut p = self.0.clone();
        p.sort_by_key(|a| (a.f, a.op));
        p
    }
}

/// Disjunction of conjunctions; the empty rule set is `false`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    pub disjuncts: Vec<Conjunction>,
}

impl RuleSet {
    pub fn new(disjuncts: Vec<Conjunction>) -> Self {
        RuleSet { disjuncts }
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        self.disjuncts.iter().any(|c| c.matches(x))
    }

    pub fn is_empty(&self) -> bool {
        self.disjuncts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.disjuncts.len()
    }

    /// Canonical text form, e.g. `((x0 > 1.000000) & (x1 <= 2.000000)) or (x2 > 0.500000)`.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.parse()
    }
}

fn fmt_predicate(p: &Predicate) -> String {
    format!("(x{} {} {:.6})", p.f, p.op.symbol(), p.thr)
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.disjuncts.is_empty() {
            return f.write_str("false");
        }
        for (i, c) in self.disjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" or ")?;
            }
            let preds = c.canonical();
            match preds.len() {
                0 => f.write_str("true")?,
                1 => f.write_str(&fmt_predicate(&preds[0]))?,
                _ => {
                    let body: Vec<String> = preds.iter().map(fmt_predicate).collect();
                    write!(f, "({})", body.join(" & "))?;
                }
            }
        }
        Ok(())
    }
}

fn parse_predicate(s: &str) -> Result<Predicate> {
    let bad = || Error::RuleParse(s.to_string());
    let inner = s.strip_prefix('(').and_then(|s| s.strip_suffix(')')).ok_or_else(bad)?;
    let mut parts = inner.split_whitespace();
    let (Some(var), Some(op), Some(thr), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let f = var.strip_prefix('x').and_then(|n| n.parse().ok()).ok_or_else(bad)?;
    let op = match op {
        ">" => Op::Gt,
        "<=" => Op::Le,
        _ => return Err(bad()),
    };
    let thr = thr.parse().map_err(|_| bad())?;
    Ok(Predicate { f, op, thr })
}

impl FromStr for RuleSet {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "false" {
            return Ok(RuleSet::default());
        }
        let mut disjuncts = Vec::new();
        for d in text.split(" or ") {
            let d = d.trim();
            if d == "true" {
                disjuncts.push(Conjunction::default());
                continue;
            }
            let body = if d.starts_with("((") && d.ends_with("))") { &d[1..d.len() - 1] } else { d };
            let preds = body.split(" & ").map(|p| parse_predicate(p.trim())).collect::<Result<Vec<_>>>()?;
            disjuncts.push(Conjunction(preds));
        }
        Ok(RuleSet { disjuncts })
    }
}
