//! Text instance files.
//!
//! ```text
//! acrab-instance v1
//! # free-form provenance comment lines
//! [mdp]
//! n_states 2
//! n_actions 2
//! discount 0.9
//! initial
//! 1 0
//! reward
//! <n_states rows of n_actions means>
//! reward_kind
//! <n_states rows of d|b tokens>
//! transition
//! <n_states * n_actions rows (s-major) of n_states probabilities>
//! [behavior]
//! <policy rows>
//! [target]
//! <policy rows>
//! [fclass]
//! v_max 10
//! member
//! <table rows>
//! ...
//! [wclass]
//! b_w 4
//! member
//! <table rows>
//! [audit]
//! policy
//! <policy rows>
//! ```
//!
//! Numbers are written in Rust's shortest round-trip form, so loading a saved
//! file reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::classes::{AuditPolicySet, ValueClass, WeightClass};
use crate::error::{Error, Result};
use crate::mdp::{Policy, RewardKind, TabularMdp, Table};

pub const HEADER: &str = "acrab-instance v1";

/// Everything an experiment needs: the MDP, data-generating and target
/// policies, and the hypothesis classes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFile {
    pub provenance: String,
    pub mdp: TabularMdp,
    pub behavior: Policy,
    pub target: Policy,
    pub f_class: ValueClass,
    pub w_class: WeightClass,
    pub audit: AuditPolicySet,
}

fn push_rows(out: &mut String, t: &Table) {
    for s in 0..t.nrows() {
        let row: Vec<String> = t.row(s).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

impl InstanceFile {
    pub fn to_text(&self) -> String {
        let mdp = &self.mdp;
        let (ns, na) = mdp.shape();
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for line in self.provenance.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("[mdp]\n");
        let _ = writeln!(out, "n_states {ns}");
        let _ = writeln!(out, "n_actions {na}");
        let _ = writeln!(out, "discount {:?}", mdp.discount());
        out.push_str("initial\n");
        push_rows(&mut out, &Table::from_iterator(1, ns, mdp.initial_dist().iter().copied()));
        out.push_str("reward\n");
        push_rows(&mut out, mdp.reward_mean());
        out.push_str("reward_kind\n");
        for s in 0..ns {
            let row: Vec<&str> = (0..na)
                .map(|a| match mdp.reward_kind(s, a) {
                    RewardKind::Deterministic => "d",
                    RewardKind::Bernoulli => "b",
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out.push_str("transition\n");
        for s in 0..ns {
            for a in 0..na {
                push_rows(&mut out, &Table::from_row_slice(1, ns, mdp.next_dist(s, a)));
            }
        }
        out.push_str("[behavior]\n");
        push_rows(&mut out, self.behavior.probs());
        out.push_str("[target]\n");
        push_rows(&mut out, self.target.probs());
        out.push_str("[fclass]\n");
        let _ = writeln!(out, "v_max {:?}", self.f_class.v_max());
        for f in self.f_class.members() {
            out.push_str("member\n");
            push_rows(&mut out, f);
        }
        out.push_str("[wclass]\n");
        let _ = writeln!(out, "b_w {:?}", self.w_class.b_w());
        for w in self.w_class.members() {
            out.push_str("member\n");
            push_rows(&mut out, w);
        }
        out.push_str("[audit]\n");
        for p in self.audit.members() {
            out.push_str("policy\n");
            push_rows(&mut out, p.probs());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        InstanceFile::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).instance()
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    provenance: Vec<&'a str>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = Vec::new();
        let mut provenance = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(c) = line.strip_prefix('#') {
                provenance.push(c.strip_prefix(' ').unwrap_or(c));
            } else if !line.is_empty() {
                lines.push((i + 1, line));
            }
        }
        Parser {
            lines,
            pos: 0,
            provenance,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let line = self
            .lines
            .get(self.pos)
            .or(self.lines.last())
            .map_or(0, |(n, _)| *n);
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|(_, l)| *l)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.peek().ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        let line = self.next()?;
        if line != token {
            self.pos -= 1;
            return Err(self.err(format!("expected `{token}`, found `{line}`")));
        }
        Ok(())
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next()?;
        let value = line
            .strip_prefix(key)
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| {
                self.pos -= 1;
                self.err(format!("expected `{key} <value>`"))
            })?;
        value.parse().map_err(|_| {
            self.pos -= 1;
            self.err(format!("bad value for {key}: `{value}`"))
        })
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| {
                self.pos -= 1;
                self.err(format!("bad number in `{line}`"))
            })?;
        if vals.len() != len {
            self.pos -= 1;
            return Err(self.err(format!("expected {len} numbers, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn table(&mut self, rows: usize, cols: usize) -> Result<Table> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(Table::from_row_slice(rows, cols, &data))
    }

    fn policy(&mut self, ns: usize, na: usize) -> Result<Policy> {
        let t = self.table(ns, na)?;
        Policy::new(t).map_err(|e| self.err(e.to_string()))
    }

    /// Tables introduced by `marker` lines until the next section.
    fn members(&mut self, marker: &str, ns: usize, na: usize) -> Result<Vec<Table>> {
        let mut out = Vec::new();
        while self.peek() == Some(marker) {
            self.pos += 1;
            out.push(self.table(ns, na)?);
        }
        Ok(out)
    }

    fn mdp(&mut self) -> Result<TabularMdp> {
        self.expect("[mdp]")?;
        let ns: usize = self.keyed("n_states")?;
        let na: usize = self.keyed("n_actions")?;
        if ns == 0 || na == 0 {
            return Err(self.err("dimensions must be positive"));
        }
        let discount: f64 = self.keyed("discount")?;
        self.expect("initial")?;
        let initial = self.row(ns)?;
        self.expect("reward")?;
        let reward = self.table(ns, na)?;
        self.expect("reward_kind")?;
        let mut kinds = Vec::with_capacity(ns * na);
        for _ in 0..ns {
            let line = self.next()?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != na {
                self.pos -= 1;
                return Err(self.err(format!("expected {na} reward kinds")));
            }
            for t in toks {
                kinds.push(match t {
                    "d" => RewardKind::Deterministic,
                    "b" => RewardKind::Bernoulli,
                    other => {
                        self.pos -= 1;
                        return Err(self.err(format!("unknown reward kind `{other}`")));
                    }
                });
            }
        }
        self.expect("transition")?;
        let mut transition = Vec::with_capacity(ns);
        for _ in 0..ns {
            let mut per_action = Vec::with_capacity(na);
            for _ in 0..na {
                per_action.push(self.row(ns)?);
            }
            transition.push(per_action);
        }
        TabularMdp::new(transition, reward, kinds, discount, initial).map_err(|e| self.err(e.to_string()))
    }

    fn instance(mut self) -> Result<InstanceFile> {
        match self.lines.first() {
            Some((_, h)) if *h == HEADER => self.pos = 1,
            _ => return Err(Error::Parse { line: 1, msg: format!("missing `{HEADER}` header") }),
        }
        let mdp = self.mdp()?;
        let (ns, na) = mdp.shape();
        self.expect("[behavior]")?;
        let behavior = self.policy(ns, na)?;
        self.expect("[target]")?;
        let target = self.policy(ns, na)?;

        self.expect("[fclass]")?;
        let v_max: f64 = self.keyed("v_max")?;
        let fs = self.members("member", ns, na)?;
        let f_class = ValueClass::new(fs, v_max).map_err(|e| self.err(e.to_string()))?;

        self.expect("[wclass]")?;
        let b_w: f64 = self.keyed("b_w")?;
        let ws = self.members("member", ns, na)?;
        let w_class = WeightClass::new(ws, b_w).map_err(|e| self.err(e.to_string()))?;

        self.expect("[audit]")?;
        let mut audit = Vec::new();
        while self.peek() == Some("policy") {
            self.pos += 1;
            audit.push(self.policy(ns, na)?);
        }
        let audit = AuditPolicySet::new(audit).map_err(|e| self.err(e.to_string()))?;
        if let Some(extra) = self.peek() {
            return Err(self.err(format!("unexpected trailing content `{extra}`")));
        }
        Ok(InstanceFile {
            provenance: self.provenance.join("\n"),
            mdp,
            behavior,
            target,
            f_class,
            w_class,
            audit,
        })
    }
}
