//! Solver-agnostic linear / mixed-integer model.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl RowSense {
    fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.sense {
            RowSense::Le => (a - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - a).max(0.0),
            RowSense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: ObjSense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { sense: ObjSense::Maximize, terms: Vec::new(), constant: 0.0 }
    }
}

/// Physical quantity of a keyed decision variable. The prefix is the first
/// component of the variable name `<quantity>_<entity>_<t>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quantity {
    Storage,
    AvgStorage,
    Release,
    Spill,
    Inflow,
    Elevation,
    Tailwater,
    Turbined,
    HeadLoss,
    Head,
    Power,
    Commitment,
    Startup,
    Peak,
}

impl Quantity {
    pub fn prefix(self) -> &'static str {
        match self {
            Quantity::Storage => "v",
            Quantity::AvgStorage => "va",
            Quantity::Release => "q",
            Quantity::Spill => "qnp",
            Quantity::Inflow => "i",
            Quantity::Elevation => "e",
            Quantity::Tailwater => "tw",
            Quantity::Turbined => "qp",
            Quantity::HeadLoss => "hl",
            Quantity::Head => "h",
            Quantity::Power => "p",
            Quantity::Commitment => "u",
            Quantity::Startup => "s",
            Quantity::Peak => "m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarKey {
    pub quantity: Quantity,
    pub entity: String,
    pub period: usize,
}

impl VarKey {
    pub fn new(quantity: Quantity, entity: &str, period: usize) -> Self {
        Self { quantity, entity: entity.to_string(), period }
    }

    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.quantity.prefix(), self.entity, self.period)
    }
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("constraint `{constraint}` references undeclared variable #{var}")]
    UndeclaredVariable { constraint: String, var: usize },
    #[error("objective references undeclared variable #{0}")]
    UndeclaredObjectiveVariable(usize),
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("variable `{name}` has inverted or NaN bounds [{lower}, {upper}]")]
    BadBounds { name: String, lower: f64, upper: f64 },
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbstractModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
    pub index: BTreeMap<VarKey, VarId>,
}

impl AbstractModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        self.variables.push(Variable { name: name.into(), kind, lower, upper });
        VarId(self.variables.len() - 1)
    }

    pub fn add_keyed_var(&mut self, key: VarKey, kind: VarKind, lower: f64, upper: f64) -> VarId {
        let id = self.add_var(key.name(), kind, lower, upper);
        self.index.insert(key, id);
        id
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> ConstraintId {
        self.constraints.push(Constraint { name: name.into(), terms, sense, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn var(&self, quantity: Quantity, entity: &str, period: usize) -> Option<VarId> {
        self.index.get(&VarKey::new(quantity, entity, period)).copied()
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        let v = &mut self.variables[id.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn fix(&mut self, id: VarId, value: f64) {
        self.set_bounds(id, value, value);
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Variables whose name starts with `prefix`.
    pub fn count_prefixed(&self, prefix: &str) -> usize {
        self.variables.iter().filter(|v| v.name.starts_with(prefix)).count()
    }

    /// Copy with every binary turned into a continuous `[0, 1]` variable.
    pub fn relax_integrality(&self) -> AbstractModel {
        let mut relaxed = self.clone();
        for v in &mut relaxed.variables {
            v.kind = VarKind::Continuous;
        }
        relaxed
    }

    /// Structural audit: every reference declared, names unique, bounds sane.
    pub fn audit(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        let mut names = std::collections::HashSet::with_capacity(n);
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(ModelError::DuplicateName(v.name.clone()));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(ModelError::BadBounds { name: v.name.clone(), lower: v.lower, upper: v.upper });
            }
        }
        for c in &self.constraints {
            for (var, coef) in &c.terms {
                if var.0 >= n {
                    return Err(ModelError::UndeclaredVariable { constraint: c.name.clone(), var: var.0 });
                }
                if !coef.is_finite() {
                    return Err(ModelError::NonFinite(c.name.clone()));
                }
            }
            if !c.rhs.is_finite() {
                return Err(ModelError::NonFinite(c.name.clone()));
            }
        }
        for (var, coef) in &self.objective.terms {
            if var.0 >= n {
                return Err(ModelError::UndeclaredObjectiveVariable(var.0));
            }
            if !coef.is_finite() {
                return Err(ModelError::NonFinite("objective".into()));
            }
        }
        Ok(())
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.objective.constant + self.objective.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Names of rows and variables violated by more than `tol`, including
    /// integrality of binaries.
    pub fn violations(&self, values: &[f64], tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (v, x) in self.variables.iter().zip(values) {
            if *x < v.lower - tol || *x > v.upper + tol {
                out.push(format!("bound {} = {x}", v.name));
            }
            if v.kind == VarKind::Binary && (x - x.round()).abs() > tol {
                out.push(format!("integrality {} = {x}", v.name));
            }
        }
        for c in &self.constraints {
            let viol = c.violation(values);
            if viol > tol * (1.0 + c.rhs.abs()) {
                out.push(format!("row {} violated by {viol}", c.name));
            }
        }
        out
    }

    /// CPLEX LP text.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let name = |v: &VarId| self.variables[v.0].name.as_str();
        out.push_str(match self.objective.sense {
            ObjSense::Maximize => "Maximize\n",
            ObjSense::Minimize => "Minimize\n",
        });
        let mut obj = String::from(" obj:");
        append_terms(&mut obj, self.objective.terms.iter().map(|(v, c)| (name(v), *c)));
        if self.objective.constant != 0.0 {
            let _ = write!(obj, " {} {}", sign(self.objective.constant), fmt_num(self.objective.constant.abs()));
        }
        if self.objective.terms.is_empty() && self.objective.constant == 0.0 {
            obj.push_str(" 0");
        }
        push_wrapped(&mut out, &obj);
        out.push_str("Subject To\n");
        for c in &self.constraints {
            let mut row = format!(" {}:", c.name);
            if c.terms.is_empty() {
                row.push_str(" 0");
            }
            append_terms(&mut row, c.terms.iter().map(|(v, k)| (name(v), *k)));
            let _ = write!(row, " {} {}", c.sense.symbol(), fmt_num(c.rhs));
            push_wrapped(&mut out, &row);
        }
        out.push_str("Bounds\n");
        for v in &self.variables {
            if v.kind == VarKind::Binary && v.lower == 0.0 && v.upper == 1.0 {
                continue;
            }
            let line = match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => format!(" {} free", v.name),
                (true, false) => format!(" {} >= {}", v.name, fmt_num(v.lower)),
                (false, true) => format!(" -inf <= {} <= {}", v.name, fmt_num(v.upper)),
                (true, true) if v.lower == v.upper => format!(" {} = {}", v.name, fmt_num(v.lower)),
                (true, true) => format!(" {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper)),
            };
            out.push_str(&line);
            out.push('\n');
        }
        let binaries: Vec<&str> =
            self.variables.iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
        if !binaries.is_empty() {
            out.push_str("Binaries\n");
            let mut line = String::new();
            for b in binaries {
                let _ = write!(line, " {b}");
            }
            push_wrapped(&mut out, &line);
        }
        out.push_str("End\n");
        out
    }
}

fn sign(x: f64) -> char {
    if x < 0.0 {
        '-'
    } else {
        '+'
    }
}

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn append_terms<'a>(buf: &mut String, terms: impl Iterator<Item = (&'a str, f64)>) {
    for (i, (name, c)) in terms.enumerate() {
        if i == 0 && c >= 0.0 {
            let _ = write!(buf, " {} {name}", fmt_num(c));
        } else {
            let _ = write!(buf, " {} {} {name}", sign(c), fmt_num(c.abs()));
        }
    }
}

/// LP readers limit line length, so long rows are broken between tokens.
fn push_wrapped(out: &mut String, line: &str) {
    const WIDTH: usize = 200;
    let mut current = 0;
    for (i, token) in line.split(' ').enumerate() {
        if i > 0 {
            if current + token.len() + 1 > WIDTH {
                out.push_str("\n ");
                current = 1;
            } else {
                out.push(' ');
                current += 1;
            }
        }
        out.push_str(token);
        current += token.len();
    }
    out.push('\n');
}
