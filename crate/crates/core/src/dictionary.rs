//! Candidate basis functions and the design matrix built from them.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    Multinomial,
    Signum,
    NegExp,
    ExpProduct,
    Abs,
    SignedQuadratic,
    Sine,
    Cosine,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Constant,
        Family::Multinomial,
        Family::Signum,
        Family::NegExp,
        Family::ExpProduct,
        Family::Abs,
        Family::SignedQuadratic,
        Family::Sine,
        Family::Cosine,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub families: Vec<Family>,
    pub p_max: usize,
    pub include_input: bool,
    pub state_dim: usize,
    #[serde(default)]
    pub n_inputs: usize,
    /// Restricts the non-polynomial families to these states (0-based).
    /// `None` means every state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonpoly_states: Option<Vec<usize>>,
}

/// One column of the library. Indices are 0-based; labels are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Column {
    Constant,
    Monomial(Vec<u32>),
    Signum(usize),
    NegExp(usize),
    ExpProduct(usize, usize),
    Abs(usize),
    SignedQuadratic(usize, usize),
    Sine(usize),
    Cosine(usize),
    Input(usize),
}

impl LibrarySpec {
    pub fn new(state_dim: usize, p_max: usize, families: &[Family]) -> Self {
        LibrarySpec {
            families: families.to_vec(),
            p_max,
            include_input: false,
            state_dim,
            n_inputs: 0,
            nonpoly_states: None,
        }
    }

    pub fn with_inputs(mut self, n_inputs: usize) -> Self {
        self.include_input = n_inputs > 0;
        self.n_inputs = n_inputs;
        self
    }

    pub fn with_nonpoly_states(mut self, states: Vec<usize>) -> Self {
        self.nonpoly_states = Some(states);
        self
    }

    /// All nine families at degree 6.
    pub fn full(state_dim: usize, n_inputs: usize) -> Self {
        LibrarySpec::new(state_dim, 6, &Family::ALL).with_inputs(n_inputs)
    }

    /// Named presets used by the example systems.
    ///
    /// * `duffing`: constant, monomials to degree 5, sgn, abs, X|X| (m = 2)
    /// * `two-dof`: constant, monomials to degree 3 (m = 4)
    /// * `crack`: constant, monomials to degree 2, exp(-q), exp(-q)*X (m = 3)
    /// * `diffusion`: constant and monomials to degree 2, any m
    /// * `full`: every family at degree 6
    pub fn preset(name: &str, state_dim: usize, n_inputs: usize) -> Result<Self> {
        use Family::*;
        let spec = match name {
            "duffing" => {
                LibrarySpec::new(state_dim, 5, &[Constant, Multinomial, Signum, Abs, SignedQuadratic])
            }
            "two-dof" => LibrarySpec::new(state_dim, 3, &[Constant, Multinomial]),
            "crack" => LibrarySpec::new(state_dim, 2, &[Constant, Multinomial, NegExp, ExpProduct])
                .with_nonpoly_states(vec![state_dim - 1]),
            "diffusion" => LibrarySpec::new(state_dim, 2, &[Constant, Multinomial]),
            "polynomial" => LibrarySpec::new(state_dim, 3, &[Constant, Multinomial]),
            "full" => LibrarySpec::new(state_dim, 6, &Family::ALL),
            other => return Err(Error::Config(format!("unknown library preset '{other}'"))),
        };
        Ok(spec.with_inputs(n_inputs))
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::Config("library state_dim must be at least 1".into()));
        }
        if self.p_max == 0 || self.p_max > MAX_DEGREE {
            return Err(Error::Config(format!(
                "polynomial degree {} outside 1..={MAX_DEGREE}",
                self.p_max
            )));
        }
        if let Some(s) = &self.nonpoly_states {
            if let Some(bad) = s.iter().find(|&&i| i >= self.state_dim) {
                return Err(Error::Config(format!("nonpoly state {bad} out of range")));
            }
        }
        Ok(())
    }

    fn has(&self, f: Family) -> bool {
        self.families.contains(&f)
    }

    pub fn columns(&self) -> Result<Vec<Column>> {
        enumerate_columns(self)
    }

    pub fn n_columns(&self) -> Result<usize> {
        Ok(enumerate_columns(self)?.len())
    }

    pub fn labels(&self) -> Result<Vec<String>> {
        Ok(enumerate_columns(self)?.iter().map(|c| c.to_string()).collect())
    }
}

/// Exponent vectors of total degree `p` in `m` variables, in descending
/// lexicographic order (X1 varies slowest).
fn monomials_of_degree(m: usize, p: u32) -> Vec<Vec<u32>> {
    fn rec(m: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == m - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(m, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, p, &mut Vec::with_capacity(m), &mut out);
    out
}

pub fn enumerate_columns(spec: &LibrarySpec) -> Result<Vec<Column>> {
    spec.validate()?;
    let m = spec.state_dim;
    let np: Vec<usize> = match &spec.nonpoly_states {
        Some(s) => s.clone(),
        None => (0..m).collect(),
    };
    let mut cols = Vec::new();
    if spec.has(Family::Constant) {
        cols.push(Column::Constant);
    }
    if spec.has(Family::Multinomial) {
        for p in 1..=spec.p_max as u32 {
            cols.extend(monomials_of_degree(m, p).into_iter().map(Column::Monomial));
        }
    }
    if spec.has(Family::Signum) {
        cols.extend(np.iter().map(|&i| Column::Signum(i)));
    }
    if spec.has(Family::NegExp) {
        cols.extend(np.iter().map(|&i| Column::NegExp(i)));
    }
    if spec.has(Family::ExpProduct) {
        for &i in &np {
            cols.extend((0..m).map(|j| Column::ExpProduct(i, j)));
        }
    }
    if spec.has(Family::Abs) {
        cols.extend(np.iter().map(|&i| Column::Abs(i)));
    }
    if spec.has(Family::SignedQuadratic) {
        for &i in &np {
            cols.extend(np.iter().map(|&j| Column::SignedQuadratic(i, j)));
        }
    }
    if spec.has(Family::Sine) {
        cols.extend(np.iter().map(|&i| Column::Sine(i)));
    }
    if spec.has(Family::Cosine) {
        cols.extend(np.iter().map(|&i| Column::Cosine(i)));
    }
    if spec.include_input {
        cols.extend((0..spec.n_inputs).map(Column::Input));
    }
    Ok(cols)
}

impl Column {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Column::Constant => 1.0,
            Column::Monomial(e) => e
                .iter()
                .zip(x)
                .filter(|(&p, _)| p > 0)
                .map(|(&p, &v)| v.powi(p as i32))
                .product(),
            Column::Signum(i) => signum0(x[*i]),
            Column::NegExp(i) => (-x[*i]).exp(),
            Column::ExpProduct(i, j) => (-x[*i]).exp() * x[*j],
            Column::Abs(i) => x[*i].abs(),
            Column::SignedQuadratic(i, j) => x[*i] * x[*j].abs(),
            Column::Sine(i) => x[*i].sin(),
            Column::Cosine(i) => x[*i].cos(),
            Column::Input(j) => u[*j],
        }
    }

    /// Highest state index referenced, if any.
    fn max_state(&self) -> Option<usize> {
        match self {
            Column::Constant | Column::Input(_) => None,
            Column::Monomial(e) => e.iter().rposition(|&p| p > 0),
            Column::Signum(i) | Column::NegExp(i) | Column::Abs(i) => Some(*i),
            Column::Sine(i) | Column::Cosine(i) => Some(*i),
            Column::ExpProduct(i, j) | Column::SignedQuadratic(i, j) => Some(*i.max(j)),
        }
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Constant => write!(f, "1"),
            Column::Monomial(e) => {
                let mut first = true;
                for (i, &p) in e.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    if !first {
                        write!(f, "*")?;
                    }
                    first = false;
                    if p == 1 {
                        write!(f, "X{}", i + 1)?;
                    } else {
                        write!(f, "X{}^{}", i + 1, p)?;
                    }
                }
                Ok(())
            }
            Column::Signum(i) => write!(f, "sgn(X{})", i + 1),
            Column::NegExp(i) => write!(f, "exp(-X{})", i + 1),
            Column::ExpProduct(i, j) => write!(f, "exp(-X{})*X{}", i + 1, j + 1),
            Column::Abs(i) => write!(f, "abs(X{})", i + 1),
            Column::SignedQuadratic(i, j) => write!(f, "X{}|X{}|", i + 1, j + 1),
            Column::Sine(i) => write!(f, "sin(X{})", i + 1),
            Column::Cosine(i) => write!(f, "cos(X{})", i + 1),
            Column::Input(j) => write!(f, "u{}", j + 1),
        }
    }
}

fn parse_index(s: &str, prefix: char) -> Option<usize> {
    let rest = s.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse::<usize>().ok().map(|i| i - 1)
}

fn parse_wrapped<'a>(s: &'a str, head: &str) -> Option<&'a str> {
    s.strip_prefix(head)?.strip_suffix(')')
}

/// Parses a label back into a column. `state_dim` fixes the length of
/// monomial exponent vectors.
pub fn parse_label(label: &str, state_dim: usize) -> Result<Column> {
    let bad = || Error::Config(format!("unparseable column label '{label}'"));
    let s = label.trim();
    let col = if s == "1" {
        Column::Constant
    } else if let Some(j) = parse_index(s, 'u') {
        Column::Input(j)
    } else if let Some(inner) = parse_wrapped(s, "sgn(") {
        Column::Signum(parse_index(inner, 'X').ok_or_else(bad)?)
    } else if let Some(inner) = parse_wrapped(s, "abs(") {
        Column::Abs(parse_index(inner, 'X').ok_or_else(bad)?)
    } else if let Some(inner) = parse_wrapped(s, "sin(") {
        Column::Sine(parse_index(inner, 'X').ok_or_else(bad)?)
    } else if let Some(inner) = parse_wrapped(s, "cos(") {
        Column::Cosine(parse_index(inner, 'X').ok_or_else(bad)?)
    } else if let Some(rest) = s.strip_prefix("exp(-") {
        let (inner, tail) = rest.split_once(')').ok_or_else(bad)?;
        let i = parse_index(inner, 'X').ok_or_else(bad)?;
        if tail.is_empty() {
            Column::NegExp(i)
        } else {
            let j = parse_index(tail.strip_prefix('*').ok_or_else(bad)?, 'X').ok_or_else(bad)?;
            Column::ExpProduct(i, j)
        }
    } else if let Some(body) = s.strip_suffix('|') {
        let (a, b) = body.split_once('|').ok_or_else(bad)?;
        Column::SignedQuadratic(
            parse_index(a, 'X').ok_or_else(bad)?,
            parse_index(b, 'X').ok_or_else(bad)?,
        )
    } else {
        let mut e = vec![0u32; state_dim];
        let mut last: Option<usize> = None;
        for factor in s.split('*') {
            let (var, pow) = match factor.split_once('^') {
                Some((v, p)) => (v, p.parse::<u32>().map_err(|_| bad())?),
                None => (factor, 1),
            };
            let i = parse_index(var, 'X').ok_or_else(bad)?;
            // canonical form: strictly increasing variable index, powers >= 1
            if pow == 0 || i >= state_dim || last.is_some_and(|l| i <= l) {
                return Err(bad());
            }
            if factor.contains('^') && pow == 1 {
                return Err(bad());
            }
            e[i] = pow;
            last = Some(i);
        }
        Column::Monomial(e)
    };
    if col.max_state().is_some_and(|i| i >= state_dim) {
        return Err(bad());
    }
    Ok(col)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub spec: LibrarySpec,
}

impl LibraryMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub fn evaluate(
    spec: &LibrarySpec,
    states: &DMatrix<f64>,
    inputs: Option<&DMatrix<f64>>,
) -> Result<LibraryMatrix> {
    let cols = enumerate_columns(spec)?;
    if states.ncols() != spec.state_dim {
        return Err(Error::Dimension(format!(
            "library expects {} states, data has {}",
            spec.state_dim,
            states.ncols()
        )));
    }
    let n = states.nrows();
    let u = match (spec.include_input, inputs) {
        (true, Some(u)) => {
            if u.nrows() != n || u.ncols() < spec.n_inputs {
                return Err(Error::Dimension(format!(
                    "library expects {} input channels over {n} rows, got {}x{}",
                    spec.n_inputs,
                    u.nrows(),
                    u.ncols()
                )));
            }
            Some(u)
        }
        (true, None) => return Err(Error::Dimension("library requires input channels".into())),
        (false, _) => None,
    };
    if states.iter().any(|v| !v.is_finite()) || u.is_some_and(|u| u.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("library input data".into()));
    }
    let m = spec.state_dim;
    let nu = u.map_or(0, |u| u.ncols());
    let mut values = DMatrix::zeros(n, cols.len());
    let mut x = vec![0.0; m];
    let mut uu = vec![0.0; nu];
    for r in 0..n {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = states[(r, i)];
        }
        if let Some(u) = u {
            for (j, uj) in uu.iter_mut().enumerate() {
                *uj = u[(r, j)];
            }
        }
        for (k, c) in cols.iter().enumerate() {
            values[(r, k)] = c.eval(&x, &uu);
        }
    }
    Ok(LibraryMatrix {
        values,
        labels: cols.iter().map(|c| c.to_string()).collect(),
        spec: spec.clone(),
    })
}
