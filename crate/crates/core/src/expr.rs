//! Expression trees, function sets, generalized linear models and complexity measures.
//!
//! Every engine in this crate produces a [`GlmModel`]: an intercept plus a list of
//! coefficient-weighted basis functions, each basis being an [`ExprTree`]. FFX may
//! additionally produce [`Model::Rational`] models, a numerator/denominator pair.
//!
//! All operators are total. Division, square root, logarithm and negative powers are
//! protected, and every node output is clamped to `±1e300`, so evaluation over a finite
//! input matrix never yields NaN or infinity.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude below which a divisor or logarithm argument is treated as zero.
pub const PROTECT_EPS: f64 = 1e-12;

/// Clamp applied to every node output.
pub const VALUE_LIMIT: f64 = 1e300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Add3,
    Sub,
    Mult,
    Mult3,
    PDiv,
    PSqrt,
    Square,
    Cube,
    Quart,
    PLog,
    Sin,
    Cos,
    Abs,
    /// `max(0, arg - threshold)`
    HingeMax,
    /// `min(0, arg - threshold)`
    HingeMin,
    /// `arg ^ exponent`, protected for non-integer and negative exponents.
    Pow,
}

impl Op {
    pub const ALL: [Op; 17] = [
        Op::Add,
        Op::Add3,
        Op::Sub,
        Op::Mult,
        Op::Mult3,
        Op::PDiv,
        Op::PSqrt,
        Op::Square,
        Op::Cube,
        Op::Quart,
        Op::PLog,
        Op::Sin,
        Op::Cos,
        Op::Abs,
        Op::HingeMax,
        Op::HingeMin,
        Op::Pow,
    ];

    pub fn arity(self) -> usize {
        match self {
            Op::Add3 | Op::Mult3 => 3,
            Op::Add | Op::Sub | Op::Mult | Op::PDiv => 2,
            _ => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Add3 => "add3",
            Op::Sub => "sub",
            Op::Mult => "mult",
            Op::Mult3 => "mult3",
            Op::PDiv => "pdiv",
            Op::PSqrt => "psqrt",
            Op::Square => "square",
            Op::Cube => "cube",
            Op::Quart => "quart",
            Op::PLog => "plog",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Abs => "abs",
            Op::HingeMax => "hinge_max",
            Op::HingeMin => "hinge_min",
            Op::Pow => "pow",
        }
    }

    pub fn from_symbol(symbol: &str) -> Result<Op> {
        Op::ALL
            .iter()
            .copied()
            .find(|op| op.symbol() == symbol)
            .ok_or_else(|| Error::Structural(format!("unknown operator symbol `{symbol}`")))
    }

    /// Whether the operator carries a real parameter (hinge threshold or exponent).
    pub fn has_param(self) -> bool {
        matches!(self, Op::HingeMax | Op::HingeMin | Op::Pow)
    }

    pub fn is_hinge(self) -> bool {
        matches!(self, Op::HingeMax | Op::HingeMin)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Op {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Op {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let symbol = String::deserialize(d)?;
        Op::from_symbol(&symbol).map_err(serde::de::Error::custom)
    }
}

/// A symbolic basis function over input variables.
///
/// `param` is the hinge threshold for [`Op::HingeMax`]/[`Op::HingeMin`], the exponent
/// for [`Op::Pow`], and unused (0) for every other operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeRepr", try_from = "TreeRepr")]
pub enum ExprTree {
    Var(usize),
    Const(f64),
    Apply { op: Op, param: f64, children: Vec<ExprTree> },
}

impl ExprTree {
    pub fn var(index: usize) -> Self {
        ExprTree::Var(index)
    }

    pub fn constant(value: f64) -> Self {
        ExprTree::Const(value)
    }

    /// Builds a parameter-free operator node. Panics on arity mismatch.
    pub fn apply(op: Op, children: Vec<ExprTree>) -> Self {
        assert_eq!(op.arity(), children.len(), "arity mismatch for {op}");
        assert!(!op.has_param(), "{op} needs a parameter");
        ExprTree::Apply { op, param: 0.0, children }
    }

    pub fn unary(op: Op, arg: ExprTree) -> Self {
        Self::apply(op, vec![arg])
    }

    pub fn binary(op: Op, lhs: ExprTree, rhs: ExprTree) -> Self {
        Self::apply(op, vec![lhs, rhs])
    }

    pub fn hinge_max(arg: ExprTree, threshold: f64) -> Self {
        ExprTree::Apply { op: Op::HingeMax, param: threshold, children: vec![arg] }
    }

    pub fn hinge_min(arg: ExprTree, threshold: f64) -> Self {
        ExprTree::Apply { op: Op::HingeMin, param: threshold, children: vec![arg] }
    }

    pub fn pow(arg: ExprTree, exponent: f64) -> Self {
        ExprTree::Apply { op: Op::Pow, param: exponent, children: vec![arg] }
    }

    pub fn children(&self) -> &[ExprTree] {
        match self {
            ExprTree::Apply { children, .. } => children,
            _ => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, ExprTree::Apply { .. })
    }

    /// Structural node count: every variable, constant and operator is one node.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(ExprTree::size).sum::<usize>()
    }

    /// Depth with a single leaf at depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(ExprTree::depth).max().unwrap_or(0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            ExprTree::Var(i) => Some(*i),
            ExprTree::Const(_) => None,
            ExprTree::Apply { children, .. } => children.iter().filter_map(ExprTree::max_var).max(),
        }
    }

    /// Subtree in pre-order position `index` (root = 0).
    pub fn subtree(&self, index: usize) -> Option<&ExprTree> {
        let mut remaining = index;
        self.subtree_inner(&mut remaining)
    }

    fn subtree_inner(&self, remaining: &mut usize) -> Option<&ExprTree> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        for child in self.children() {
            if let Some(found) = child.subtree_inner(remaining) {
                return Some(found);
            }
        }
        None
    }

    /// Mutable subtree in pre-order position `index`.
    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut ExprTree> {
        let mut remaining = index;
        self.subtree_mut_inner(&mut remaining)
    }

    fn subtree_mut_inner(&mut self, remaining: &mut usize) -> Option<&mut ExprTree> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        if let ExprTree::Apply { children, .. } = self {
            for child in children.iter_mut() {
                if let Some(found) = child.subtree_mut_inner(remaining) {
                    return Some(found);
                }
            }
        }
        None
    }

    /// Depth (root = 1) of the node at pre-order position `index`.
    pub fn depth_of(&self, index: usize) -> Option<usize> {
        fn walk(node: &ExprTree, remaining: &mut usize, level: usize) -> Option<usize> {
            if *remaining == 0 {
                return Some(level);
            }
            *remaining -= 1;
            node.children().iter().find_map(|c| walk(c, remaining, level + 1))
        }
        let mut remaining = index;
        walk(self, &mut remaining, 1)
    }

    /// Checks arity, parameter finiteness and constant finiteness.
    pub fn validate(&self) -> Result<()> {
        match self {
            ExprTree::Var(_) => Ok(()),
            ExprTree::Const(c) if c.is_finite() => Ok(()),
            ExprTree::Const(c) => Err(Error::Structural(format!("non-finite constant {c}"))),
            ExprTree::Apply { op, param, children } => {
                if children.len() != op.arity() {
                    return Err(Error::Structural(format!(
                        "{op} expects {} children, found {}",
                        op.arity(),
                        children.len()
                    )));
                }
                if op.has_param() && !param.is_finite() {
                    return Err(Error::Structural(format!("{op} has non-finite parameter")));
                }
                children.iter().try_for_each(ExprTree::validate)
            }
        }
    }

    /// Parenthesized infix rendering.
    pub fn infix(&self) -> String {
        let mut out = String::new();
        self.write_infix(&mut out);
        out
    }

    fn write_infix(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            ExprTree::Var(i) => {
                let _ = write!(out, "x{i}");
            }
            ExprTree::Const(c) => out.push_str(&format_number(*c)),
            ExprTree::Apply { op, param, children } => match op {
                Op::Add | Op::Sub | Op::Mult => {
                    let sym = match op {
                        Op::Add => " + ",
                        Op::Sub => " - ",
                        _ => " * ",
                    };
                    out.push('(');
                    children[0].write_infix(out);
                    out.push_str(sym);
                    children[1].write_infix(out);
                    out.push(')');
                }
                Op::HingeMax | Op::HingeMin => {
                    out.push_str(if *op == Op::HingeMax { "max(0, " } else { "min(0, " });
                    children[0].write_infix(out);
                    out.push_str(" - ");
                    out.push_str(&format_number(*param));
                    out.push(')');
                }
                Op::Pow => {
                    out.push_str("pow(");
                    children[0].write_infix(out);
                    out.push_str(", ");
                    out.push_str(&format_number(*param));
                    out.push(')');
                }
                _ => {
                    out.push_str(op.symbol());
                    out.push('(');
                    for (k, child) in children.iter().enumerate() {
                        if k > 0 {
                            out.push_str(", ");
                        }
                        child.write_infix(out);
                    }
                    out.push(')');
                }
            },
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.infix())
    }
}

/// Shortest representation that parses back to the identical `f64`.
pub fn format_number(value: f64) -> String {
    format!("{value}")
}

// JSON shape: {"var": i} | {"const": c} | {"op": name, "children": [...], "threshold"?, "exponent"?}
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TreeRepr {
    Var {
        var: usize,
    },
    Const {
        #[serde(rename = "const")]
        value: f64,
    },
    Op {
        op: String,
        children: Vec<TreeRepr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponent: Option<f64>,
    },
}

impl From<ExprTree> for TreeRepr {
    fn from(tree: ExprTree) -> Self {
        match tree {
            ExprTree::Var(var) => TreeRepr::Var { var },
            ExprTree::Const(value) => TreeRepr::Const { value },
            ExprTree::Apply { op, param, children } => TreeRepr::Op {
                op: op.symbol().to_string(),
                children: children.into_iter().map(TreeRepr::from).collect(),
                threshold: op.is_hinge().then_some(param),
                exponent: (op == Op::Pow).then_some(param),
            },
        }
    }
}

impl TryFrom<TreeRepr> for ExprTree {
    type Error = Error;

    fn try_from(repr: TreeRepr) -> Result<Self> {
        let tree = match repr {
            TreeRepr::Var { var } => ExprTree::Var(var),
            TreeRepr::Const { value } => ExprTree::Const(value),
            TreeRepr::Op { op, children, threshold, exponent } => {
                let op = Op::from_symbol(&op)?;
                let param = match op {
                    Op::HingeMax | Op::HingeMin => {
                        threshold.ok_or_else(|| Error::Structural(format!("{op} node without threshold")))?
                    }
                    Op::Pow => exponent.ok_or_else(|| Error::Structural("pow node without exponent".into()))?,
                    _ => 0.0,
                };
                let children = children.into_iter().map(ExprTree::try_from).collect::<Result<Vec<_>>>()?;
                ExprTree::Apply { op, param, children }
            }
        };
        tree.validate()?;
        Ok(tree)
    }
}

/// Named operator sets.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSet {
    pub name: String,
    pub ops: Vec<Op>,
}

impl FunctionSet {
    pub fn gptips() -> Self {
        Self::custom("gptips", vec![Op::Add, Op::Add3, Op::Sub, Op::Mult, Op::Mult3])
    }

    pub fn mgptips() -> Self {
        Self::custom(
            "mgptips",
            vec![Op::Add, Op::Sub, Op::Mult, Op::PDiv, Op::PSqrt, Op::Square, Op::Cube, Op::PLog, Op::Sin, Op::Cos],
        )
    }

    pub fn efs() -> Self {
        let mut set = Self::mgptips();
        set.name = "efs".into();
        set.ops.push(Op::Quart);
        set
    }

    /// Operators FFX may place inside a basis. Addition, subtraction and division only
    /// arise through the top-level combination, the rational form and negative exponents.
    pub fn ffx() -> Self {
        Self::custom("ffx", vec![Op::Mult, Op::Abs, Op::PLog, Op::PSqrt, Op::HingeMax, Op::HingeMin, Op::Pow])
    }

    pub fn empty() -> Self {
        Self::custom("empty", Vec::new())
    }

    pub fn custom(name: &str, ops: Vec<Op>) -> Self {
        FunctionSet { name: name.to_string(), ops }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gptips" => Ok(Self::gptips()),
            "mgptips" => Ok(Self::mgptips()),
            "efs" => Ok(Self::efs()),
            "ffx" => Ok(Self::ffx()),
            other => Err(Error::Argument(format!("unknown function set `{other}`"))),
        }
    }

    pub fn allows(&self, op: Op) -> bool {
        self.ops.contains(&op)
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// True if every operator in `tree` belongs to this set.
    pub fn admits(&self, tree: &ExprTree) -> bool {
        match tree {
            ExprTree::Apply { op, children, .. } => self.allows(*op) && children.iter().all(|c| self.admits(c)),
            _ => true,
        }
    }
}

#[inline]
fn clamp(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_LIMIT, VALUE_LIMIT)
    }
}

#[inline]
pub fn pdiv(a: f64, b: f64) -> f64 {
    if b.abs() > PROTECT_EPS {
        a / b
    } else {
        0.0
    }
}

#[inline]
pub fn psqrt(a: f64) -> f64 {
    a.abs().sqrt()
}

#[inline]
pub fn plog(a: f64) -> f64 {
    if a.abs() > PROTECT_EPS {
        a.abs().ln()
    } else {
        0.0
    }
}

/// Power with protection: non-integer exponents act on `|a|`, negative exponents
/// return 0 when `|a|` is within the protection band.
#[inline]
pub fn ppow(a: f64, exponent: f64) -> f64 {
    if exponent < 0.0 && a.abs() <= PROTECT_EPS {
        return 0.0;
    }
    if exponent.fract() == 0.0 {
        a.powi(exponent as i32)
    } else {
        a.abs().powf(exponent)
    }
}

/// Applies one operator elementwise over argument columns of equal length.
pub fn apply_columns(op: Op, param: f64, args: &[&[f64]]) -> Vec<f64> {
    debug_assert_eq!(args.len(), op.arity());
    let n = args[0].len();
    let unary = |f: &dyn Fn(f64) -> f64| args[0].iter().map(|&a| clamp(f(a))).collect();
    let binary = |f: &dyn Fn(f64, f64) -> f64| args[0].iter().zip(args[1]).map(|(&a, &b)| clamp(f(a, b))).collect();
    match op {
        Op::Add => binary(&|a, b| a + b),
        Op::Sub => binary(&|a, b| a - b),
        Op::Mult => binary(&|a, b| a * b),
        Op::PDiv => binary(&pdiv),
        Op::Add3 => (0..n).map(|i| clamp(args[0][i] + args[1][i] + args[2][i])).collect(),
        Op::Mult3 => (0..n).map(|i| clamp(args[0][i] * args[1][i] * args[2][i])).collect(),
        Op::PSqrt => unary(&psqrt),
        Op::Square => unary(&|a| a * a),
        Op::Cube => unary(&|a| a * a * a),
        Op::Quart => unary(&|a| {
            let s = a * a;
            s * s
        }),
        Op::PLog => unary(&plog),
        Op::Sin => unary(&f64::sin),
        Op::Cos => unary(&f64::cos),
        Op::Abs => unary(&f64::abs),
        Op::HingeMax => unary(&|a| (a - param).max(0.0)),
        Op::HingeMin => unary(&|a| (a - param).min(0.0)),
        Op::Pow => unary(&|a| ppow(a, param)),
    }
}

/// Evaluates `tree` on every row of `data` (rows × variables).
pub fn evaluate(tree: &ExprTree, data: &DMatrix<f64>) -> Result<Vec<f64>> {
    tree.validate()?;
    if let Some(max) = tree.max_var() {
        if max >= data.ncols() {
            return Err(Error::Structural(format!("variable x{max} out of range for {} columns", data.ncols())));
        }
    }
    Ok(eval_unchecked(tree, data))
}

fn eval_unchecked(tree: &ExprTree, data: &DMatrix<f64>) -> Vec<f64> {
    match tree {
        ExprTree::Var(i) => data.column(*i).iter().map(|&v| clamp(v)).collect(),
        ExprTree::Const(c) => vec![clamp(*c); data.nrows()],
        ExprTree::Apply { op, param, children } => {
            let cols: Vec<Vec<f64>> = children.iter().map(|c| eval_unchecked(c, data)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            apply_columns(*op, *param, &refs)
        }
    }
}

/// Node count used for reporting: hinges count as 5, `pow(x, e)` counts its exponent
/// as an extra leaf, everything else counts structurally.
pub fn reported_nodes(tree: &ExprTree) -> usize {
    match tree {
        ExprTree::Var(_) | ExprTree::Const(_) => 1,
        ExprTree::Apply { op, children, .. } => match op {
            Op::HingeMax | Op::HingeMin => 5,
            Op::Pow => 2 + reported_nodes(&children[0]),
            _ => 1 + children.iter().map(reported_nodes).sum::<usize>(),
        },
    }
}

/// Sum over every subtree of that subtree's structural node count.
pub fn expressional_complexity(tree: &ExprTree) -> usize {
    fn walk(tree: &ExprTree) -> (usize, usize) {
        let (mut size, mut total) = (1, 0);
        for child in tree.children() {
            let (s, t) = walk(child);
            size += s;
            total += t;
        }
        (size, total + size)
    }
    walk(tree).1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub tree: ExprTree,
}

/// `intercept + Σ coefficient_i · basis_i`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub intercept: f64,
    pub bases: Vec<Term>,
}

impl GlmModel {
    pub fn constant(intercept: f64) -> Self {
        GlmModel { intercept, bases: Vec::new() }
    }

    pub fn new(intercept: f64, bases: Vec<(f64, ExprTree)>) -> Self {
        GlmModel { intercept, bases: bases.into_iter().map(|(coefficient, tree)| Term { coefficient, tree }).collect() }
    }

    pub fn predict(&self, data: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![self.intercept; data.nrows()];
        for term in &self.bases {
            let col = evaluate(&term.tree, data)?;
            for (o, v) in out.iter_mut().zip(col) {
                *o += term.coefficient * v;
            }
        }
        Ok(out.into_iter().map(clamp).collect())
    }

    pub fn infix(&self) -> String {
        let mut out = format_number(self.intercept);
        for term in &self.bases {
            out.push_str(" + ");
            out.push_str(&format_number(term.coefficient));
            out.push('*');
            out.push_str(&term.tree.infix());
        }
        out
    }

    fn basis_nodes(&self) -> usize {
        self.bases.iter().map(|t| reported_nodes(&t.tree)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.intercept.is_finite() || self.bases.iter().any(|t| !t.coefficient.is_finite()) {
            return Err(Error::Structural("non-finite coefficient".into()));
        }
        self.bases.iter().try_for_each(|t| t.tree.validate())
    }
}

/// A fitted model: either a generalized linear model or an FFX rational model
/// `numerator / denominator` whose denominator has intercept 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Model {
    Rational { numerator: GlmModel, denominator: GlmModel },
    Linear(GlmModel),
}

impl From<GlmModel> for Model {
    fn from(m: GlmModel) -> Self {
        Model::Linear(m)
    }
}

impl Model {
    pub fn predict(&self, data: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Model::Linear(m) => m.predict(data),
            Model::Rational { numerator, denominator } => {
                let num = numerator.predict(data)?;
                let den = denominator.predict(data)?;
                Ok(num
                    .iter()
                    .zip(&den)
                    .map(|(&n, &d)| {
                        let d = if d.abs() < PROTECT_EPS { PROTECT_EPS.copysign(d) } else { d };
                        clamp(n / d)
                    })
                    .collect())
            }
        }
    }

    /// Number of symbolic bases (numerator plus denominator for rational models).
    pub fn n_bases(&self) -> usize {
        match self {
            Model::Linear(m) => m.bases.len(),
            Model::Rational { numerator, denominator } => numerator.bases.len() + denominator.bases.len(),
        }
    }

    pub fn infix(&self) -> String {
        match self {
            Model::Linear(m) => m.infix(),
            Model::Rational { numerator, denominator } => {
                format!("({}) / ({})", numerator.infix(), denominator.infix())
            }
        }
    }

    pub fn parse_infix(text: &str) -> Result<Model> {
        infix::parse_model(text)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Linear(m) => m.validate(),
            Model::Rational { numerator, denominator } => {
                numerator.validate()?;
                denominator.validate()
            }
        }
    }
}

/// Σ over bases of the reported node count. Intercept and top-level coefficients are
/// not counted; a model without bases counts as a single constant node. Rational models
/// add one node for the division.
pub fn count_nodes(model: &Model) -> usize {
    fn linear(m: &GlmModel) -> usize {
        m.basis_nodes().max(1)
    }
    match model {
        Model::Linear(m) => linear(m),
        Model::Rational { numerator, denominator } => linear(numerator) + denominator.basis_nodes() + 1,
    }
}

pub fn to_infix(model: &GlmModel) -> String {
    model.infix()
}

mod infix {
    //! Recursive-descent parser for the text produced by `GlmModel::infix`.

    use super::{ExprTree, GlmModel, Model, Op, Term};
    use crate::error::{Error, Result};

    #[derive(Clone, Debug, PartialEq)]
    enum Tok {
        Num(f64),
        Ident(String),
        LParen,
        RParen,
        Comma,
        Plus,
        Minus,
        Star,
        Slash,
    }

    fn tokenize(text: &str) -> Result<Vec<Tok>> {
        let chars: Vec<char> = text.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let operand_before = matches!(toks.last(), Some(Tok::Num(_)) | Some(Tok::Ident(_)) | Some(Tok::RParen));
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit()
                || c == '.'
                || (c == '-' && !operand_before && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.'))
            {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| Error::Structural(format!("bad number `{s}`")))?;
                toks.push(Tok::Num(v));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            } else {
                toks.push(match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    other => return Err(Error::Structural(format!("unexpected character `{other}`"))),
                });
                i += 1;
            }
        }
        Ok(toks)
    }

    struct Parser {
        toks: Vec<Tok>,
        pos: usize,
    }

    impl Parser {
        fn peek(&self) -> Option<&Tok> {
            self.toks.get(self.pos)
        }

        fn next(&mut self) -> Result<Tok> {
            let t = self
                .toks
                .get(self.pos)
                .cloned()
                .ok_or_else(|| Error::Structural("unexpected end of expression".into()))?;
            self.pos += 1;
            Ok(t)
        }

        fn expect(&mut self, want: Tok) -> Result<()> {
            let got = self.next()?;
            if got == want {
                Ok(())
            } else {
                Err(Error::Structural(format!("expected {want:?}, found {got:?}")))
            }
        }

        fn number(&mut self) -> Result<f64> {
            match self.next()? {
                Tok::Num(v) => Ok(v),
                other => Err(Error::Structural(format!("expected number, found {other:?}"))),
            }
        }

        fn glm(&mut self) -> Result<GlmModel> {
            let intercept = self.number()?;
            let mut bases = Vec::new();
            while self.peek() == Some(&Tok::Plus) {
                self.pos += 1;
                let coefficient = self.number()?;
                self.expect(Tok::Star)?;
                let tree = self.tree()?;
                bases.push(Term { coefficient, tree });
            }
            Ok(GlmModel { intercept, bases })
        }

        fn tree(&mut self) -> Result<ExprTree> {
            match self.next()? {
                Tok::Num(v) => Ok(ExprTree::Const(v)),
                Tok::LParen => {
                    let lhs = self.tree()?;
                    let op = match self.next()? {
                        Tok::Plus => Op::Add,
                        Tok::Minus => Op::Sub,
                        Tok::Star => Op::Mult,
                        other => return Err(Error::Structural(format!("expected binary operator, found {other:?}"))),
                    };
                    let rhs = self.tree()?;
                    self.expect(Tok::RParen)?;
                    Ok(ExprTree::binary(op, lhs, rhs))
                }
                Tok::Ident(name) => {
                    if let Some(idx) = name.strip_prefix('x') {
                        if let Ok(i) = idx.parse::<usize>() {
                            return Ok(ExprTree::Var(i));
                        }
                    }
                    self.expect(Tok::LParen)?;
                    let node = match name.as_str() {
                        "max" | "min" => {
                            if self.number()? != 0.0 {
                                return Err(Error::Structural("hinge must start with 0".into()));
                            }
                            self.expect(Tok::Comma)?;
                            let arg = self.tree()?;
                            self.expect(Tok::Minus)?;
                            let thr = self.number()?;
                            if name == "max" {
                                ExprTree::hinge_max(arg, thr)
                            } else {
                                ExprTree::hinge_min(arg, thr)
                            }
                        }
                        "pow" => {
                            let arg = self.tree()?;
                            self.expect(Tok::Comma)?;
                            ExprTree::pow(arg, self.number()?)
                        }
                        other => {
                            let op = Op::from_symbol(other)?;
                            if op.has_param() || matches!(op, Op::Add | Op::Sub | Op::Mult) {
                                return Err(Error::Structural(format!("`{other}` is not written in call form")));
                            }
                            let mut children = vec![self.tree()?];
                            for _ in 1..op.arity() {
                                self.expect(Tok::Comma)?;
                                children.push(self.tree()?);
                            }
                            ExprTree::apply(op, children)
                        }
                    };
                    self.expect(Tok::RParen)?;
                    Ok(node)
                }
                other => Err(Error::Structural(format!("unexpected token {other:?}"))),
            }
        }
    }

    pub(super) fn parse_model(text: &str) -> Result<Model> {
        let mut p = Parser { toks: tokenize(text)?, pos: 0 };
        let model = if p.peek() == Some(&Tok::LParen) {
            p.pos += 1;
            let numerator = p.glm()?;
            p.expect(Tok::RParen)?;
            p.expect(Tok::Slash)?;
            p.expect(Tok::LParen)?;
            let denominator = p.glm()?;
            p.expect(Tok::RParen)?;
            Model::Rational { numerator, denominator }
        } else {
            Model::Linear(p.glm()?)
        };
        if p.pos != p.toks.len() {
            return Err(Error::Structural("trailing tokens after model".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn x() -> ExprTree {
        ExprTree::var(0)
    }

    fn koza1_tree() -> ExprTree {
        let x2 = ExprTree::unary(Op::Square, x());
        let x3 = ExprTree::unary(Op::Cube, x());
        let x4 = ExprTree::unary(Op::Quart, x());
        ExprTree::binary(Op::Add, ExprTree::binary(Op::Add, x4, x3), ExprTree::binary(Op::Add, x2, x()))
    }

    #[test]
    fn koza1_is_zero_at_origin() {
        let out = evaluate(&koza1_tree(), &col(&[0.0])).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn protected_division_by_zero_is_zero() {
        let tree = ExprTree::binary(Op::PDiv, ExprTree::constant(1.0), ExprTree::constant(0.0));
        assert_eq!(evaluate(&tree, &col(&[5.0])).unwrap(), vec![0.0]);
    }

    #[test]
    fn korns11_at_origin() {
        let inner = ExprTree::binary(Op::Mult, ExprTree::constant(7.23), ExprTree::unary(Op::Cube, x()));
        let tree = ExprTree::binary(
            Op::Add,
            ExprTree::constant(6.87),
            ExprTree::binary(Op::Mult, ExprTree::constant(11.0), ExprTree::unary(Op::Cos, inner)),
        );
        let out = evaluate(&tree, &col(&[0.0])).unwrap();
        assert!((out[0] - 17.87).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_variable_is_structural_error() {
        let err = evaluate(&ExprTree::var(3), &col(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn unknown_operator_is_structural_error() {
        let err = serde_json::from_str::<ExprTree>(r#"{"op":"tanh","children":[{"var":0}]}"#).unwrap_err();
        assert!(err.to_string().contains("unknown operator"));
        let err = serde_json::from_str::<ExprTree>(r#"{"op":"add","children":[{"var":0}]}"#).unwrap_err();
        assert!(err.to_string().contains("expects 2 children"));
    }

    #[test]
    fn node_counts() {
        let constant = Model::Linear(GlmModel::constant(3.0));
        assert_eq!(count_nodes(&constant), 1);

        let sin_xy = ExprTree::unary(Op::Sin, ExprTree::binary(Op::Mult, ExprTree::var(0), ExprTree::var(1)));
        assert_eq!(count_nodes(&GlmModel::new(0.0, vec![(1.0, sin_xy)]).into()), 4);

        let hinge = ExprTree::hinge_max(ExprTree::var(1), 3.2);
        assert_eq!(count_nodes(&GlmModel::new(0.0, vec![(1.0, hinge)]).into()), 5);
    }

    #[test]
    fn expressional_complexity_examples() {
        assert_eq!(expressional_complexity(&x()), 1);
        let xy = ExprTree::binary(Op::Mult, ExprTree::var(0), ExprTree::var(1));
        assert_eq!(expressional_complexity(&xy), 5);
        let tree = ExprTree::binary(Op::Add, xy, ExprTree::var(2));
        assert_eq!(expressional_complexity(&tree), 11);
    }

    #[test]
    fn expressional_complexity_matches_subtree_walk() {
        let tree = koza1_tree();
        let brute: usize = (0..tree.size()).map(|i| tree.subtree(i).unwrap().size()).sum();
        assert_eq!(expressional_complexity(&tree), brute);
    }

    #[test]
    fn infix_examples() {
        assert_eq!(to_infix(&GlmModel::constant(1.5)), "1.5");
        assert_eq!(to_infix(&GlmModel::new(0.0, vec![(2.0, ExprTree::var(0))])), "0 + 2*x0");
        let m = GlmModel::new(0.5, vec![(-1.0, ExprTree::hinge_max(ExprTree::var(1), 3.0))]);
        assert!(to_infix(&m).ends_with(" + -1*max(0, x1 - 3)"));
    }

    #[test]
    fn rational_prediction_guards_denominator() {
        let m = Model::Rational {
            numerator: GlmModel::constant(1.0),
            denominator: GlmModel::new(1.0, vec![(-1.0, ExprTree::var(0))]),
        };
        let out = m.predict(&col(&[1.0, 0.0, 2.0])).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(out[1], 1.0);
        assert_eq!(out[2], -1.0);
        assert_eq!(count_nodes(&m), 1 + 1 + 1);
    }

    #[test]
    fn function_sets_match_table() {
        assert_eq!(FunctionSet::gptips().ops.len(), 5);
        let m = FunctionSet::mgptips();
        assert_eq!(m.ops.len(), 10);
        assert!(!m.allows(Op::Quart) && !m.allows(Op::Add3));
        let e = FunctionSet::efs();
        assert!(e.allows(Op::Quart) && m.ops.iter().all(|op| e.allows(*op)));
        let f = FunctionSet::ffx();
        assert!(f.allows(Op::HingeMax) && !f.allows(Op::Add) && !f.allows(Op::Sin));
    }

    #[test]
    fn json_shape() {
        let m = GlmModel::new(1.0, vec![(2.0, ExprTree::hinge_min(ExprTree::var(0), -0.5))]);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["bases"][0]["tree"]["op"], "hinge_min");
        assert_eq!(v["bases"][0]["tree"]["threshold"], -0.5);
        assert_eq!(v["bases"][0]["tree"]["children"][0]["var"], 0);
        let back: GlmModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    pub(crate) fn arb_tree(max_var: usize) -> impl Strategy<Value = ExprTree> {
        let leaf = prop_oneof![(0..max_var).prop_map(ExprTree::Var), (-1e3f64..1e3).prop_map(ExprTree::Const),];
        leaf.prop_recursive(5, 40, 3, |inner| {
            (proptest::sample::select(Op::ALL.to_vec()), -10f64..10.0, proptest::collection::vec(inner, 3)).prop_map(
                |(op, param, mut kids)| {
                    kids.truncate(op.arity());
                    let param = if op == Op::Pow { param.round() * 0.5 } else { param };
                    ExprTree::Apply { op, param: if op.has_param() { param } else { 0.0 }, children: kids }
                },
            )
        })
    }

    fn arb_data(cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1e6f64..1e6, 4 * cols).prop_map(move |v| DMatrix::from_vec(4, cols, v))
    }

    proptest! {
        #[test]
        fn evaluation_is_total(tree in arb_tree(3), data in arb_data(3)) {
            let out = evaluate(&tree, &data).unwrap();
            prop_assert_eq!(out.len(), 4);
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn protected_semantics(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let expect_div = if b.abs() > 1e-12 { a / b } else { 0.0 };
            prop_assert_eq!(pdiv(a, b), expect_div);
            prop_assert_eq!(pdiv(a, 0.0), 0.0);
            prop_assert_eq!(psqrt(a), a.abs().sqrt());
            let expect_log = if a.abs() > 1e-12 { a.abs().ln() } else { 0.0 };
            prop_assert_eq!(plog(a), expect_log);
        }

        #[test]
        fn node_count_is_additive(
            trees in proptest::collection::vec(arb_tree(2), 1..6),
            extra in arb_tree(2),
        ) {
            let mut m = GlmModel::new(0.3, trees.iter().cloned().map(|t| (1.0, t)).collect());
            let before = count_nodes(&m.clone().into());
            let per_base: usize = trees.iter().map(reported_nodes).sum();
            prop_assert_eq!(before, per_base);
            m.bases.push(Term { coefficient: -2.0, tree: extra.clone() });
            prop_assert_eq!(count_nodes(&m.into()), before + reported_nodes(&extra));
        }

        #[test]
        fn model_output_is_homomorphic(
            trees in proptest::collection::vec(arb_tree(2), 0..4),
            coefs in proptest::collection::vec(-5f64..5.0, 4),
            intercept in -5f64..5.0,
            data in proptest::collection::vec(-2f64..2.0, 8),
        ) {
            let data = DMatrix::from_vec(4, 2, data);
            let m = GlmModel::new(intercept, coefs.iter().copied().zip(trees.iter().cloned()).collect());
            for t in &trees {
                let v = evaluate(t, &data).unwrap();
                prop_assume!(v.iter().all(|x| x.abs() < 1e100));
            }
            // Whole-expression tree: intercept + Σ c_i * b_i.
            let mut whole = ExprTree::constant(intercept);
            for t in &m.bases {
                whole = ExprTree::binary(
                    Op::Add,
                    whole,
                    ExprTree::binary(Op::Mult, ExprTree::constant(t.coefficient), t.tree.clone()),
                );
            }
            let direct = evaluate(&whole, &data).unwrap();
            let via_model = m.predict(&data).unwrap();
            for (a, b) in direct.iter().zip(&via_model) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn infix_round_trips(
            trees in proptest::collection::vec(arb_tree(3), 0..4),
            coefs in proptest::collection::vec(-1e4f64..1e4, 4),
            intercept in -1e4f64..1e4,
        ) {
            let m = GlmModel::new(intercept, coefs.iter().copied().zip(trees).collect());
            let parsed = Model::parse_infix(&m.infix()).unwrap();
            prop_assert_eq!(parsed, Model::Linear(m));
        }

        #[test]
        fn json_round_trips(trees in proptest::collection::vec(arb_tree(3), 1..4)) {
            let m = Model::Rational {
                numerator: GlmModel::new(1.0, trees.iter().cloned().map(|t| (0.5, t)).collect()),
                denominator: GlmModel::new(1.0, vec![(0.25, trees[0].clone())]),
            };
            let text = serde_json::to_string(&m).unwrap();
            let back: Model = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
