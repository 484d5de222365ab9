//! Scalar math expressions over state variables `x1..xn`.
//!
//! Expressions are parsed once into an immutable AST and then evaluated with
//! plain `f64` or with [`Dual`] numbers; the dual path gives first derivatives
//! that are exact to machine precision for the supported operator set
//! (`+ - * / ^`, unary minus, `sin cos tanh exp ln sqrt abs`). This is where
//! the concrete drift `f`, input matrix `G`, and candidate `V` live.
//!
//! Evaluation is pure and an [`Expression`] is immutable after construction,
//! so values may be shared freely across threads.

mod dual;
mod parser;

pub use dual::Dual;
pub use parser::ParseError;

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: expression over {expected} variables, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite result while evaluating `{context}`")]
    NonFinite { context: String },
    #[error("non-finite derivative while evaluating `{context}`")]
    NonFiniteDerivative { context: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Constants are always finite and non-negative; negative values are
/// represented as `Neg(Constant)` so that every tree matches what the parser
/// would produce for its own printed form.
#[derive(Debug, Clone, PartialEq)]
enum Node {
    Constant(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed scalar expression over `x1..xn` for a fixed dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    node: Node,
    dim: usize,
}

impl Expression {
    /// Parse `source` as an expression over `x1..x<dim>`.
    ///
    /// Standard precedence applies: `^` binds tightest (right-associative),
    /// then unary minus, then `* /`, then `+ -`. Variables beyond `x<dim>`
    /// are rejected.
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        let node = parser::Parser::parse(source, dim)?;
        Ok(Self { node, dim })
    }

    /// Number of state variables this expression is declared over.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// A constant expression. Negative values become `-(abs value)` so the
    /// printed form round-trips structurally.
    ///
    /// Panics if `value` is not finite.
    pub fn constant(value: f64, dim: usize) -> Self {
        assert!(value.is_finite(), "expression constants must be finite");
        let node = if value < 0.0 {
            Node::Neg(Box::new(Node::Constant(-value)))
        } else {
            // kill -0.0 for structural round-trips
            Node::Constant(if value == 0.0 { 0.0 } else { value })
        };
        Self { node, dim }
    }

    /// The state variable `x<index>` (1-based, as in the text form).
    ///
    /// Panics if `index` is 0 or exceeds `dim`.
    pub fn variable(index: usize, dim: usize) -> Self {
        assert!(
            index >= 1 && index <= dim,
            "variable x{index} out of range for dimension {dim}"
        );
        Self {
            node: Node::Var(index - 1),
            dim,
        }
    }

    fn binary(op: BinOp, lhs: Self, rhs: Self) -> Self {
        assert_eq!(
            lhs.dim, rhs.dim,
            "cannot combine expressions of different dimensions"
        );
        Self {
            dim: lhs.dim,
            node: Node::Binary(op, Box::new(lhs.node), Box::new(rhs.node)),
        }
    }

    /// `self ^ rhs`.
    pub fn pow(self, rhs: Self) -> Self {
        Self::binary(BinOp::Pow, self, rhs)
    }

    /// Evaluate at `point` in IEEE-754 double precision.
    ///
    /// Non-finite intermediate results (division by zero, `ln` of a
    /// non-positive value, overflow) are reported as errors.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.check_dim(point.len())?;
        eval_node(&self.node, &|i| point[i], false)
    }

    /// Evaluate with dual-number inputs. With all derivative slots zero this
    /// equals [`Expression::evaluate`] exactly.
    pub fn evaluate_dual(&self, point: &[Dual]) -> Result<Dual, EvalError> {
        self.check_dim(point.len())?;
        eval_node(&self.node, &|i| point[i], true)
    }

    /// Gradient `(d/dx1, .., d/dxn)` at `point`, by n forward passes with
    /// unit seed directions.
    pub fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check_dim(point.len())?;
        let mut duals: Vec<Dual> = point.iter().map(|&v| Dual::constant(v)).collect();
        let mut grad = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            duals[i].deriv = 1.0;
            let out = eval_node(&self.node, &|j| duals[j], true)?;
            grad.push(out.deriv);
            duals[i].deriv = 0.0;
        }
        Ok(grad)
    }

    fn check_dim(&self, got: usize) -> Result<(), EvalError> {
        if got != self.dim {
            return Err(EvalError::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }
}

impl std::ops::Add for Expression {
    type Output = Expression;
    fn add(self, rhs: Self) -> Self {
        Self::binary(BinOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expression {
    type Output = Expression;
    fn sub(self, rhs: Self) -> Self {
        Self::binary(BinOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expression {
    type Output = Expression;
    fn mul(self, rhs: Self) -> Self {
        Self::binary(BinOp::Mul, self, rhs)
    }
}

impl std::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Self {
        Self {
            dim: self.dim,
            node: Node::Neg(Box::new(self.node)),
        }
    }
}

/// Arithmetic shared by the plain and dual evaluation paths. Both run the
/// same node-by-node recursion, so a dual pass with zero seeds reproduces the
/// plain value bit for bit.
trait Value: Copy {
    fn from_const(c: f64) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    /// Power with an exponent known to be constant.
    fn powc(self, c: f64) -> Self;
    fn pow(self, o: Self) -> Self;
    fn call(self, f: Func) -> Self;
    fn finite(self) -> bool;
    fn value_finite(self) -> bool;
}

impl Value for f64 {
    fn from_const(c: f64) -> Self {
        c
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn powc(self, c: f64) -> Self {
        self.powf(c)
    }
    fn pow(self, o: Self) -> Self {
        self.powf(o)
    }
    fn call(self, f: Func) -> Self {
        match f {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Tanh => self.tanh(),
            Func::Exp => self.exp(),
            Func::Ln => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Abs => self.abs(),
        }
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    fn value_finite(self) -> bool {
        self.is_finite()
    }
}

impl Value for Dual {
    fn from_const(c: f64) -> Self {
        Dual::constant(c)
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn powc(self, c: f64) -> Self {
        Dual::powc(self, c)
    }
    fn pow(self, o: Self) -> Self {
        Dual::pow(self, o)
    }
    fn call(self, f: Func) -> Self {
        match f {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Tanh => self.tanh(),
            Func::Exp => self.exp(),
            Func::Ln => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Abs => self.abs(),
        }
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    fn value_finite(self) -> bool {
        self.value.is_finite()
    }
}

/// Exponent value when the exponent subtree is a constant (possibly negated).
fn const_exponent(node: &Node) -> Option<f64> {
    match node {
        Node::Constant(c) => Some(*c),
        Node::Neg(inner) => match inner.as_ref() {
            Node::Constant(c) => Some(-*c),
            _ => None,
        },
        _ => None,
    }
}

fn eval_node<T: Value>(
    node: &Node,
    vars: &dyn Fn(usize) -> T,
    check_deriv: bool,
) -> Result<T, EvalError> {
    let out = match node {
        Node::Constant(c) => T::from_const(*c),
        Node::Var(i) => vars(*i),
        Node::Neg(inner) => eval_node(inner, vars, check_deriv)?.neg(),
        Node::Call(f, arg) => eval_node(arg, vars, check_deriv)?.call(*f),
        Node::Binary(op, lhs, rhs) => {
            let l = eval_node(lhs, vars, check_deriv)?;
            match op {
                BinOp::Add => l.add(eval_node(rhs, vars, check_deriv)?),
                BinOp::Sub => l.sub(eval_node(rhs, vars, check_deriv)?),
                BinOp::Mul => l.mul(eval_node(rhs, vars, check_deriv)?),
                BinOp::Div => l.div(eval_node(rhs, vars, check_deriv)?),
                BinOp::Pow => match const_exponent(rhs) {
                    Some(c) => l.powc(c),
                    None => l.pow(eval_node(rhs, vars, check_deriv)?),
                },
            }
        }
    };
    if !out.finite() {
        let context = display_node(node);
        return Err(if out.value_finite() && check_deriv {
            EvalError::NonFiniteDerivative { context }
        } else {
            EvalError::NonFinite { context }
        });
    }
    Ok(out)
}

// Printing. Precedence levels: + - are 1, * / are 2, unary minus 3, ^ 4,
// atoms 5. A child is parenthesized when its level is below the minimum its
// position requires; the right operand of a left-associative operator needs
// strictly more than the operator itself so that `a - (b - c)` keeps its
// shape.

fn prec(node: &Node) -> u8 {
    match node {
        Node::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Binary(BinOp::Pow, ..) => 4,
        Node::Constant(_) | Node::Var(_) | Node::Call(..) => 5,
    }
}

fn fmt_node(node: &Node, min_prec: u8, out: &mut String) {
    let wrap = prec(node) < min_prec;
    if wrap {
        out.push('(');
    }
    match node {
        Node::Constant(c) => fmt_const(*c, out),
        Node::Var(i) => {
            out.push('x');
            out.push_str(&(i + 1).to_string());
        }
        Node::Neg(inner) => {
            out.push('-');
            fmt_node(inner, 3, out);
        }
        Node::Call(f, arg) => {
            out.push_str(f.name());
            out.push('(');
            fmt_node(arg, 0, out);
            out.push(')');
        }
        Node::Binary(op, l, r) => match op {
            BinOp::Add | BinOp::Sub => {
                fmt_node(l, 1, out);
                out.push_str(if *op == BinOp::Add { " + " } else { " - " });
                fmt_node(r, 2, out);
            }
            BinOp::Mul | BinOp::Div => {
                fmt_node(l, 2, out);
                out.push(if *op == BinOp::Mul { '*' } else { '/' });
                fmt_node(r, 3, out);
            }
            BinOp::Pow => {
                fmt_node(l, 5, out);
                out.push('^');
                fmt_node(r, 3, out);
            }
        },
    }
    if wrap {
        out.push(')');
    }
}

fn fmt_const(c: f64, out: &mut String) {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        out.push_str(&format!("{}", c as i64));
    } else {
        // shortest decimal that round-trips to the same f64
        out.push_str(&format!("{c:?}"));
    }
}

fn display_node(node: &Node) -> String {
    let mut s = String::new();
    fmt_node(node, 0, &mut s);
    s
}

impl fmt::Display for Expression {
    /// Canonical text form; parsing it back yields a structurally identical
    /// expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&display_node(&self.node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn parse1(src: &str) -> Expression {
        Expression::parse(src, 1).unwrap()
    }

    #[test]
    fn single_token_variable() {
        let e = parse1("x1");
        assert_eq!(e.node, Node::Var(0));
    }

    #[test]
    fn polynomial_arithmetic() {
        let e = Expression::parse("x1^2 + 2*x2", 2).unwrap();
        assert_eq!(e.evaluate(&[3.0, 1.0]).unwrap(), 11.0);
    }

    #[test]
    fn dangling_operator_reports_position() {
        let err = Expression::parse("x1 + ", 1).unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax {
                position: 5,
                message: "expected a number, variable, function call, or `(`, found end of input"
                    .into()
            }
        );
    }

    #[test]
    fn unknown_identifier_rejected() {
        let err = Expression::parse("foo(x1)", 1).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { ref name, position: 0 } if name == "foo"));
    }

    #[test]
    fn variable_beyond_dimension_rejected() {
        let err = Expression::parse("x1 + x3", 2).unwrap_err();
        assert_eq!(
            err,
            ParseError::VariableOutOfRange {
                index: 3,
                dim: 2,
                position: 5
            }
        );
        assert!(matches!(
            Expression::parse("x0", 2).unwrap_err(),
            ParseError::VariableOutOfRange { index: 0, .. }
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ right-associative and tighter than unary minus
        assert_eq!(parse1("2^3^2").evaluate(&[0.0]).unwrap(), 512.0);
        assert_eq!(parse1("-x1^2").evaluate(&[3.0]).unwrap(), -9.0);
        assert_eq!(parse1("(-x1)^2").evaluate(&[3.0]).unwrap(), 9.0);
        assert_eq!(parse1("2*-3").evaluate(&[0.0]).unwrap(), -6.0);
        assert_eq!(parse1("x1^-1").evaluate(&[4.0]).unwrap(), 0.25);
        assert_eq!(parse1("6 - 2 - 1").evaluate(&[0.0]).unwrap(), 3.0);
        assert_eq!(parse1("12/3/2").evaluate(&[0.0]).unwrap(), 2.0);
        assert_eq!(parse1("1 + 2*3^2").evaluate(&[0.0]).unwrap(), 19.0);
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(parse1("sin(x1)").evaluate(&[0.0]).unwrap(), 0.0);
        assert_eq!(parse1("0.5*x1^2").evaluate(&[2.0]).unwrap(), 2.0);
        let err = parse1("1/x1").evaluate(&[0.0]).unwrap_err();
        assert!(matches!(err, EvalError::NonFinite { .. }));
    }

    #[test]
    fn evaluate_dimension_mismatch() {
        let err = parse1("x1").evaluate(&[1.0, 2.0]).unwrap_err();
        assert_eq!(
            err,
            EvalError::DimensionMismatch {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn ln_of_nonpositive_is_an_error() {
        assert!(parse1("ln(x1)").evaluate(&[-1.0]).is_err());
        assert!(parse1("ln(x1)").evaluate(&[0.0]).is_err());
        assert_relative_eq!(parse1("ln(x1)").evaluate(&[2.0]).unwrap(), 2f64.ln());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(parse1("0.5*x1^2").gradient(&[2.0]).unwrap(), vec![2.0]);
        // hand differentiation: (x2 + cos x1, x1) at (0, 3) -> (4, 0)
        let e = Expression::parse("x1*x2 + sin(x1)", 2).unwrap();
        assert_eq!(e.gradient(&[0.0, 3.0]).unwrap(), vec![4.0, 0.0]);
        assert_eq!(parse1("7").gradient(&[123.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn gradient_matches_central_differences_on_named_functions() {
        // targeted checks at points safely away from kinks and poles
        let cases = [
            ("ln(x1)", 1.7),
            ("sqrt(x1)", 2.3),
            ("abs(x1)", -1.2),
            ("x1^3", -1.5),
            ("tanh(x1)/x1", 0.7),
            ("exp(-x1^2)", 0.4),
            ("cos(x1)^2 + x1*sin(x1)", 1.1),
        ];
        let h = 1e-6;
        for (src, x) in cases {
            let e = parse1(src);
            let g = e.gradient(&[x]).unwrap()[0];
            let fd =
                (e.evaluate(&[x + h]).unwrap() - e.evaluate(&[x - h]).unwrap()) / (2.0 * h);
            assert_relative_eq!(g, fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn gradient_of_variable_power_pair() {
        // non-constant exponent path: x1^x2 at (2, 3)
        let e = Expression::parse("x1^x2", 2).unwrap();
        let g = e.gradient(&[2.0, 3.0]).unwrap();
        assert_relative_eq!(g[0], 3.0 * 4.0, max_relative = 1e-12); // w x^(w-1)
        assert_relative_eq!(g[1], 8.0 * 2f64.ln(), max_relative = 1e-12); // x^w ln x
    }

    #[test]
    fn sqrt_derivative_pinned_at_zero() {
        assert_eq!(parse1("sqrt(x1)").gradient(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(parse1("abs(x1)").gradient(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn nonfinite_derivative_reported() {
        // d/dx x^(1/2) blows up at 0 while the value stays finite
        let err = parse1("x1^0.5").gradient(&[0.0]).unwrap_err();
        assert!(matches!(err, EvalError::NonFiniteDerivative { .. }));
    }

    #[test]
    fn canonical_print_examples() {
        let printed = |s: &str, dim| Expression::parse(s, dim).unwrap().to_string();
        assert_eq!(printed("0.5 * x1 ^ 2", 1), "0.5*x1^2");
        assert_eq!(printed("x1*x2 + sin(x1)", 2), "x1*x2 + sin(x1)");
        assert_eq!(printed("-(x1 + 1)", 1), "-(x1 + 1)");
        assert_eq!(printed("(x1 + 1)^2", 1), "(x1 + 1)^2");
        assert_eq!(printed("x1^2^3", 1), "x1^2^3");
        assert_eq!(printed("(x1^2)^3", 1), "(x1^2)^3");
        assert_eq!(printed("x1 - (x2 - 1)", 2), "x1 - (x2 - 1)");
    }

    #[test]
    fn builder_matches_parsed_form() {
        let built = Expression::constant(0.5, 1)
            * Expression::variable(1, 1).pow(Expression::constant(2.0, 1));
        assert_eq!(built, parse1("0.5*x1^2"));
        assert_eq!(built.to_string(), "0.5*x1^2");
        let negc = Expression::constant(-2.5, 1) * Expression::variable(1, 1);
        assert_eq!(negc.to_string(), "-2.5*x1");
        assert_eq!(Expression::parse("-2.5*x1", 1).unwrap(), negc);
        let diff = Expression::variable(1, 1) - Expression::constant(1.0, 1);
        assert_eq!(diff.to_string(), "x1 - 1");
    }

    // --- property tests -------------------------------------------------

    fn arb_node(dim: usize) -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(|c| Node::Constant(if c == 0.0 { 0.0 } else { c })),
            (0..dim).prop_map(Node::Var),
        ];
        leaf.prop_recursive(5, 64, 8, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), any::<u8>()).prop_map(|(l, r, sel)| {
                    let op = match sel % 5 {
                        0 => BinOp::Add,
                        1 => BinOp::Sub,
                        2 => BinOp::Mul,
                        3 => BinOp::Div,
                        _ => BinOp::Pow,
                    };
                    Node::Binary(op, Box::new(l), Box::new(r))
                }),
                inner.clone().prop_map(|n| Node::Neg(Box::new(n))),
                (inner, any::<u8>()).prop_map(|(n, sel)| {
                    let f = match sel % 7 {
                        0 => Func::Sin,
                        1 => Func::Cos,
                        2 => Func::Tanh,
                        3 => Func::Exp,
                        4 => Func::Ln,
                        5 => Func::Sqrt,
                        _ => Func::Abs,
                    };
                    Node::Call(f, Box::new(n))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip_is_structural_identity(node in arb_node(3)) {
            let expr = Expression { node, dim: 3 };
            let printed = expr.to_string();
            let reparsed = Expression::parse(&printed, 3).unwrap();
            prop_assert_eq!(expr, reparsed);
        }

        #[test]
        fn dual_with_zero_seeds_equals_plain_evaluation(
            node in arb_node(3),
            point in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let expr = Expression { node, dim: 3 };
            let duals: Vec<Dual> = point.iter().map(|&v| Dual::constant(v)).collect();
            match (expr.evaluate(&point), expr.evaluate_dual(&duals)) {
                (Ok(plain), Ok(dual)) => {
                    prop_assert_eq!(plain.to_bits(), dual.value.to_bits());
                    prop_assert_eq!(dual.deriv, 0.0);
                }
                (Err(_), Err(_)) => {}
                // the dual path may hit a genuine derivative singularity
                // (x^c at 0 with c < 1) that the value path sails past
                (Ok(_), Err(EvalError::NonFiniteDerivative { .. })) => {}
                (plain, dual) => prop_assert!(
                    false, "paths disagree: plain {:?}, dual {:?}", plain, dual
                ),
            }
        }
    }
}
