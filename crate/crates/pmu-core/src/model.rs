//! Measurement models: scalar functions a = f(x1..xn) of the input
//! quantities.
//!
//! Built-in models cover the geometry used by the evaluation pipeline
//! (point distance, Euclidean norm, linear combination, finite-difference
//! speed) and carry closed-form gradients. Arbitrary models are parsed
//! from an s-expression form such as
//!
//! ```text
//! (sqrt (add (pow (sub xH xR) 2) (pow (sub yH yR) 2) (pow (sub zH zR) 2)))
//! ```
//!
//! and evaluated on an explicit value stack; their gradients come from
//! central finite differences with one-sided fallback at domain edges.

use thiserror::Error;

/// Relative step for finite-difference gradients: `h = 1e-6 * max(|x|, 1)`.
pub const FD_STEP_REL: f64 = 1e-6;

/// Parse depth limit; deeper nesting is rejected rather than risking the
/// call stack.
pub const MAX_NESTING: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model expects {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("input {0} is not finite")]
    NonFiniteInput(usize),
    #[error("input index {index} out of range for arity {arity}")]
    IndexOutOfRange { index: usize, arity: usize },
    #[error("domain error in `{op}`")]
    Domain { op: &'static str },
    #[error("dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("gradient undefined: {0}; use Monte-Carlo propagation instead")]
    GradientUndefined(&'static str),
    #[error("model needs at least one input")]
    Empty,
    #[error("coefficient {0} is not finite")]
    NonFiniteCoefficient(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected `{0}`")]
    UnexpectedToken(String),
    #[error("unknown operator `{0}`")]
    UnknownOp(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{op}` expects {expected} arguments, got {got}")]
    WrongArgCount {
        op: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("numeric literal `{0}` is not finite")]
    NonFiniteLiteral(String),
    #[error("pow exponent must be an integer literal")]
    NonIntegerExponent,
    #[error("nesting deeper than {MAX_NESTING} levels")]
    TooDeep,
    #[error("trailing input after expression")]
    TrailingInput,
    #[error("duplicate input name `{0}`")]
    DuplicateInput(String),
}

/// Postfix instruction stream; well-formed by construction (the parser is
/// the only producer).
#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Add(usize),
    Mul(usize),
    Sub,
    Div,
    Powi(i32),
    Sqrt,
    Neg,
}

#[derive(Debug, Clone, PartialEq)]
enum ModelKind {
    Distance3d,
    EuclideanNorm,
    LinearCombination(Vec<f64>),
    RelativeSpeed,
    Expr(Vec<Instr>),
}

/// A scalar measurement function with named inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    names: Vec<String>,
    kind: ModelKind,
}

impl MeasurementModel {
    /// Euclidean distance between two 3D points; inputs
    /// `xH yH zH xR yR zR`.
    pub fn distance3d() -> Self {
        Self {
            names: ["xH", "yH", "zH", "xR", "yR", "zR"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            kind: ModelKind::Distance3d,
        }
    }

    /// `sqrt(x1^2 + .. + xn^2)`.
    pub fn euclidean_norm(n: usize) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::Empty);
        }
        Ok(Self {
            names: (1..=n).map(|i| format!("x{i}")).collect(),
            kind: ModelKind::EuclideanNorm,
        })
    }

    /// `c1*x1 + .. + cn*xn`.
    pub fn linear_combination(coefficients: Vec<f64>) -> Result<Self, ModelError> {
        if coefficients.is_empty() {
            return Err(ModelError::Empty);
        }
        if let Some(i) = coefficients.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFiniteCoefficient(i));
        }
        Ok(Self {
            names: (1..=coefficients.len()).map(|i| format!("x{i}")).collect(),
            kind: ModelKind::LinearCombination(coefficients),
        })
    }

    /// Signed rate of change `(d_curr - d_prev) / dt`; inputs
    /// `d_prev d_curr dt`.
    pub fn relative_speed() -> Self {
        Self {
            names: ["d_prev", "d_curr", "dt"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            kind: ModelKind::RelativeSpeed,
        }
    }

    /// Looks up a built-in by its config name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "distance3d" => Some(Self::distance3d()),
            "relative-speed" => Some(Self::relative_speed()),
            _ => None,
        }
    }

    /// Parses an s-expression model over the declared inputs. Inputs may
    /// go unused; referencing an undeclared symbol is an error.
    pub fn parse<S: AsRef<str>>(text: &str, inputs: &[S]) -> Result<Self, ParseError> {
        let names: Vec<String> = inputs.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(ParseError::DuplicateInput(name.clone()));
            }
        }
        let tokens = tokenize(text);
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            names: &names,
            out: Vec::new(),
        };
        parser.expr(0)?;
        if parser.pos != tokens.len() {
            return Err(ParseError::TrailingInput);
        }
        let instrs = parser.out;
        Ok(Self {
            names,
            kind: ModelKind::Expr(instrs),
        })
    }

    pub fn arity(&self) -> usize {
        self.names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.names
    }

    fn check_inputs(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.arity() {
            return Err(ModelError::Arity {
                expected: self.arity(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput(i));
        }
        Ok(())
    }

    /// Evaluates the model at `x` (positional, in declared-input order).
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_inputs(x)?;
        let value = match &self.kind {
            ModelKind::Distance3d => {
                let dx = x[0] - x[3];
                let dy = x[1] - x[4];
                let dz = x[2] - x[5];
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
            ModelKind::EuclideanNorm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ModelKind::LinearCombination(c) => {
                c.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            }
            ModelKind::RelativeSpeed => {
                if x[2] <= 0.0 {
                    return Err(ModelError::NonPositiveDt(x[2]));
                }
                (x[1] - x[0]) / x[2]
            }
            ModelKind::Expr(instrs) => run(instrs, x)?,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ModelError::Domain { op: "overflow" })
        }
    }

    /// Sensitivity coefficient ∂f/∂xᵢ at `x0`; see [`gradient`] for the
    /// full vector.
    ///
    /// [`gradient`]: MeasurementModel::gradient
    pub fn sensitivity(&self, x0: &[f64], i: usize) -> Result<f64, ModelError> {
        self.check_inputs(x0)?;
        if i >= self.arity() {
            return Err(ModelError::IndexOutOfRange {
                index: i,
                arity: self.arity(),
            });
        }
        match &self.kind {
            ModelKind::Expr(_) => {
                let f0 = self.evaluate(x0)?;
                self.fd_component(x0, f0, i)
            }
            _ => Ok(self.gradient(x0)?[i]),
        }
    }

    /// Gradient of the model at `x0`. Built-ins use closed forms; parsed
    /// expressions use central differences (step [`FD_STEP_REL`]) with a
    /// one-sided fallback when a probe leaves the model's domain.
    pub fn gradient(&self, x0: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_inputs(x0)?;
        match &self.kind {
            ModelKind::Distance3d => {
                let d = self.evaluate(x0)?;
                if d == 0.0 {
                    return Err(ModelError::GradientUndefined(
                        "distance gradient at coincident points",
                    ));
                }
                let g = [
                    (x0[0] - x0[3]) / d,
                    (x0[1] - x0[4]) / d,
                    (x0[2] - x0[5]) / d,
                ];
                Ok(vec![g[0], g[1], g[2], -g[0], -g[1], -g[2]])
            }
            ModelKind::EuclideanNorm => {
                let r = self.evaluate(x0)?;
                if r == 0.0 {
                    return Err(ModelError::GradientUndefined("norm gradient at origin"));
                }
                Ok(x0.iter().map(|v| v / r).collect())
            }
            ModelKind::LinearCombination(c) => Ok(c.clone()),
            ModelKind::RelativeSpeed => {
                let dt = x0[2];
                if dt <= 0.0 {
                    return Err(ModelError::NonPositiveDt(dt));
                }
                Ok(vec![
                    -1.0 / dt,
                    1.0 / dt,
                    -(x0[1] - x0[0]) / (dt * dt),
                ])
            }
            ModelKind::Expr(_) => {
                let f0 = self.evaluate(x0)?;
                (0..x0.len()).map(|i| self.fd_component(x0, f0, i)).collect()
            }
        }
    }

    fn fd_component(&self, x0: &[f64], f0: f64, i: usize) -> Result<f64, ModelError> {
        let mut x = x0.to_vec();
        let h = FD_STEP_REL * x0[i].abs().max(1.0);
        x[i] = x0[i] + h;
        let fp = self.evaluate(&x);
        x[i] = x0[i] - h;
        let fm = self.evaluate(&x);
        match (fp, fm) {
            (Ok(fp), Ok(fm)) => Ok((fp - fm) / (2.0 * h)),
            (Ok(fp), Err(_)) => Ok((fp - f0) / h),
            (Err(_), Ok(fm)) => Ok((f0 - fm) / h),
            (Err(e), Err(_)) => Err(e),
        }
    }
}

fn run(instrs: &[Instr], x: &[f64]) -> Result<f64, ModelError> {
    let mut stack: Vec<f64> = Vec::with_capacity(16);
    for instr in instrs {
        match instr {
            Instr::Const(v) => stack.push(*v),
            Instr::Var(i) => stack.push(x[*i]),
            Instr::Add(argc) => {
                let base = stack.len() - argc;
                let s = stack[base..].iter().sum();
                stack.truncate(base);
                stack.push(s);
            }
            Instr::Mul(argc) => {
                let base = stack.len() - argc;
                let p = stack[base..].iter().product();
                stack.truncate(base);
                stack.push(p);
            }
            Instr::Sub => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                *a -= b;
            }
            Instr::Div => {
                let b = stack.pop().expect("well-formed program");
                if b == 0.0 {
                    return Err(ModelError::Domain { op: "div" });
                }
                let a = stack.last_mut().expect("well-formed program");
                *a /= b;
            }
            Instr::Powi(k) => {
                let a = stack.last_mut().expect("well-formed program");
                let r = a.powi(*k);
                // 0 to a negative power overflows to infinity.
                if !r.is_finite() {
                    return Err(ModelError::Domain { op: "pow" });
                }
                *a = r;
            }
            Instr::Sqrt => {
                let a = stack.last_mut().expect("well-formed program");
                if *a < 0.0 {
                    return Err(ModelError::Domain { op: "sqrt" });
                }
                *a = a.sqrt();
            }
            Instr::Neg => {
                let a = stack.last_mut().expect("well-formed program");
                *a = -*a;
            }
        }
    }
    debug_assert_eq!(stack.len(), 1);
    Ok(stack[0])
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    LParen,
    RParen,
    Atom(String),
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut atom = String::new();
    for c in text.chars() {
        match c {
            '(' | ')' => {
                if !atom.is_empty() {
                    tokens.push(Token::Atom(std::mem::take(&mut atom)));
                }
                tokens.push(if c == '(' { Token::LParen } else { Token::RParen });
            }
            c if c.is_whitespace() => {
                if !atom.is_empty() {
                    tokens.push(Token::Atom(std::mem::take(&mut atom)));
                }
            }
            c => atom.push(c),
        }
    }
    if !atom.is_empty() {
        tokens.push(Token::Atom(atom));
    }
    tokens
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    names: &'a [String],
    out: Vec<Instr>,
}

impl<'a> Parser<'a> {
    fn next(&mut self) -> Result<&'a Token, ParseError> {
        let t = self.tokens.get(self.pos).ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn expr(&mut self, depth: usize) -> Result<(), ParseError> {
        if depth > MAX_NESTING {
            return Err(ParseError::TooDeep);
        }
        match self.next()? {
            Token::RParen => Err(ParseError::UnexpectedToken(")".into())),
            Token::Atom(a) => self.atom(a),
            Token::LParen => {
                let op = match self.next()? {
                    Token::Atom(a) => a.clone(),
                    Token::LParen => return Err(ParseError::UnexpectedToken("(".into())),
                    Token::RParen => return Err(ParseError::UnexpectedToken(")".into())),
                };
                let mut arg_starts = Vec::new();
                while !matches!(self.tokens.get(self.pos), Some(Token::RParen)) {
                    arg_starts.push(self.out.len());
                    self.expr(depth + 1)?;
                }
                self.pos += 1; // consume ')'
                self.apply(&op, &arg_starts)
            }
        }
    }

    fn atom(&mut self, a: &str) -> Result<(), ParseError> {
        if let Ok(v) = a.parse::<f64>() {
            // `inf` and `nan` parse as floats; keep them out of models.
            if !v.is_finite() {
                return Err(ParseError::NonFiniteLiteral(a.into()));
            }
            self.out.push(Instr::Const(v));
            return Ok(());
        }
        match self.names.iter().position(|n| n == a) {
            Some(i) => {
                self.out.push(Instr::Var(i));
                Ok(())
            }
            None => Err(ParseError::UnknownVariable(a.into())),
        }
    }

    fn apply(&mut self, op: &str, arg_starts: &[usize]) -> Result<(), ParseError> {
        let argc = arg_starts.len();
        let wrong = |op: &'static str, expected: &'static str| {
            Err(ParseError::WrongArgCount { op, expected, got: argc })
        };
        match op {
            "add" => {
                if argc < 2 {
                    return wrong("add", "2 or more");
                }
                self.out.push(Instr::Add(argc));
            }
            "mul" => {
                if argc < 2 {
                    return wrong("mul", "2 or more");
                }
                self.out.push(Instr::Mul(argc));
            }
            "sub" => {
                if argc != 2 {
                    return wrong("sub", "2");
                }
                self.out.push(Instr::Sub);
            }
            "div" => {
                if argc != 2 {
                    return wrong("div", "2");
                }
                self.out.push(Instr::Div);
            }
            "pow" => {
                if argc != 2 {
                    return wrong("pow", "2");
                }
                // Exponent must be a bare integer literal, e.g. (pow d 2).
                let expo = &self.out[arg_starts[1]..];
                let k = match expo {
                    [Instr::Const(v)] if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                        *v as i32
                    }
                    _ => return Err(ParseError::NonIntegerExponent),
                };
                self.out.truncate(arg_starts[1]);
                self.out.push(Instr::Powi(k));
            }
            "sqrt" => {
                if argc != 1 {
                    return wrong("sqrt", "1");
                }
                self.out.push(Instr::Sqrt);
            }
            "neg" => {
                if argc != 1 {
                    return wrong("neg", "1");
                }
                self.out.push(Instr::Neg);
            }
            other => return Err(ParseError::UnknownOp(other.into())),
        }
        Ok(())
    }
}

pub const DISTANCE3D_EXPR: &str =
    "(sqrt (add (pow (sub xH xR) 2) (pow (sub yH yR) 2) (pow (sub zH zR) 2)))";
