use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;

pub const MAX_OPERAND: u32 = 99;
/// 100 operand tokens, three operators, two parentheses.
pub const VOCAB_SIZE: usize = 105;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Token {
    Num(u32),
    Op(Op),
    LParen,
    RParen,
}

impl Token {
    /// Row in the embedding table.
    pub fn vocab_index(self) -> usize {
        match self {
            Token::Num(n) => n as usize,
            Token::Op(Op::Add) => 100,
            Token::Op(Op::Sub) => 101,
            Token::Op(Op::Mul) => 102,
            Token::LParen => 103,
            Token::RParen => 104,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(n) => write!(f, "{n}"),
            Token::Op(Op::Add) => f.write_str("+"),
            Token::Op(Op::Sub) => f.write_str("-"),
            Token::Op(Op::Mul) => f.write_str("*"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
        }
    }
}

impl From<Token> for String {
    fn from(t: Token) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for Token {
    type Error = TaskError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "+" => Ok(Token::Op(Op::Add)),
            "-" | "−" => Ok(Token::Op(Op::Sub)),
            "*" | "×" => Ok(Token::Op(Op::Mul)),
            "(" => Ok(Token::LParen),
            ")" => Ok(Token::RParen),
            other => match other.parse::<u32>() {
                Ok(n) if n <= MAX_OPERAND => Ok(Token::Num(n)),
                _ => Err(TaskError::Parse(format!("unknown token `{other}`"))),
            },
        }
    }
}

/// Binary expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Num(u32),
    Bin { op: Op, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    /// Nodes on the longest root-to-leaf path: a bare operand has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) => 1,
            Expr::Bin { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
        }
    }

    /// Serialization with every non-root binary subexpression parenthesized.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.push_tokens(&mut out, true);
        out
    }

    fn push_tokens(&self, out: &mut Vec<Token>, root: bool) {
        match self {
            Expr::Num(n) => out.push(Token::Num(*n)),
            Expr::Bin { op, lhs, rhs } => {
                if !root {
                    out.push(Token::LParen);
                }
                lhs.push_tokens(out, false);
                out.push(Token::Op(*op));
                rhs.push_tokens(out, false);
                if !root {
                    out.push(Token::RParen);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithInstance {
    pub tokens: Vec<Token>,
    pub tree: Expr,
    pub target: f64,
}

/// Splits text such as `(3 + 7) × 2` into tokens.
pub fn tokenize(text: &str) -> Result<Vec<Token>, TaskError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token::try_from(s)?);
        } else {
            out.push(Token::try_from(c.to_string())?);
            i += 1;
        }
    }
    Ok(out)
}

/// Evaluates a token sequence with the usual precedence (`*` binds tighter than `+`/`-`,
/// left associative).
pub fn eval_expr(tokens: &[Token]) -> Result<f64, TaskError> {
    let mut p = Parser { tokens, pos: 0 };
    let v = p.expr()?;
    if p.pos != tokens.len() {
        return Err(TaskError::Parse(format!("unexpected token at position {}", p.pos)));
    }
    Ok(v)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, TaskError> {
        let mut acc = self.term()?;
        while let Some(Token::Op(op @ (Op::Add | Op::Sub))) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = op.apply(acc, rhs);
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, TaskError> {
        let mut acc = self.factor()?;
        while let Some(Token::Op(Op::Mul)) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            acc *= rhs;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, TaskError> {
        match self.peek() {
            Some(Token::Num(n)) => {
                self.pos += 1;
                Ok(n as f64)
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(Token::RParen) {
                    return Err(TaskError::Parse(format!(
                        "expected `)` at position {}",
                        self.pos
                    )));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(t) => Err(TaskError::Parse(format!(
                "unexpected `{t}` at position {}",
                self.pos
            ))),
            None => Err(TaskError::Parse("unexpected end of expression".into())),
        }
    }
}

/// Probability that a non-root node becomes an operand before the depth limit.
const LEAF_PROB: f64 = 0.3;

fn gen_node<R: Rng + ?Sized>(rng: &mut R, depth_left: usize, root: bool) -> Expr {
    if depth_left == 1 || (!root && rng.random::<f64>() < LEAF_PROB) {
        return Expr::Num(rng.random_range(0..=MAX_OPERAND));
    }
    let op = match rng.random_range(0..3) {
        0 => Op::Add,
        1 => Op::Sub,
        _ => Op::Mul,
    };
    let lhs = Box::new(gen_node(rng, depth_left - 1, false));
    let rhs = Box::new(gen_node(rng, depth_left - 1, false));
    Expr::Bin { op, lhs, rhs }
}

/// Random expression tree of depth at most `max_depth` over operands in `[0, 99]`. The root is an
/// operator whenever `max_depth >= 2`.
pub fn gen_arith<R: Rng + ?Sized>(rng: &mut R, max_depth: usize) -> Result<ArithInstance, TaskError> {
    if !(1..=4).contains(&max_depth) {
        return Err(TaskError::Config(format!("max depth {max_depth} outside [1, 4]")));
    }
    let tree = gen_node(rng, max_depth, true);
    let tokens = tree.tokens();
    let target = eval_expr(&tokens)?;
    Ok(ArithInstance { tokens, tree, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn worked_example() {
        let toks = tokenize("(3 + 7) × 2").unwrap();
        assert_eq!(eval_expr(&toks).unwrap(), 20.0);
    }

    #[test]
    fn single_operand() {
        assert_eq!(eval_expr(&tokenize("42").unwrap()).unwrap(), 42.0);
    }

    #[test]
    fn precedence_without_parentheses() {
        assert_eq!(eval_expr(&tokenize("2 + 3 * 4 - 1").unwrap()).unwrap(), 13.0);
        assert_eq!(eval_expr(&tokenize("10 - 4 - 3").unwrap()).unwrap(), 3.0);
    }

    #[test]
    fn malformed_sequences_fail() {
        for bad in ["(3 + 7", "3 +", "* 2", "3 4", ")"] {
            assert!(eval_expr(&tokenize(bad).unwrap()).is_err(), "{bad}");
        }
        assert!(tokenize("3 / 4").is_err());
        assert!(tokenize("100").is_err());
    }

    #[test]
    fn generated_depth_respects_limit() {
        let mut rng = seeded(8);
        for d in 1..=4 {
            for _ in 0..200 {
                let inst = gen_arith(&mut rng, d).unwrap();
                assert!((d.min(2)..=d).contains(&inst.tree.depth()));
            }
        }
        assert!(gen_arith(&mut rng, 5).is_err());
        assert!(gen_arith(&mut rng, 0).is_err());
    }

    #[test]
    fn token_strings_round_trip() {
        let toks = tokenize("(12 - 3) * (4 + 99)").unwrap();
        let json = serde_json::to_string(&toks).unwrap();
        assert_eq!(json, r#"["(","12","-","3",")","*","(","4","+","99",")"]"#);
        let back: Vec<Token> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, toks);
    }
}
