//! Parser for the `.pqa` term syntax.
//!
//! Precedence, tightest first:
//! atoms/unary  >  `.`  >  `<|`  >  `|`  >  `><`  >  `|_`  >  `||`
//! >  `][`  >  `+`  >  `[+p/q]`.
//!
//! `#` starts a line comment. `tau` and `delta` are the silent and
//! deadlock constants. Recursion: `rec X where { X = a . X; }`.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;

use num::bigint::BigInt;
use num::rational::BigRational;
use thiserror::Error;

use crate::prob::{fmt_rational, is_proper};
use crate::term::{check_guarded, ActionName, ProcessTerm, TermError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("{0}")]
    Term(#[from] TermError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Dot,
    Plus,
    PChoiceOpen, // "[+"
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Eq,
    Slash,
    Par,       // "||"
    LeftMerge, // "|_"
    Comm,      // "|"
    Ent,       // "><"
    MergeMem,  // "]["
    Unless,    // "<|"
    Rec,
    Where,
    Encap,
    Abstr,
    Proj,
    RenameKw,
    Theta,
    Tau,
    Delta,
    EndOfInput,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn err(&self, msg: &str) -> ParseError {
        ParseError::Syntax { line: self.line, col: self.col, msg: msg.to_string() }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.src.get(self.pos + ahead).copied()
    }

    fn lex(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek(0) {
                if c == b'#' {
                    while let Some(c) = self.peek(0) {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek(0) else {
                out.push(Spanned { tok: Tok::EndOfInput, line, col });
                return Ok(out);
            };
            let tok = match c {
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b'=' => {
                    self.bump();
                    Tok::Eq
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'[' => {
                    self.bump();
                    if self.peek(0) == Some(b'+') {
                        self.bump();
                        Tok::PChoiceOpen
                    } else {
                        Tok::LBracket
                    }
                }
                b']' => {
                    self.bump();
                    if self.peek(0) == Some(b'[') && self.peek(1) != Some(b'+') {
                        self.bump();
                        Tok::MergeMem
                    } else {
                        Tok::RBracket
                    }
                }
                b'|' => {
                    self.bump();
                    match self.peek(0) {
                        Some(b'|') => {
                            self.bump();
                            Tok::Par
                        }
                        Some(b'_') => {
                            self.bump();
                            Tok::LeftMerge
                        }
                        _ => Tok::Comm,
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek(0) == Some(b'<') {
                        self.bump();
                        Tok::Ent
                    } else {
                        return Err(self.err("expected '><'"));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek(0) == Some(b'|') {
                        self.bump();
                        Tok::Unless
                    } else {
                        return Err(self.err("expected '<|'"));
                    }
                }
                b'0'..=b'9' => {
                    let mut n: i64 = 0;
                    while let Some(d) = self.peek(0) {
                        if d.is_ascii_digit() {
                            n = n
                                .checked_mul(10)
                                .and_then(|n| n.checked_add((d - b'0') as i64))
                                .ok_or_else(|| self.err("integer literal too large"))?;
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek(0) {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    match s.as_str() {
                        "rec" => Tok::Rec,
                        "where" => Tok::Where,
                        "encap" => Tok::Encap,
                        "abstr" => Tok::Abstr,
                        "proj" => Tok::Proj,
                        "rename" => Tok::RenameKw,
                        "theta" => Tok::Theta,
                        "tau" => Tok::Tau,
                        "delta" => Tok::Delta,
                        _ => Tok::Ident(s),
                    }
                }
                other => {
                    return Err(self.err(&format!("unexpected character {:?}", other as char)))
                }
            };
            out.push(Spanned { tok, line, col });
        }
    }
}

/// Either a plain term or a `(x, z)` pair (only legal beside `][`).
enum Operand {
    Term(ProcessTerm),
    Pair(ProcessTerm, ProcessTerm),
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Stack of recursion-variable scopes.
    scopes: Vec<BTreeSet<String>>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (u32, u32) {
        (self.toks[self.pos].line, self.toks[self.pos].col)
    }

    fn err<T>(&self, msg: &str) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Syntax { line, col, msg: msg.to_string() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == &tok {
            self.bump();
            Ok(())
        } else {
            self.err(&format!("expected {what}"))
        }
    }

    fn in_scope(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(name))
    }

    // pchoice := alt ( '[+' int '/' int ']' alt )*     (left-assoc)
    fn pchoice(&mut self) -> Result<Operand, ParseError> {
        let mut lhs = self.alt()?;
        while self.peek() == &Tok::PChoiceOpen {
            let (line, col) = self.here();
            self.bump();
            let num = self.int("probability numerator")?;
            let den = if self.peek() == &Tok::Slash {
                self.bump();
                self.int("probability denominator")?
            } else {
                1
            };
            if den == 0 {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: "probability denominator is zero".to_string(),
                });
            }
            let p = BigRational::new(BigInt::from(num), BigInt::from(den));
            if !is_proper(&p) {
                return Err(ParseError::Term(TermError::BadProbability(fmt_rational(&p))));
            }
            self.expect(Tok::RBracket, "']' after probability")?;
            let rhs = self.alt()?;
            lhs = Operand::Term(ProcessTerm::pchoice(
                self.term_of(lhs)?,
                p,
                self.term_of(rhs)?,
            ));
        }
        Ok(lhs)
    }

    fn int(&mut self, what: &str) -> Result<i64, ParseError> {
        match self.bump() {
            Tok::Int(n) => Ok(n),
            _ => {
                self.pos -= 1;
                self.err(&format!("expected {what}"))
            }
        }
    }

    fn term_of(&self, op: Operand) -> Result<ProcessTerm, ParseError> {
        match op {
            Operand::Term(t) => Ok(t),
            Operand::Pair(_, _) => self.err("a '(x, y)' pair is only valid next to ']['"),
        }
    }

    // alt := mm ('+' mm)*    built right-associated
    fn alt(&mut self) -> Result<Operand, ParseError> {
        let first = self.mm()?;
        let mut parts = vec![first];
        while self.peek() == &Tok::Plus {
            self.bump();
            parts.push(self.mm()?);
        }
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        let mut it = parts.into_iter().rev();
        let mut acc = self.term_of(it.next().unwrap())?;
        for p in it {
            acc = ProcessTerm::alt(self.term_of(p)?, acc);
        }
        Ok(Operand::Term(acc))
    }

    // mm := par ('][' par)?  with pair operands
    fn mm(&mut self) -> Result<Operand, ParseError> {
        let lhs = self.par()?;
        if self.peek() != &Tok::MergeMem {
            return Ok(lhs);
        }
        self.bump();
        let rhs = self.par()?;
        match (lhs, rhs) {
            (Operand::Pair(x, z), Operand::Pair(y, w)) => Ok(Operand::Term(
                ProcessTerm::MergeMem(Box::new(x), Box::new(z), Box::new(y), Box::new(w)),
            )),
            _ => self.err("'][' expects '(x, z) ][ (y, w)'"),
        }
    }

    fn binary_chain(
        &mut self,
        next: fn(&mut Self) -> Result<Operand, ParseError>,
        tok: Tok,
        build: fn(ProcessTerm, ProcessTerm) -> ProcessTerm,
    ) -> Result<Operand, ParseError> {
        let mut lhs = next(self)?;
        while self.peek() == &tok {
            self.bump();
            let rhs = next(self)?;
            lhs = Operand::Term(build(self.term_of(lhs)?, self.term_of(rhs)?));
        }
        Ok(lhs)
    }

    fn par(&mut self) -> Result<Operand, ParseError> {
        self.binary_chain(Self::lm, Tok::Par, ProcessTerm::par)
    }

    fn lm(&mut self) -> Result<Operand, ParseError> {
        self.binary_chain(Self::ent, Tok::LeftMerge, |a, b| {
            ProcessTerm::LeftMerge(Box::new(a), Box::new(b))
        })
    }

    fn ent(&mut self) -> Result<Operand, ParseError> {
        self.binary_chain(Self::comm, Tok::Ent, |a, b| {
            ProcessTerm::EntMerge(Box::new(a), Box::new(b))
        })
    }

    fn comm(&mut self) -> Result<Operand, ParseError> {
        self.binary_chain(Self::unless, Tok::Comm, |a, b| {
            ProcessTerm::CommMerge(Box::new(a), Box::new(b))
        })
    }

    fn unless(&mut self) -> Result<Operand, ParseError> {
        self.binary_chain(Self::seq, Tok::Unless, |a, b| {
            ProcessTerm::Unless(Box::new(a), Box::new(b))
        })
    }

    // seq := primary ('.' seq)?    (right-assoc)
    fn seq(&mut self) -> Result<Operand, ParseError> {
        let lhs = self.primary()?;
        if self.peek() == &Tok::Dot {
            self.bump();
            let rhs = self.seq()?;
            return Ok(Operand::Term(ProcessTerm::seq(
                self.term_of(lhs)?,
                self.term_of(rhs)?,
            )));
        }
        Ok(lhs)
    }

    fn name_set(&mut self) -> Result<BTreeSet<ActionName>, ParseError> {
        self.expect(Tok::LBrace, "'{'")?;
        let mut out = BTreeSet::new();
        if self.peek() != &Tok::RBrace {
            loop {
                out.insert(self.action_name()?);
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RBrace, "'}'")?;
        Ok(out)
    }

    fn action_name(&mut self) -> Result<ActionName, ParseError> {
        let name = match self.bump() {
            Tok::Ident(s) => s,
            Tok::Tau => "tau".to_string(),
            Tok::Delta => "delta".to_string(),
            _ => {
                self.pos -= 1;
                return self.err("expected an action name");
            }
        };
        let mut indices = Vec::new();
        if self.peek() == &Tok::LBracket {
            self.bump();
            loop {
                indices.push(self.int("index")?);
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket, "']' after indices")?;
        }
        Ok(ActionName { name, indices })
    }

    fn primary(&mut self) -> Result<Operand, ParseError> {
        match self.peek().clone() {
            Tok::Tau => {
                self.bump();
                Ok(Operand::Term(ProcessTerm::Atom(ActionName::tau())))
            }
            Tok::Delta => {
                self.bump();
                Ok(Operand::Term(ProcessTerm::Atom(ActionName::delta())))
            }
            Tok::Ident(_) => {
                let name = self.action_name()?;
                if name.indices.is_empty() && self.in_scope(&name.name) {
                    Ok(Operand::Term(ProcessTerm::RecVar(name.name)))
                } else {
                    Ok(Operand::Term(ProcessTerm::Atom(name)))
                }
            }
            Tok::LParen => {
                self.bump();
                let first = self.pchoice()?;
                if self.peek() == &Tok::Comma {
                    self.bump();
                    let second = self.pchoice()?;
                    self.expect(Tok::RParen, "')'")?;
                    return Ok(Operand::Pair(self.term_of(first)?, self.term_of(second)?));
                }
                self.expect(Tok::RParen, "')'")?;
                Ok(first)
            }
            Tok::Encap | Tok::Abstr => {
                let is_encap = self.bump() == Tok::Encap;
                let set = self.name_set()?;
                self.expect(Tok::LParen, "'('")?;
                let body = self.pchoice()?;
                self.expect(Tok::RParen, "')'")?;
                let body = Box::new(self.term_of(body)?);
                Ok(Operand::Term(if is_encap {
                    ProcessTerm::Encap(set, body)
                } else {
                    ProcessTerm::Abstr(set, body)
                }))
            }
            Tok::Proj => {
                self.bump();
                self.expect(Tok::LBracket, "'['")?;
                let n = self.int("projection depth")?;
                if n < 1 {
                    return self.err("projection depth must be at least 1");
                }
                self.expect(Tok::RBracket, "']'")?;
                self.expect(Tok::LParen, "'('")?;
                let body = self.pchoice()?;
                self.expect(Tok::RParen, "')'")?;
                let body = Box::new(self.term_of(body)?);
                Ok(Operand::Term(ProcessTerm::Proj(n as u32, body)))
            }
            Tok::RenameKw => {
                self.bump();
                self.expect(Tok::LBracket, "'['")?;
                let fname = match self.bump() {
                    Tok::Ident(s) => s,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected a renaming name");
                    }
                };
                self.expect(Tok::RBracket, "']'")?;
                self.expect(Tok::LParen, "'('")?;
                let body = self.pchoice()?;
                self.expect(Tok::RParen, "')'")?;
                let body = Box::new(self.term_of(body)?);
                Ok(Operand::Term(ProcessTerm::Rename(fname, body)))
            }
            Tok::Theta => {
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let body = self.pchoice()?;
                self.expect(Tok::RParen, "')'")?;
                let body = Box::new(self.term_of(body)?);
                Ok(Operand::Term(ProcessTerm::Priority(body)))
            }
            Tok::Rec => {
                self.bump();
                let start = match self.bump() {
                    Tok::Ident(s) => s,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected a recursion variable after 'rec'");
                    }
                };
                self.expect(Tok::Where, "'where'")?;
                self.expect(Tok::LBrace, "'{'")?;
                // Two passes: scan binder names first so bodies can refer
                // forward, then parse bodies with the scope in place.
                let scan_from = self.pos;
                let mut vars = BTreeSet::new();
                {
                    let mut depth = 0usize;
                    let mut i = self.pos;
                    let mut expect_binder = true;
                    while i < self.toks.len() {
                        match &self.toks[i].tok {
                            Tok::LBrace => depth += 1,
                            Tok::RBrace => {
                                if depth == 0 {
                                    break;
                                }
                                depth -= 1;
                            }
                            Tok::Semi if depth == 0 => expect_binder = true,
                            Tok::Ident(s)
                                if depth == 0
                                    && expect_binder
                                    && self.toks.get(i + 1).map(|t| &t.tok) == Some(&Tok::Eq) =>
                            {
                                vars.insert(s.clone());
                                expect_binder = false;
                            }
                            _ => {
                                if expect_binder {
                                    expect_binder = false;
                                }
                            }
                        }
                        i += 1;
                    }
                }
                self.pos = scan_from;
                if !vars.contains(&start) {
                    return self.err(&format!("'{start}' is not defined by the specification"));
                }
                self.scopes.push(vars.clone());
                let mut env = BTreeMap::new();
                while self.peek() != &Tok::RBrace {
                    let var = match self.bump() {
                        Tok::Ident(s) => s,
                        _ => {
                            self.pos -= 1;
                            self.scopes.pop();
                            return self.err("expected a recursion variable binding");
                        }
                    };
                    if let Err(e) = self.expect(Tok::Eq, "'=' in recursion binding") {
                        self.scopes.pop();
                        return Err(e);
                    }
                    let body = match self.pchoice().and_then(|b| self.term_of(b)) {
                        Ok(b) => b,
                        Err(e) => {
                            self.scopes.pop();
                            return Err(e);
                        }
                    };
                    env.insert(var, body);
                    if self.peek() == &Tok::Semi {
                        self.bump();
                    } else {
                        break;
                    }
                }
                if let Err(e) = self.expect(Tok::RBrace, "'}' closing the recursion block") {
                    self.scopes.pop();
                    return Err(e);
                }
                self.scopes.pop();
                let env = Arc::new(env);
                check_guarded(&env)?;
                Ok(Operand::Term(ProcessTerm::RecSpec(start, env)))
            }
            _ => self.err("expected a term"),
        }
    }
}

/// Parse a complete `.pqa` source into a term.
pub fn parse(source: &str) -> Result<ProcessTerm, ParseError> {
    let toks = Lexer::new(source).lex()?;
    let mut p = Parser { toks, pos: 0, scopes: Vec::new() };
    let op = p.pchoice()?;
    let t = p.term_of(op)?;
    if p.peek() != &Tok::EndOfInput {
        return p.err("trailing input after term");
    }
    // Free recursion variables can only arise from malformed nesting.
    if let Some(v) = t.free_vars().into_iter().next() {
        return Err(ParseError::Term(TermError::UnboundVariable(v)));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::rat;
    use crate::term::print_term;

    fn ok(src: &str) -> ProcessTerm {
        parse(src).unwrap_or_else(|e| panic!("parse {src:?}: {e}"))
    }

    #[test]
    fn precedence_dot_over_plus() {
        let t = ok("a . b + c");
        assert_eq!(
            t,
            ProcessTerm::alt(
                ProcessTerm::seq(ProcessTerm::atom("a"), ProcessTerm::atom("b")),
                ProcessTerm::atom("c")
            )
        );
    }

    #[test]
    fn pchoice_probability() {
        let t = ok("a [+1/2] a");
        assert_eq!(
            t,
            ProcessTerm::pchoice(ProcessTerm::atom("a"), rat(1, 2), ProcessTerm::atom("a"))
        );
        match parse("a [+3/2] b") {
            Err(ParseError::Term(TermError::BadProbability(p))) => assert_eq!(p, "3/2"),
            other => panic!("expected BadProbability, got {other:?}"),
        }
    }

    #[test]
    fn unary_operators() {
        let t = ok("encap{s}(s)");
        assert_eq!(print_term(&t), "encap{s}(s)");
        let t = ok("proj[2](a . b)");
        assert_eq!(print_term(&t), "proj[2](a . b)");
        let t = ok("theta(a + b)");
        assert_eq!(print_term(&t), "theta(a + b)");
        let t = ok("abstr{i}(rename[f](a))");
        assert_eq!(print_term(&t), "abstr{i}(rename[f](a))");
    }

    #[test]
    fn merge_with_memory_needs_pairs() {
        let t = ok("(a, b) ][ (c, d)");
        assert!(matches!(t, ProcessTerm::MergeMem(_, _, _, _)));
        assert!(parse("a ][ (c, d)").is_err());
        assert!(parse("(a, b)").is_err());
    }

    #[test]
    fn recursion_binding_and_guardedness() {
        let t = ok("rec X where { X = a . Y; Y = b . X; }");
        match &t {
            ProcessTerm::RecSpec(x, env) => {
                assert_eq!(x, "X");
                assert_eq!(env.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("rec X where { X = X + a; }"),
            Err(ParseError::Term(TermError::UnguardedRecursion(_)))
        ));
        assert!(parse("rec X where { Y = a; }").is_err());
    }

    #[test]
    fn indexed_actions_and_comments() {
        let t = ok("# teleport send\nsend_P[2] . M[0,1]");
        assert_eq!(print_term(&t), "send_P[2] . M[0,1]");
    }

    #[test]
    fn indices_then_pchoice_lexes() {
        let t = ok("a[0][+1/2]b");
        assert!(matches!(t, ProcessTerm::PChoice(_, _, _)));
    }

    #[test]
    fn error_carries_position() {
        match parse("a +\n  )") {
            Err(ParseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 2);
                assert!(col >= 3);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }
}
