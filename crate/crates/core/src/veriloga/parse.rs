//! Lexer, recursive-descent parser and declaration checks for the subset.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::ast::*;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Directive(String),
    Comment(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: [&str; 15] = ["<+", "(", ")", "[", "]", ",", ";", ":", "=", "+", "-", "*", "/", "@", "."];

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| Error::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            let start = i + 2;
            let mut j = start;
            while j < chars.len() && chars[j] != '\n' {
                j += 1;
            }
            let text: String = chars[start..j].iter().collect();
            toks.push(Token { tok: Tok::Comment(text.trim_end().to_string()), line: l0, col: c0 });
            col += j - i;
            i = j;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let mut j = i + 2;
            loop {
                if j + 1 >= chars.len() {
                    return Err(err(l0, c0, "unterminated block comment".into()));
                }
                if chars[j] == '*' && chars[j + 1] == '/' {
                    break;
                }
                if chars[j] == '\n' {
                    line += 1;
                    col = 0;
                }
                j += 1;
                col += 1;
            }
            col += 2;
            i = j + 2;
            continue;
        }
        if c == '`' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            toks.push(Token { tok: Tok::Directive(chars[i + 1..j].iter().collect()), line: l0, col: c0 });
            advance(j - i, &mut i, &mut col);
            continue;
        }
        if c == '"' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                j += 1;
            }
            if chars.get(j) != Some(&'"') {
                return Err(err(l0, c0, "unterminated string".into()));
            }
            toks.push(Token { tok: Tok::Str(chars[i + 1..j].iter().collect()), line: l0, col: c0 });
            advance(j + 1 - i, &mut i, &mut col);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '$') {
                j += 1;
            }
            toks.push(Token { tok: Tok::Ident(chars[i..j].iter().collect()), line: l0, col: c0 });
            advance(j - i, &mut i, &mut col);
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let text: String = chars[i..j].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| err(l0, c0, format!("malformed number `{text}`")))?;
            toks.push(Token { tok: Tok::Num(v), line: l0, col: c0 });
            advance(j - i, &mut i, &mut col);
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        if let Some(p) = PUNCT.iter().find(|p| rest.starts_with(**p)) {
            toks.push(Token { tok: Tok::Punct(p), line: l0, col: c0 });
            advance(p.len(), &mut i, &mut col);
            continue;
        }
        return Err(err(l0, c0, format!("unexpected character `{c}`")));
    }
    toks.push(Token { tok: Tok::Eof, line, col });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    /// Next token, skipping comments.
    fn peek(&mut self) -> &Token {
        while matches!(self.toks[self.pos].tok, Tok::Comment(_)) {
            self.pos += 1;
        }
        &self.toks[self.pos]
    }

    fn peek_comment(&self) -> Option<String> {
        match &self.toks[self.pos].tok {
            Tok::Comment(c) => Some(c.clone()),
            _ => None,
        }
    }

    fn bump(&mut self) -> Token {
        self.peek();
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&mut self, msg: impl Into<String>) -> Result<T> {
        let t = self.peek();
        Err(Error::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn is_punct(&mut self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_ident(&mut self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(q) if q == s)
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            let found = describe(&self.peek().tok);
            self.error(format!("expected `{p}`, found {found}"))
        }
    }

    fn expect_keyword(&mut self, k: &str) -> Result<()> {
        if self.is_ident(k) {
            self.bump();
            Ok(())
        } else {
            let found = describe(&self.peek().tok);
            self.error(format!("expected `{k}`, found {found}"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn uint(&mut self) -> Result<usize> {
        match self.peek().tok {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e9 => {
                self.bump();
                Ok(v as usize)
            }
            _ => self.error("expected a non-negative integer"),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>> {
        let mut out = vec![self.ident()?];
        while self.is_punct(",") {
            self.bump();
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn node_ref(&mut self) -> Result<NodeRef> {
        let name = self.ident()?;
        let index = if self.is_punct("[") {
            self.bump();
            let i = self.uint()?;
            self.expect_punct("]")?;
            Some(i)
        } else {
            None
        };
        Ok(NodeRef { name, index })
    }

    fn module(&mut self) -> Result<VaModule> {
        let mut includes = Vec::new();
        while let Tok::Directive(d) = self.peek().tok.clone() {
            if d != "include" {
                return self.error(format!("unsupported directive `{d}"));
            }
            self.bump();
            match self.bump().tok {
                Tok::Str(s) => includes.push(s),
                _ => return self.error("expected a quoted file name after `include"),
            }
        }
        self.expect_keyword("module")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let ports = self.ident_list()?;
        self.expect_punct(")")?;
        self.expect_punct(";")?;
        let mut items = Vec::new();
        loop {
            self.peek_skip_none();
            if let Some(c) = self.peek_comment() {
                self.pos += 1;
                items.push(Item::Comment(c));
                continue;
            }
            if self.is_ident("endmodule") {
                self.bump();
                break;
            }
            items.push(self.item()?);
        }
        if !matches!(self.peek().tok, Tok::Eof) {
            return self.error("unexpected text after endmodule");
        }
        Ok(VaModule { includes, name, ports, items })
    }

    fn peek_skip_none(&self) {}

    fn item(&mut self) -> Result<Item> {
        let kw = self.ident()?;
        let item = match kw.as_str() {
            "inout" => Item::Inout(self.ident_list()?),
            "electrical" => {
                let mut decls = Vec::new();
                loop {
                    let name = self.ident()?;
                    let range = if self.is_punct("[") {
                        self.bump();
                        let lo = self.uint()?;
                        self.expect_punct(":")?;
                        let hi = self.uint()?;
                        self.expect_punct("]")?;
                        Some((lo, hi))
                    } else {
                        None
                    };
                    decls.push(NodeDecl { name, range });
                    if !self.is_punct(",") {
                        break;
                    }
                    self.bump();
                }
                Item::Electrical(decls)
            }
            "branch" => {
                self.expect_punct("(")?;
                let pos = self.node_ref()?;
                self.expect_punct(",")?;
                let neg = self.node_ref()?;
                self.expect_punct(")")?;
                Item::Branch { pos, neg, name: self.ident()? }
            }
            "parameter" => {
                self.expect_keyword("real")?;
                let name = self.ident()?;
                self.expect_punct("=")?;
                let value = match self.signed_number() {
                    Some(v) => v,
                    None => return self.error("parameter value must be a numeric literal"),
                };
                Item::Parameter { name, value }
            }
            "real" => Item::Real(self.ident_list()?),
            "analog" => {
                self.expect_keyword("begin")?;
                let body = self.block()?;
                return Ok(Item::Analog(body));
            }
            other => return self.error(format!("unsupported module item `{other}`")),
        };
        self.expect_punct(";")?;
        Ok(item)
    }

    fn signed_number(&mut self) -> Option<f64> {
        let neg = if self.is_punct("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().tok {
            Tok::Num(v) => {
                self.bump();
                Some(if neg { -v } else { v })
            }
            _ => None,
        }
    }

    /// Statements up to and including the matching `end`.
    fn block(&mut self) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            if let Some(c) = self.peek_comment() {
                self.pos += 1;
                out.push(Stmt::Comment(c));
                continue;
            }
            if self.is_ident("end") {
                self.bump();
                return Ok(out);
            }
            if matches!(self.peek().tok, Tok::Eof) {
                return self.error("missing `end`");
            }
            out.push(self.stmt()?);
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        if self.is_punct("@") {
            self.bump();
            self.expect_punct("(")?;
            self.expect_keyword("initial_step")?;
            self.expect_punct(")")?;
            self.expect_keyword("begin")?;
            return Ok(Stmt::InitialStep(self.block()?));
        }
        let name = self.ident()?;
        if (name == "V" || name == "I") && self.is_punct("(") {
            let target = self.probe_args(&name)?;
            self.expect_punct("<+")?;
            let expr = self.expr()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Contrib { target, expr });
        }
        self.expect_punct("=")?;
        let expr = self.expr()?;
        self.expect_punct(";")?;
        Ok(Stmt::Assign { name, expr })
    }

    fn probe_args(&mut self, nature: &str) -> Result<Probe> {
        self.expect_punct("(")?;
        let mut args = vec![self.node_ref()?];
        if self.is_punct(",") {
            self.bump();
            args.push(self.node_ref()?);
        }
        self.expect_punct(")")?;
        let nature = if nature == "V" { Nature::Potential } else { Nature::Flow };
        Ok(Probe { nature, args })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_punct("+") {
                BinOp::Add
            } else if self.is_punct("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_punct("*") {
                BinOp::Mul
            } else if self.is_punct("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.is_punct("-") {
            self.bump();
            // A minus written directly before a literal is part of the literal.
            if let Tok::Num(v) = self.peek().tok {
                self.bump();
                return Ok(Expr::Num(-v));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.is_punct("+") {
            self.bump();
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if !self.is_punct("(") {
                    return Ok(Expr::Var(name));
                }
                match name.as_str() {
                    "V" | "I" => Ok(Expr::Probe(self.probe_args(&name)?)),
                    "ddt" => {
                        self.bump();
                        let e = self.expr()?;
                        self.expect_punct(")")?;
                        Ok(Expr::Ddt(Box::new(e)))
                    }
                    f => match Func::from_name(f) {
                        Some(func) => {
                            self.bump();
                            let e = self.expr()?;
                            self.expect_punct(")")?;
                            Ok(Expr::call(func, e))
                        }
                        None => self.error(format!("unsupported function `{f}`")),
                    },
                }
            }
            other => self.error(format!("expected an expression, found {}", describe(&other))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v) => format!("number {v}"),
        Tok::Str(s) => format!("string \"{s}\""),
        Tok::Directive(d) => format!("directive `{d}"),
        Tok::Comment(_) => "comment".into(),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parse source text and check its declarations.
pub fn parse_subset(src: &str) -> Result<VaModule> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let m = p.module()?;
    validate(&m)?;
    Ok(m)
}

/// Declared nodes, branches and variables of a module.
#[derive(Debug, Default)]
pub(crate) struct Scope {
    /// Node name to bus range (`None` for scalar nodes).
    pub nodes: HashMap<String, Option<(usize, usize)>>,
    /// Branch name to its `(pos, neg)` nodes.
    pub branches: HashMap<String, (NodeRef, NodeRef)>,
    pub reals: HashSet<String>,
    pub params: HashMap<String, f64>,
}

impl Scope {
    pub fn build(m: &VaModule) -> Result<Self> {
        let mut s = Scope::default();
        let mut inouts = HashSet::new();
        for item in &m.items {
            match item {
                Item::Inout(names) => inouts.extend(names.iter().cloned()),
                Item::Electrical(decls) => {
                    for d in decls {
                        if let Some((lo, hi)) = d.range {
                            if lo > hi {
                                return Err(Error::Semantic(format!("node bus `{}` has an empty range", d.name)));
                            }
                        }
                        if s.nodes.insert(d.name.clone(), d.range).is_some() {
                            return Err(Error::Semantic(format!("node `{}` declared twice", d.name)));
                        }
                    }
                }
                Item::Branch { pos, neg, name } => {
                    s.branches.insert(name.clone(), (pos.clone(), neg.clone()));
                }
                Item::Parameter { name, value } => {
                    s.params.insert(name.clone(), *value);
                }
                Item::Real(names) => s.reals.extend(names.iter().cloned()),
                Item::Comment(_) | Item::Analog(_) => {}
            }
        }
        for port in &m.ports {
            if !inouts.contains(port) {
                return Err(Error::Semantic(format!("port `{port}` has no direction declaration")));
            }
            if !s.nodes.contains_key(port) {
                return Err(Error::Semantic(format!("undeclared node `{port}`")));
            }
        }
        for (pos, neg) in s.branches.values() {
            s.check_node(pos)?;
            s.check_node(neg)?;
        }
        Ok(s)
    }

    pub fn check_node(&self, n: &NodeRef) -> Result<()> {
        match (self.nodes.get(&n.name), n.index) {
            (Some(None), None) => Ok(()),
            (Some(Some((lo, hi))), Some(i)) if (*lo..=*hi).contains(&i) => Ok(()),
            (Some(Some(_)), Some(_)) => Err(Error::Semantic(format!("undeclared node `{n}` (index out of range)"))),
            (Some(Some(_)), None) => Err(Error::Semantic(format!("node bus `{n}` used without an index"))),
            (Some(None), Some(_)) => Err(Error::Semantic(format!("undeclared node `{n}` (not a bus)"))),
            (None, _) => Err(Error::Semantic(format!("undeclared node `{n}`"))),
        }
    }

    fn check_probe(&self, p: &Probe) -> Result<()> {
        match p.args.as_slice() {
            [one] if p.nature == Nature::Flow && one.index.is_none() && self.branches.contains_key(&one.name) => Ok(()),
            [one] => self.check_node(one),
            [a, b] => {
                self.check_node(a)?;
                self.check_node(b)
            }
            _ => Err(Error::Semantic(format!("malformed access `{p}`"))),
        }
    }

    fn check_expr(&self, e: &Expr) -> Result<()> {
        match e {
            Expr::Num(_) => Ok(()),
            Expr::Var(v) => {
                if self.reals.contains(v) || self.params.contains_key(v) {
                    Ok(())
                } else {
                    Err(Error::Semantic(format!("undeclared variable `{v}`")))
                }
            }
            Expr::Probe(p) => self.check_probe(p),
            Expr::Neg(a) | Expr::Call(_, a) => self.check_expr(a),
            Expr::Bin(_, a, b) => {
                self.check_expr(a)?;
                self.check_expr(b)
            }
            Expr::Ddt(a) => match a.as_ref() {
                Expr::Probe(p) if p.nature == Nature::Potential => self.check_probe(p),
                other => Err(Error::Semantic(format!("ddt applies only to a potential access, got `{other}`"))),
            },
        }
    }

    fn check_stmts(&self, stmts: &[Stmt], nested: bool) -> Result<()> {
        for s in stmts {
            match s {
                Stmt::Comment(_) => {}
                Stmt::Assign { name, expr } => {
                    if !self.reals.contains(name) {
                        return Err(Error::Semantic(format!("assignment to undeclared variable `{name}`")));
                    }
                    self.check_expr(expr)?;
                }
                Stmt::Contrib { target, expr } => {
                    self.check_probe(target)?;
                    self.check_expr(expr)?;
                }
                Stmt::InitialStep(body) => {
                    if nested {
                        return Err(Error::Semantic("nested @(initial_step) block".into()));
                    }
                    self.check_stmts(body, true)?;
                }
            }
        }
        Ok(())
    }
}

/// Every node, branch and variable reference must resolve to a declaration.
pub fn validate(m: &VaModule) -> Result<()> {
    let scope = Scope::build(m)?;
    let mut analog = 0;
    for item in &m.items {
        if let Item::Analog(stmts) = item {
            analog += 1;
            scope.check_stmts(stmts, false)?;
        }
    }
    if analog != 1 {
        return Err(Error::Semantic(format!("expected one analog block, found {analog}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"`include "constants.vams"
`include "disciplines.vams"

module lin(n, p, gnd);
  inout n, p, gnd;
  electrical n, p, gnd;
  electrical h[0:1];
  // Branches
  branch (h[0], gnd) H0;
  branch (h[1], gnd) H1;
  parameter real k = -2.5e-1;
  real a, b;
  analog begin
    @(initial_step) begin
      V(h[0], gnd) <+ 1.0;
    end
    a = -V(h[0], gnd) * k + 3 - (2 - 1);
    b = tanh(a) / exp(-a) - -1.5;
    I(H0) <+ a - ddt(V(h[0], gnd));
    I(H1) <+ -(b) - ddt(V(h[1]));
    I(n, p) <+ V(h[1], gnd) + ddt(V(n, p));
  end
endmodule
"#;

    #[test]
    fn parses_and_round_trips() {
        let m = parse_subset(SMALL).unwrap();
        assert_eq!(m.name, "lin");
        assert_eq!(m.includes, vec!["constants.vams", "disciplines.vams"]);
        let printed = print_module(&m);
        let again = parse_subset(&printed).unwrap();
        assert_eq!(print_module(&again), printed);
    }

    #[test]
    fn precedence_is_preserved() {
        let m = parse_subset(SMALL).unwrap();
        let Item::Analog(stmts) = m.items.iter().find(|i| matches!(i, Item::Analog(_))).unwrap() else {
            unreachable!()
        };
        let Stmt::Assign { expr, .. } = &stmts[1] else { panic!() };
        // (-V * k + 3) - (2 - 1)
        let Expr::Bin(BinOp::Sub, lhs, rhs) = expr else { panic!("{expr:?}") };
        assert!(matches!(rhs.as_ref(), Expr::Bin(BinOp::Sub, ..)));
        assert!(matches!(lhs.as_ref(), Expr::Bin(BinOp::Add, ..)));
        assert_eq!(format!("{expr}"), "-V(h[0], gnd) * k + 3.0000000000000000e0 - (2.0000000000000000e0 - 1.0000000000000000e0)");
    }

    #[test]
    fn printer_parenthesizes_right_operands() {
        let e = Expr::bin(
            BinOp::Sub,
            Expr::var("a"),
            Expr::bin(BinOp::Add, Expr::var("b"), Expr::var("c")),
        );
        assert_eq!(e.to_string(), "a - (b + c)");
        let e = Expr::bin(BinOp::Div, Expr::var("a"), Expr::bin(BinOp::Mul, Expr::var("b"), Expr::var("c")));
        assert_eq!(e.to_string(), "a / (b * c)");
        let e = Expr::Neg(Box::new(Expr::Num(-1.0)));
        assert_eq!(e.to_string(), "-(-1.0000000000000000e0)");
    }

    #[test]
    fn undeclared_node_is_named() {
        let bad = SMALL.replace("I(H1) <+ -(b) - ddt(V(h[1]));", "I(H1) <+ -(b) - ddt(V(q));");
        let err = parse_subset(&bad).unwrap_err().to_string();
        assert!(err.contains("`q`"), "{err}");
        let bad = SMALL.replace("V(h[1], gnd) + ddt", "V(h[2], gnd) + ddt");
        let err = parse_subset(&bad).unwrap_err().to_string();
        assert!(err.contains("h[2]"), "{err}");
    }

    #[test]
    fn syntax_errors_have_positions() {
        let bad = SMALL.replace("a = -V(h[0], gnd)", "a = -V(h[0], gnd) )");
        match parse_subset(&bad).unwrap_err() {
            Error::Syntax { line, col, .. } => {
                assert_eq!(line, 17);
                assert!(col > 10);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_constructs_outside_subset() {
        assert!(parse_subset(&SMALL.replace("tanh(a)", "sqrt(a)")).is_err());
        assert!(parse_subset(&SMALL.replace("ddt(V(n, p))", "ddt(a)")).is_err());
        assert!(parse_subset(&SMALL.replace("real a, b;", "integer a, b;")).is_err());
        assert!(parse_subset(&SMALL.replace("b = tanh", "c = tanh")).is_err());
    }
}
