//! Syntax tree for the emitted Verilog-A subset, and its printer.

use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq)]
pub struct VaModule {
    /// Files named by `` `include`` directives, in order.
    pub includes: Vec<String>,
    pub name: String,
    pub ports: Vec<String>,
    pub items: Vec<Item>,
}

/// A node name with an optional bus index, e.g. `h[3]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub name: String,
    pub index: Option<usize>,
}

impl NodeRef {
    pub fn scalar(name: impl Into<String>) -> Self {
        Self { name: name.into(), index: None }
    }

    pub fn indexed(name: impl Into<String>, index: usize) -> Self {
        Self { name: name.into(), index: Some(index) }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]", self.name, i),
            None => f.write_str(&self.name),
        }
    }
}

/// `electrical` declaration entry; `range` is the `[lo:hi]` bus range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDecl {
    pub name: String,
    pub range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Comment(String),
    Inout(Vec<String>),
    Electrical(Vec<NodeDecl>),
    Branch { pos: NodeRef, neg: NodeRef, name: String },
    Parameter { name: String, value: f64 },
    Real(Vec<String>),
    Analog(Vec<Stmt>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nature {
    Potential,
    Flow,
}

impl Nature {
    fn keyword(self) -> &'static str {
        match self {
            Nature::Potential => "V",
            Nature::Flow => "I",
        }
    }
}

/// `V(a)`, `V(a, b)`, `I(branch)` or `I(a, b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub nature: Nature,
    pub args: Vec<NodeRef>,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.nature.keyword())?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Comment(String),
    Assign { name: String, expr: Expr },
    Contrib { target: Probe, expr: Expr },
    /// `@(initial_step) begin ... end`
    InitialStep(Vec<Stmt>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Tanh,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Tanh => "tanh",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Func::Tanh),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Probe(Probe),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Ddt(Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, a: Expr) -> Self {
        Expr::Call(f, Box::new(a))
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.prec(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            _ => 4,
        }
    }
}

/// Seventeen significant digits, enough to reload every `f64` exactly.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Num(v) => out.push_str(&format_number(*v)),
        Expr::Var(n) => out.push_str(n),
        Expr::Probe(p) => {
            let _ = write!(out, "{p}");
        }
        Expr::Neg(a) => {
            out.push('-');
            // `--x` would lex as a folded literal on reparse.
            write_child(out, a, a.prec() <= 3);
        }
        Expr::Bin(op, a, b) => {
            write_child(out, a, a.prec() < op.prec());
            let _ = write!(out, " {} ", op.symbol());
            write_child(out, b, b.prec() <= op.prec());
        }
        Expr::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_expr(out, a);
            out.push(')');
        }
        Expr::Ddt(a) => {
            out.push_str("ddt(");
            write_expr(out, a);
            out.push(')');
        }
    }
}

fn write_child(out: &mut String, e: &Expr, paren: bool) {
    if paren {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(&mut s, self);
        f.write_str(&s)
    }
}

const INDENT: &str = "  ";

fn write_stmts(out: &mut String, stmts: &[Stmt], depth: usize) {
    let pad = INDENT.repeat(depth);
    for s in stmts {
        match s {
            Stmt::Comment(c) => {
                let _ = writeln!(out, "{pad}//{c}");
            }
            Stmt::Assign { name, expr } => {
                let _ = writeln!(out, "{pad}{name} = {expr};");
            }
            Stmt::Contrib { target, expr } => {
                let _ = writeln!(out, "{pad}{target} <+ {expr};");
            }
            Stmt::InitialStep(body) => {
                let _ = writeln!(out, "{pad}@(initial_step) begin");
                write_stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad}end");
            }
        }
    }
}

/// Canonical source text of a module.
pub fn print_module(m: &VaModule) -> String {
    let mut out = String::new();
    for inc in &m.includes {
        let _ = writeln!(out, "`include \"{inc}\"");
    }
    if !m.includes.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "module {}({});", m.name, m.ports.join(", "));
    for item in &m.items {
        match item {
            Item::Comment(c) => {
                let _ = writeln!(out, "{INDENT}//{c}");
            }
            Item::Inout(names) => {
                let _ = writeln!(out, "{INDENT}inout {};", names.join(", "));
            }
            Item::Electrical(decls) => {
                let parts: Vec<String> = decls
                    .iter()
                    .map(|d| match d.range {
                        Some((lo, hi)) => format!("{}[{lo}:{hi}]", d.name),
                        None => d.name.clone(),
                    })
                    .collect();
                let _ = writeln!(out, "{INDENT}electrical {};", parts.join(", "));
            }
            Item::Branch { pos, neg, name } => {
                let _ = writeln!(out, "{INDENT}branch ({pos}, {neg}) {name};");
            }
            Item::Parameter { name, value } => {
                let _ = writeln!(out, "{INDENT}parameter real {name} = {};", format_number(*value));
            }
            Item::Real(names) => {
                let _ = writeln!(out, "{INDENT}real {};", names.join(", "));
            }
            Item::Analog(stmts) => {
                let _ = writeln!(out, "{INDENT}analog begin");
                write_stmts(&mut out, stmts, 2);
                let _ = writeln!(out, "{INDENT}end");
            }
        }
    }
    out.push_str("endmodule\n");
    out
}

impl fmt::Display for VaModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_module(self))
    }
}
