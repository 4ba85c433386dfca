//! Fixed-step reference interpreter for the emitted subset.
//!
//! Each step solves the hidden-branch flow equations with `ddt` replaced by a
//! backward difference, using a fixed-point iteration on the node rates. A
//! final pass with the converged node voltages records `I(n, p)` and any
//! potential contributions on hidden nodes, which become the accepted state
//! carried into the next step.

use std::collections::{BTreeSet, HashMap};

use crate::dataset::Waveform;
use crate::error::{Error, Result};
use crate::spline::fit_natural_cubic;

use super::ast::*;
use super::parse::{validate, Scope};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Load(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Exp,
}

fn run(code: &[Instr], slots: &[f64], stack: &mut Vec<f64>) -> f64 {
    stack.clear();
    for ins in code {
        match *ins {
            Instr::Const(v) => stack.push(v),
            Instr::Load(i) => stack.push(slots[i]),
            Instr::Neg => {
                let a = stack.last_mut().unwrap();
                *a = -*a;
            }
            Instr::Tanh => {
                let a = stack.last_mut().unwrap();
                *a = a.tanh();
            }
            Instr::Exp => {
                let a = stack.last_mut().unwrap();
                *a = a.exp();
            }
            Instr::Add | Instr::Sub | Instr::Mul | Instr::Div => {
                let b = stack.pop().unwrap();
                let a = stack.last_mut().unwrap();
                *a = match *ins {
                    Instr::Add => *a + b,
                    Instr::Sub => *a - b,
                    Instr::Mul => *a * b,
                    _ => *a / b,
                };
            }
        }
    }
    stack.pop().unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Assign { slot: usize, code: Vec<Instr> },
    /// Adds `sign * code` to the residual of an unknown node.
    Equation { node: usize, sign: f64, code: Vec<Instr> },
    Potential { node: usize, code: Vec<Instr> },
    Output { sign: f64, code: Vec<Instr> },
}

/// Potential access resolved against the port pair and the hidden nodes.
#[derive(Debug, Clone, Copy)]
enum Access {
    Input(f64),
    Node(usize, f64),
    Zero,
}

/// A module lowered to slot-indexed code.
///
/// Slot layout: variables, node voltages, node rates, input, input rate.
#[derive(Debug, Clone)]
pub struct Compiled {
    n_vars: usize,
    node_names: Vec<String>,
    init: Vec<Op>,
    /// Statements the flow equations depend on, in program order.
    solve: Vec<Op>,
    all: Vec<Op>,
}

impl Compiled {
    fn node_slot(&self, k: usize) -> usize {
        self.n_vars + k
    }
    fn rate_slot(&self, k: usize) -> usize {
        self.n_vars + self.node_names.len() + k
    }
    fn input_slot(&self) -> usize {
        self.n_vars + 2 * self.node_names.len()
    }
    fn input_rate_slot(&self) -> usize {
        self.input_slot() + 1
    }
    fn slot_count(&self) -> usize {
        self.input_slot() + 2
    }

    /// Hidden node names in unknown order, e.g. `h[0]`.
    pub fn nodes(&self) -> &[String] {
        &self.node_names
    }
}

struct Lowering {
    scope: Scope,
    input_pair: (String, String),
    reference: String,
    nodes: HashMap<NodeRef, usize>,
    node_names: Vec<String>,
    vars: HashMap<String, usize>,
}

impl Lowering {
    fn new(m: &VaModule) -> Result<Lowering> {
        let scope = Scope::build(m)?;
        if m.ports.len() != 3 {
            return Err(Error::Unsupported(format!(
                "the interpreter expects ports (n, p, gnd), got {} ports",
                m.ports.len()
            )));
        }
        let mut nodes = HashMap::new();
        let mut node_names = Vec::new();
        for item in &m.items {
            if let Item::Electrical(decls) = item {
                for d in decls {
                    if m.ports.contains(&d.name) {
                        continue;
                    }
                    let refs: Vec<NodeRef> = match d.range {
                        Some((lo, hi)) => (lo..=hi).map(|i| NodeRef::indexed(d.name.clone(), i)).collect(),
                        None => vec![NodeRef::scalar(d.name.clone())],
                    };
                    for r in refs {
                        node_names.push(r.to_string());
                        nodes.insert(r, nodes.len());
                    }
                }
            }
        }
        let mut vars = HashMap::new();
        for item in &m.items {
            if let Item::Real(names) = item {
                for name in names {
                    let next = vars.len();
                    vars.entry(name.clone()).or_insert(next);
                }
            }
        }
        Ok(Lowering {
            input_pair: (m.ports[0].clone(), m.ports[1].clone()),
            reference: m.ports[2].clone(),
            scope,
            nodes,
            node_names,
            vars,
        })
    }

    fn n_vars(&self) -> usize {
        self.vars.len()
    }

    fn access(&self, args: &[NodeRef]) -> Result<Access> {
        let reference = NodeRef::scalar(self.reference.clone());
        let (a, b) = match args {
            [a] => (a.clone(), reference.clone()),
            [a, b] => (a.clone(), b.clone()),
            _ => return Err(Error::Semantic("malformed access".into())),
        };
        let (n, p) = (&self.input_pair.0, &self.input_pair.1);
        let scalar = |r: &NodeRef, s: &str| r.index.is_none() && r.name == s;
        if scalar(&a, n) && scalar(&b, p) {
            return Ok(Access::Input(1.0));
        }
        if scalar(&a, p) && scalar(&b, n) {
            return Ok(Access::Input(-1.0));
        }
        if a == b {
            return Ok(Access::Zero);
        }
        if b == reference {
            if let Some(&k) = self.nodes.get(&a) {
                return Ok(Access::Node(k, 1.0));
            }
        }
        if a == reference {
            if let Some(&k) = self.nodes.get(&b) {
                return Ok(Access::Node(k, -1.0));
            }
        }
        Err(Error::Unsupported(format!(
            "access between `{a}` and `{b}` is outside the interpreted subset"
        )))
    }

    /// Flow target: the branch's node pair.
    fn flow_access(&self, p: &Probe) -> Result<Access> {
        if let [one] = p.args.as_slice() {
            if let Some((pos, neg)) = self.scope.branches.get(&one.name) {
                if one.index.is_none() {
                    return self.access(&[pos.clone(), neg.clone()]);
                }
            }
        }
        self.access(&p.args)
    }

    /// Lower `e` to postfix code; records the node rates it reads.
    fn expr(&self, e: &Expr, out: &mut Vec<Instr>, rates: &mut BTreeSet<usize>, var_rates: &[BTreeSet<usize>]) -> Result<()> {
        let nv = self.n_vars();
        let nn = self.node_names.len();
        let signed = |out: &mut Vec<Instr>, slot: usize, sign: f64| {
            out.push(Instr::Load(slot));
            if sign < 0.0 {
                out.push(Instr::Neg);
            }
        };
        match e {
            Expr::Num(v) => out.push(Instr::Const(*v)),
            Expr::Var(name) => {
                if let Some(&i) = self.vars.get(name) {
                    out.push(Instr::Load(i));
                    rates.extend(var_rates[i].iter().copied());
                } else if let Some(v) = self.scope.params.get(name) {
                    out.push(Instr::Const(*v));
                } else {
                    return Err(Error::Semantic(format!("undeclared variable `{name}`")));
                }
            }
            Expr::Probe(p) => {
                if p.nature != Nature::Potential {
                    return Err(Error::Unsupported(format!("flow access `{p}` inside an expression")));
                }
                match self.access(&p.args)? {
                    Access::Input(s) => signed(out, nv + 2 * nn, s),
                    Access::Node(k, s) => signed(out, nv + k, s),
                    Access::Zero => out.push(Instr::Const(0.0)),
                }
            }
            Expr::Ddt(inner) => {
                let Expr::Probe(p) = inner.as_ref() else {
                    return Err(Error::Semantic(format!("ddt applies only to a potential access, got `{inner}`")));
                };
                match self.access(&p.args)? {
                    Access::Input(s) => signed(out, nv + 2 * nn + 1, s),
                    Access::Node(k, s) => {
                        rates.insert(k);
                        signed(out, nv + nn + k, s)
                    }
                    Access::Zero => out.push(Instr::Const(0.0)),
                }
            }
            Expr::Neg(a) => {
                self.expr(a, out, rates, var_rates)?;
                out.push(Instr::Neg);
            }
            Expr::Call(f, a) => {
                self.expr(a, out, rates, var_rates)?;
                out.push(match f {
                    Func::Tanh => Instr::Tanh,
                    Func::Exp => Instr::Exp,
                });
            }
            Expr::Bin(op, a, b) => {
                self.expr(a, out, rates, var_rates)?;
                self.expr(b, out, rates, var_rates)?;
                out.push(match op {
                    BinOp::Add => Instr::Add,
                    BinOp::Sub => Instr::Sub,
                    BinOp::Mul => Instr::Mul,
                    BinOp::Div => Instr::Div,
                });
            }
        }
        Ok(())
    }

    fn stmts(
        &self,
        stmts: &[Stmt],
        initial: bool,
        ops: &mut Vec<Op>,
        var_rates: &mut [BTreeSet<usize>],
        eq_rates: &mut [BTreeSet<usize>],
    ) -> Result<()> {
        for s in stmts {
            match s {
                Stmt::Comment(_) => {}
                Stmt::InitialStep(_) => {
                    return Err(Error::Unsupported("@(initial_step) must be at the top of the analog block".into()))
                }
                Stmt::Assign { name, expr } => {
                    let slot = *self
                        .vars
                        .get(name)
                        .ok_or_else(|| Error::Semantic(format!("assignment to undeclared variable `{name}`")))?;
                    let mut code = Vec::new();
                    let mut rates = BTreeSet::new();
                    self.expr(expr, &mut code, &mut rates, var_rates)?;
                    var_rates[slot] = rates;
                    ops.push(Op::Assign { slot, code });
                }
                Stmt::Contrib { target, expr } => {
                    let mut code = Vec::new();
                    let mut rates = BTreeSet::new();
                    self.expr(expr, &mut code, &mut rates, var_rates)?;
                    let access = match target.nature {
                        Nature::Flow => self.flow_access(target)?,
                        Nature::Potential => self.access(&target.args)?,
                    };
                    let op = match (target.nature, access) {
                        (_, Access::Zero) => {
                            return Err(Error::Semantic(format!("contribution to the degenerate branch `{target}`")))
                        }
                        (Nature::Flow, Access::Input(sign)) if !initial => Op::Output { sign, code },
                        (Nature::Flow, Access::Node(node, sign)) if !initial => {
                            eq_rates[node].extend(rates);
                            Op::Equation { node, sign, code }
                        }
                        (Nature::Potential, Access::Node(node, sign)) if sign > 0.0 => Op::Potential { node, code },
                        _ => {
                            return Err(Error::Unsupported(format!(
                                "contribution to `{target}` is outside the interpreted subset{}",
                                if initial { " inside @(initial_step)" } else { "" }
                            )))
                        }
                    };
                    ops.push(op);
                }
            }
        }
        Ok(())
    }
}

/// Indices of the ops the flow equations need, by backward liveness.
fn equation_slice(ops: &[Op]) -> Vec<Op> {
    let mut live: BTreeSet<usize> = BTreeSet::new();
    let mut keep = vec![false; ops.len()];
    let loads = |code: &[Instr], live: &mut BTreeSet<usize>| {
        for ins in code {
            if let Instr::Load(i) = ins {
                live.insert(*i);
            }
        }
    };
    for (i, op) in ops.iter().enumerate().rev() {
        match op {
            Op::Equation { code, .. } => {
                keep[i] = true;
                loads(code, &mut live);
            }
            Op::Assign { slot, code } if live.contains(slot) => {
                keep[i] = true;
                live.remove(slot);
                loads(code, &mut live);
            }
            _ => {}
        }
    }
    ops.iter().zip(keep).filter(|(_, k)| *k).map(|(op, _)| op.clone()).collect()
}

/// Check and lower a parsed module.
pub fn compile(m: &VaModule) -> Result<Compiled> {
    validate(m)?;
    let low = Lowering::new(m)?;
    let nn = low.node_names.len();
    let mut var_rates = vec![BTreeSet::new(); low.n_vars()];
    let mut eq_rates = vec![BTreeSet::new(); nn];
    let mut init = Vec::new();
    let mut all = Vec::new();
    let body = m
        .items
        .iter()
        .find_map(|i| match i {
            Item::Analog(s) => Some(s),
            _ => None,
        })
        .expect("validated module has an analog block");
    for (pos, s) in body.iter().enumerate() {
        match s {
            Stmt::InitialStep(inner) => {
                if body[..pos].iter().any(|s| !matches!(s, Stmt::Comment(_) | Stmt::InitialStep(_))) {
                    return Err(Error::Unsupported(
                        "@(initial_step) must precede the other analog statements".into(),
                    ));
                }
                let mut scratch = vec![BTreeSet::new(); low.n_vars()];
                low.stmts(inner, true, &mut init, &mut scratch, &mut eq_rates.clone())?;
            }
            other => low.stmts(std::slice::from_ref(other), false, &mut all, &mut var_rates, &mut eq_rates)?,
        }
    }
    let has_eq: Vec<bool> = (0..nn)
        .map(|k| all.iter().any(|op| matches!(op, Op::Equation { node, .. } if *node == k)))
        .collect();
    for k in 0..nn {
        let name = &low.node_names[k];
        if !has_eq[k] {
            return Err(Error::Semantic(format!("node `{name}` has no flow equation")));
        }
        if !eq_rates[k].contains(&k) {
            return Err(Error::Semantic(format!(
                "the flow equation of `{name}` does not involve ddt of its own voltage"
            )));
        }
        if let Some(j) = eq_rates[k].iter().find(|&&j| j != k) {
            return Err(Error::Unsupported(format!(
                "the flow equation of `{name}` depends on ddt of `{}`",
                low.node_names[*j]
            )));
        }
    }
    if !all.iter().any(|op| matches!(op, Op::Output { .. })) {
        return Err(Error::Semantic(format!(
            "no contribution to I({}, {})",
            low.input_pair.0, low.input_pair.1
        )));
    }
    let solve = equation_slice(&all);
    Ok(Compiled {
        n_vars: low.n_vars(),
        node_names: low.node_names,
        init,
        solve,
        all,
    })
}

struct Machine<'c> {
    c: &'c Compiled,
    slots: Vec<f64>,
    stack: Vec<f64>,
    residual: Vec<f64>,
    potential: Vec<Option<f64>>,
    output: f64,
}

impl<'c> Machine<'c> {
    fn new(c: &'c Compiled) -> Self {
        let nn = c.node_names.len();
        Machine {
            c,
            slots: vec![0.0; c.slot_count()],
            stack: Vec::with_capacity(64),
            residual: vec![0.0; nn],
            potential: vec![None; nn],
            output: 0.0,
        }
    }

    fn exec(&mut self, ops: &[Op]) {
        self.residual.fill(0.0);
        self.potential.fill(None);
        self.output = 0.0;
        for op in ops {
            match op {
                Op::Assign { slot, code } => {
                    let v = run(code, &self.slots, &mut self.stack);
                    self.slots[*slot] = v;
                }
                Op::Equation { node, sign, code } => {
                    self.residual[*node] += sign * run(code, &self.slots, &mut self.stack);
                }
                Op::Potential { node, code } => {
                    let v = run(code, &self.slots, &mut self.stack);
                    *self.potential[*node].get_or_insert(0.0) += v;
                }
                Op::Output { sign, code } => {
                    self.output += sign * run(code, &self.slots, &mut self.stack);
                }
            }
        }
    }

    fn set_nodes(&mut self, v: &[f64]) {
        let s = self.c.node_slot(0);
        self.slots[s..s + v.len()].copy_from_slice(v);
    }

    fn set_rates(&mut self, d: &[f64]) {
        let s = self.c.rate_slot(0);
        self.slots[s..s + d.len()].copy_from_slice(d);
    }

    fn set_input(&mut self, u: f64, du: f64) {
        let s = self.c.input_slot();
        self.slots[s] = u;
        self.slots[self.c.input_rate_slot()] = du;
    }
}

/// Simulate `module` driven by `V(n, p)` from `excitation.u` on the fixed grid
/// `t_k = t_0 + k * timestep`; returns the grid, the drive and `I(n, p)`.
///
/// The drive between excitation samples comes from a natural cubic spline
/// through them, so grid points that coincide with samples see the sample
/// values exactly.
pub fn simulate_subset(module: &VaModule, excitation: &Waveform, timestep: f64) -> Result<Waveform> {
    let compiled = compile(module)?;
    simulate_compiled(&compiled, excitation, timestep)
}

pub fn simulate_compiled(c: &Compiled, excitation: &Waveform, timestep: f64) -> Result<Waveform> {
    excitation.validate()?;
    if !(timestep > 0.0 && timestep.is_finite()) {
        return Err(Error::InvalidInput(format!("timestep must be positive, got {timestep}")));
    }
    let t0 = excitation.times[0];
    let span = excitation.times.last().unwrap() - t0;
    let steps = (span / timestep * (1.0 + 1e-12)).floor() as usize;
    if steps == 0 {
        return Err(Error::InvalidInput("timestep exceeds the excitation span".into()));
    }
    let path = fit_natural_cubic(&excitation.times, std::slice::from_ref(&excitation.u))?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut drive = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t0 + k as f64 * timestep;
        times.push(t);
        drive.push(path.value(t)?[0]);
    }

    let nn = c.node_names.len();
    let mut m = Machine::new(c);
    m.set_input(drive[0], 0.0);
    m.exec(&c.init);
    let mut state: Vec<f64> = m.potential.iter().map(|p| p.unwrap_or(0.0)).collect();
    m.set_nodes(&state);
    m.set_rates(&vec![0.0; nn]);
    m.exec(&c.all);
    let mut output = Vec::with_capacity(steps + 1);
    output.push(m.output);

    let mut v = vec![0.0; nn];
    let mut d = vec![0.0; nn];
    let mut d_shift = vec![0.0; nn];
    let mut r_a = vec![0.0; nn];
    for k in 1..=steps {
        let t = times[k];
        m.set_input(drive[k], (drive[k] - drive[k - 1]) / timestep);
        v.copy_from_slice(&state);
        let mut converged = false;
        for _ in 0..MAX_ITERATIONS {
            for j in 0..nn {
                d[j] = (v[j] - state[j]) / timestep;
                d_shift[j] = d[j] + 1.0;
            }
            m.set_nodes(&v);
            m.set_rates(&d);
            m.exec(&c.solve);
            r_a.copy_from_slice(&m.residual);
            m.set_rates(&d_shift);
            m.exec(&c.solve);
            let mut delta: f64 = 0.0;
            for j in 0..nn {
                let slope = m.residual[j] - r_a[j];
                let next = state[j] + timestep * (d[j] - r_a[j] / slope);
                if !next.is_finite() {
                    return Err(Error::Divergence { substep: k, t });
                }
                delta = delta.max((next - v[j]).abs());
                v[j] = next;
            }
            if delta <= TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergent { step: k, t });
        }
        for j in 0..nn {
            d[j] = (v[j] - state[j]) / timestep;
        }
        m.set_nodes(&v);
        m.set_rates(&d);
        m.exec(&c.all);
        if !m.output.is_finite() {
            return Err(Error::Divergence { substep: k, t });
        }
        output.push(m.output);
        for j in 0..nn {
            state[j] = m.potential[j].unwrap_or(v[j]);
            if !state[j].is_finite() {
                return Err(Error::Divergence { substep: k, t });
            }
        }
    }
    Waveform::new(
        format!("{}-sim", excitation.id),
        times,
        drive,
        output,
        excitation.amplitude,
        excitation.frequency,
    )
}
