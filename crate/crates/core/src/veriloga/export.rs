//! Builds a Verilog-A module from a trained hybrid model.

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, GROUP_FIELD, GROUP_READOUT, GROUP_RNN};
use crate::nn::MlpSpec;
use crate::params::ParamStore;

use super::ast::*;

pub const INCLUDES: [&str; 2] = ["constants.vams", "disciplines.vams"];
const PORTS: [&str; 3] = ["n", "p", "gnd"];
const HIDDEN_BUS: &str = "h";

/// Module name used for each exportable kind.
pub fn module_name(kind: ModelKind) -> Result<&'static str> {
    match kind {
        ModelKind::NodeRnn => Ok("node_rnn"),
        ModelKind::NcdeRnn => Ok("ncde_rnn"),
        other => Err(Error::Unsupported(format!(
            "Verilog-A export supports node-rnn and ncde-rnn, not {other}"
        ))),
    }
}

fn hidden_probe(k: usize) -> Expr {
    Expr::Probe(Probe {
        nature: Nature::Potential,
        args: vec![NodeRef::indexed(HIDDEN_BUS, k), NodeRef::scalar("gnd")],
    })
}

fn port_probe(nature: Nature) -> Probe {
    Probe {
        nature,
        args: vec![NodeRef::scalar("n"), NodeRef::scalar("p")],
    }
}

fn branch_name(k: usize) -> String {
    format!("H{k}")
}

/// `w[0]*x[0] + ... + w[k]*x[k] + b`, left-associated.
fn affine(weights: &[f64], inputs: &[Expr], bias: f64) -> Expr {
    let mut acc: Option<Expr> = None;
    for (w, x) in weights.iter().zip(inputs) {
        let term = Expr::bin(BinOp::Mul, Expr::Num(*w), x.clone());
        acc = Some(match acc {
            Some(a) => Expr::bin(BinOp::Add, a, term),
            None => term,
        });
    }
    match acc {
        Some(a) => Expr::bin(BinOp::Add, a, Expr::Num(bias)),
        None => Expr::Num(bias),
    }
}

/// Emit one MLP as assignments; returns the output variable names.
fn emit_mlp(
    spec: &MlpSpec,
    params: &[f64],
    inputs: Vec<Expr>,
    prefix: &str,
    out_name: &str,
    stmts: &mut Vec<Stmt>,
    reals: &mut Vec<Vec<String>>,
) -> Vec<String> {
    let widths = spec.widths();
    let nl = spec.num_layers();
    let mut current = inputs;
    let mut names = Vec::new();
    for (l, (wr, br)) in spec.layer_ranges().into_iter().enumerate() {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = &params[wr];
        let b = &params[br];
        let last = l + 1 == nl;
        names = (0..fan_out)
            .map(|j| if last { format!("{out_name}_{j}") } else { format!("{prefix}{}_{j}", l + 1) })
            .collect();
        for (j, name) in names.iter().enumerate() {
            let z = affine(&w[j * fan_in..(j + 1) * fan_in], &current, b[j]);
            let expr = if last { z } else { Expr::call(Func::Tanh, z) };
            stmts.push(Stmt::Assign { name: name.clone(), expr });
        }
        reals.push(names.clone());
        current = names.iter().map(Expr::var).collect();
    }
    names
}

/// The module for a NODE-RNN or NCDE-RNN with one input and one output.
pub fn export_module(config: &ModelConfig, params: &ParamStore, norm: &NormStats) -> Result<VaModule> {
    let name = module_name(config.kind)?;
    config.check_params(params)?;
    if config.input_dim != 1 || config.output_dim != 1 {
        return Err(Error::Unsupported(
            "Verilog-A export needs a single input and a single output".into(),
        ));
    }
    if !params.all_finite() {
        return Err(Error::InvalidInput("parameters contain non-finite values".into()));
    }
    norm.validate()?;
    let n = config.hidden;
    let cde = config.kind.is_cde();
    let field_spec = config.field_spec()?.expect("hybrid kinds have a field MLP");
    let readout_spec = config.readout_spec()?;

    let mut items = vec![
        Item::Inout(PORTS.iter().map(|s| s.to_string()).collect()),
        Item::Electrical(PORTS.iter().map(|s| NodeDecl { name: s.to_string(), range: None }).collect()),
        Item::Electrical(vec![NodeDecl { name: HIDDEN_BUS.into(), range: Some((0, n - 1)) }]),
        Item::Comment(" Branches for hidden states".into()),
    ];
    for k in 0..n {
        items.push(Item::Branch {
            pos: NodeRef::indexed(HIDDEN_BUS, k),
            neg: NodeRef::scalar("gnd"),
            name: branch_name(k),
        });
    }
    items.push(Item::Parameter { name: "time_scale".into(), value: norm.time_scale });

    let mut reals: Vec<Vec<String>> = Vec::new();
    let mut body = Vec::new();
    body.push(Stmt::InitialStep(
        (0..n)
            .map(|k| Stmt::Contrib {
                target: match hidden_probe(k) {
                    Expr::Probe(p) => p,
                    _ => unreachable!(),
                },
                expr: Expr::Num(0.0),
            })
            .collect(),
    ));

    body.push(Stmt::Comment(" Normalized input".into()));
    let u_in = Expr::bin(
        BinOp::Div,
        Expr::bin(BinOp::Sub, Expr::Probe(port_probe(Nature::Potential)), Expr::Num(norm.u_offset)),
        Expr::Num(norm.u_scale),
    );
    body.push(Stmt::Assign { name: "u_0".into(), expr: u_in });
    let mut input_vars = vec!["u_0".to_string()];
    if cde {
        let du = Expr::bin(
            BinOp::Mul,
            Expr::Ddt(Box::new(Expr::Probe(port_probe(Nature::Potential)))),
            Expr::bin(BinOp::Div, Expr::var("time_scale"), Expr::Num(norm.u_scale)),
        );
        body.push(Stmt::Assign { name: "du_0".into(), expr: du });
        input_vars.push("du_0".into());
    }
    reals.push(input_vars);

    body.push(Stmt::Comment(" Vector field".into()));
    let field = &params.group(GROUP_FIELD)?.values;
    let states: Vec<Expr> = (0..n).map(hidden_probe).collect();
    let fo = emit_mlp(&field_spec, field, states.clone(), "f", "fo", &mut body, &mut reals);

    body.push(Stmt::Comment(" Zero-current constraint on each hidden branch".into()));
    for (k, out) in fo.iter().enumerate() {
        let drive = if cde {
            Expr::bin(BinOp::Mul, Expr::var(out.as_str()), Expr::var("du_0"))
        } else {
            Expr::var(out.as_str())
        };
        let rate = Expr::bin(
            BinOp::Mul,
            Expr::var("time_scale"),
            Expr::Ddt(Box::new(hidden_probe(k))),
        );
        body.push(Stmt::Contrib {
            target: Probe { nature: Nature::Flow, args: vec![NodeRef::scalar(branch_name(k))] },
            expr: Expr::bin(BinOp::Sub, drive, rate),
        });
    }

    body.push(Stmt::Comment(" RNN cell".into()));
    let rnn = &params.group(GROUP_RNN)?.values;
    let (w_h, rest) = rnn.split_at(n * n);
    let (w_u, bias) = rest.split_at(n);
    let mut cell_inputs = states;
    cell_inputs.push(Expr::var("u_0"));
    let mut rnn_names = Vec::with_capacity(n);
    for k in 0..n {
        let mut w: Vec<f64> = w_h[k * n..(k + 1) * n].to_vec();
        w.push(w_u[k]);
        let name = format!("rnn_{k}");
        body.push(Stmt::Assign {
            name: name.clone(),
            expr: Expr::call(Func::Tanh, affine(&w, &cell_inputs, bias[k])),
        });
        rnn_names.push(name);
    }
    reals.push(rnn_names.clone());

    body.push(Stmt::Comment(" Update the hidden state".into()));
    for (k, name) in rnn_names.iter().enumerate() {
        let Expr::Probe(target) = hidden_probe(k) else { unreachable!() };
        body.push(Stmt::Contrib { target, expr: Expr::var(name.as_str()) });
    }

    body.push(Stmt::Comment(" Readout".into()));
    let mut ro_inputs: Vec<Expr> = rnn_names.iter().map(Expr::var).collect();
    ro_inputs.push(Expr::var("u_0"));
    if cde {
        ro_inputs.push(Expr::var("du_0"));
    }
    let readout = &params.group(GROUP_READOUT)?.values;
    let y = emit_mlp(&readout_spec, readout, ro_inputs, "r", "y", &mut body, &mut reals);
    body.push(Stmt::Contrib {
        target: port_probe(Nature::Flow),
        expr: Expr::bin(
            BinOp::Add,
            Expr::bin(BinOp::Mul, Expr::var(y[0].as_str()), Expr::Num(norm.y_scale)),
            Expr::Num(norm.y_offset),
        ),
    });

    items.extend(reals.into_iter().map(Item::Real));
    items.push(Item::Analog(body));
    Ok(VaModule {
        includes: INCLUDES.iter().map(|s| s.to_string()).collect(),
        name: name.into(),
        ports: PORTS.iter().map(|s| s.to_string()).collect(),
        items,
    })
}

/// Verilog-A source text for a trained NODE-RNN or NCDE-RNN.
pub fn export_veriloga(config: &ModelConfig, params: &ParamStore, norm: &NormStats) -> Result<String> {
    Ok(print_module(&export_module(config, params, norm)?))
}
