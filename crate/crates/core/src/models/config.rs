use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{glorot_bound, param_init, MlpSpec};
use crate::params::{ParamGroup, ParamStore};

pub const GROUP_FIELD: &str = "field";
pub const GROUP_RNN: &str = "rnn";
pub const GROUP_READOUT: &str = "readout";
pub const GROUP_CTRNN: &str = "ctrnn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "ctrnn")]
    Ctrnn,
    #[serde(rename = "ncde")]
    Ncde,
    #[serde(rename = "node-rnn")]
    NodeRnn,
    #[serde(rename = "ncde-rnn")]
    NcdeRnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Ctrnn,
        ModelKind::Ncde,
        ModelKind::NodeRnn,
        ModelKind::NcdeRnn,
    ];

    /// Controlled (path-driven) field; the readout also sees `du/dt`.
    pub fn is_cde(self) -> bool {
        matches!(self, ModelKind::Ncde | ModelKind::NcdeRnn)
    }

    /// Discrete RNN jump at every observation.
    pub fn has_rnn(self) -> bool {
        matches!(self, ModelKind::NodeRnn | ModelKind::NcdeRnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctrnn => "ctrnn",
            ModelKind::Ncde => "ncde",
            ModelKind::NodeRnn => "node-rnn",
            ModelKind::NcdeRnn => "ncde-rnn",
        }
    }

    /// Hidden sizes used for the benchmark comparison.
    pub fn default_hidden(self) -> usize {
        match self {
            ModelKind::Ctrnn => 27,
            _ => 16,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ctrnn" => Ok(ModelKind::Ctrnn),
            "ncde" => Ok(ModelKind::Ncde),
            "node-rnn" | "odernn" | "ode-rnn" => Ok(ModelKind::NodeRnn),
            "ncde-rnn" => Ok(ModelKind::NcdeRnn),
            other => Err(Error::InvalidInput(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden state size `n`.
    pub hidden: usize,
    /// Input channels `m`.
    #[serde(default = "one")]
    pub input_dim: usize,
    /// Output channels `p`.
    #[serde(default = "one")]
    pub output_dim: usize,
    /// Hidden widths of the field MLP (ignored by CTRNN).
    #[serde(default = "default_field_hidden")]
    pub field_hidden: Vec<usize>,
    /// Hidden width of the two-layer readout.
    #[serde(default = "default_readout_hidden")]
    pub readout_hidden: usize,
    /// RK4 substeps per observation interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

fn default_field_hidden() -> Vec<usize> {
    vec![32]
}

fn default_readout_hidden() -> usize {
    16
}

fn default_substeps() -> usize {
    4
}

impl ModelConfig {
    /// Single-port model with the benchmark hidden size for `kind`.
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            hidden: kind.default_hidden(),
            input_dim: 1,
            output_dim: 1,
            field_hidden: default_field_hidden(),
            readout_hidden: default_readout_hidden(),
            substeps: default_substeps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidInput(
                "hidden, input and output dimensions must be >= 1".into(),
            ));
        }
        if self.readout_hidden == 0 || self.field_hidden.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be >= 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Field MLP widths: `n → hidden… → n` (ODE) or `n·m` (CDE).
    pub fn field_spec(&self) -> Result<Option<MlpSpec>> {
        if self.kind == ModelKind::Ctrnn {
            return Ok(None);
        }
        let out = if self.kind.is_cde() {
            self.hidden * self.input_dim
        } else {
            self.hidden
        };
        let mut widths = Vec::with_capacity(self.field_hidden.len() + 2);
        widths.push(self.hidden);
        widths.extend_from_slice(&self.field_hidden);
        widths.push(out);
        MlpSpec::new(widths).map(Some)
    }

    /// `[x; u]` for ODE kinds, `[x; u; du/dt]` for CDE kinds.
    pub fn readout_input_dim(&self) -> usize {
        self.hidden + self.input_dim * if self.kind.is_cde() { 2 } else { 1 }
    }

    pub fn readout_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(vec![
            self.readout_input_dim(),
            self.readout_hidden,
            self.output_dim,
        ])
    }

    pub fn rnn_param_count(&self) -> usize {
        let (n, m) = (self.hidden, self.input_dim);
        n * n + n * m + n
    }

    pub fn ctrnn_param_count(&self) -> usize {
        let (n, m) = (self.hidden, self.input_dim);
        n * n + n * m + n + 1
    }

    /// Names and sizes of every group this kind carries, in storage order.
    pub fn group_layout(&self) -> Result<Vec<(&'static str, usize)>> {
        self.validate()?;
        let mut out = Vec::new();
        match self.kind {
            ModelKind::Ctrnn => out.push((GROUP_CTRNN, self.ctrnn_param_count())),
            _ => {
                let spec = self.field_spec()?.expect("non-CTRNN kinds have a field MLP");
                out.push((GROUP_FIELD, spec.param_count()));
            }
        }
        if self.kind.has_rnn() {
            out.push((GROUP_RNN, self.rnn_param_count()));
        }
        out.push((GROUP_READOUT, self.readout_spec()?.param_count()));
        Ok(out)
    }

    /// Fail unless `params` has exactly this config's groups and sizes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let layout = self.group_layout()?;
        if params.len() != layout.len() {
            return Err(Error::InvalidInput(format!(
                "expected parameter groups {:?}, got {:?}",
                layout.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
                params.names().collect::<Vec<_>>()
            )));
        }
        for ((name, len), (got_name, group)) in layout.iter().zip(params.iter()) {
            if *name != got_name {
                return Err(Error::InvalidInput(format!(
                    "expected parameter group `{name}`, found `{got_name}`"
                )));
            }
            if group.len() != *len {
                return Err(Error::dim(format!("parameter group `{name}`"), *len, group.len()));
            }
        }
        Ok(())
    }

    /// Named sub-blocks of the flat parameter vector, for per-block gradient
    /// reports.
    pub fn param_segments(&self) -> Result<Vec<(String, std::ops::Range<usize>)>> {
        let (n, m) = (self.hidden, self.input_dim);
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, len) in self.group_layout()? {
            if name == GROUP_CTRNN {
                for (sub, sz) in [("A", n * n), ("B", n * m), ("b_u", n), ("tau", 1)] {
                    out.push((format!("{GROUP_CTRNN}.{sub}"), offset..offset + sz));
                    offset += sz;
                }
            } else {
                out.push((name.to_string(), offset..offset + len));
                offset += len;
            }
        }
        Ok(out)
    }
}

/// Exact number of trainable scalars for `config`.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(config.group_layout()?.iter().map(|(_, n)| n).sum())
}

fn group_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fresh parameters: Glorot-uniform weights, zero biases, `τ = 1`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    config.validate()?;
    let (n, m) = (config.hidden, config.input_dim);
    let mut store = ParamStore::new();

    // A/B for CTRNN, W_h/W_u for the RNN cell: both map [x; u] → n.
    let recurrent_block = |seed: u64, extra: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = glorot_bound(n + m, n);
        let mut v: Vec<f64> = (0..n * n + n * m)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        v.extend(std::iter::repeat_n(0.0, n + extra));
        v
    };

    match config.kind {
        ModelKind::Ctrnn => {
            let mut v = recurrent_block(group_seed(seed, 0), 1);
            *v.last_mut().unwrap() = 1.0;
            store.insert(GROUP_CTRNN, ParamGroup::new(vec![n, m], v));
        }
        _ => {
            let spec = config.field_spec()?.expect("field MLP");
            store.insert(GROUP_FIELD, param_init(&spec, group_seed(seed, 0)));
        }
    }
    if config.kind.has_rnn() {
        store.insert(
            GROUP_RNN,
            ParamGroup::new(vec![n, m], recurrent_block(group_seed(seed, 1), 0)),
        );
    }
    store.insert(
        GROUP_READOUT,
        param_init(&config.readout_spec()?, group_seed(seed, 2)),
    );
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_examples() {
        let mut c = ModelConfig::new(ModelKind::NodeRnn);
        assert_eq!(c.rnn_param_count(), 288);
        c.kind = ModelKind::Ctrnn;
        c.hidden = 27;
        assert_eq!(c.ctrnn_param_count(), 784);
        let mut ncde = ModelConfig::new(ModelKind::Ncde);
        ncde.field_hidden = vec![32];
        assert_eq!(ncde.field_spec().unwrap().unwrap().widths(), &[16, 32, 16]);
        assert_eq!(ncde.field_spec().unwrap().unwrap().param_count(), 1072);
    }

    #[test]
    fn param_count_matches_init() {
        for kind in ModelKind::ALL {
            let c = ModelConfig::new(kind);
            let p = init_params(&c, 7).unwrap();
            assert_eq!(p.total_len(), param_count(&c).unwrap());
            c.check_params(&p).unwrap();
            let segs = c.param_segments().unwrap();
            assert_eq!(segs.last().unwrap().1.end, p.total_len());
        }
    }

    #[test]
    fn readout_width_depends_on_kind() {
        assert_eq!(ModelConfig::new(ModelKind::NodeRnn).readout_input_dim(), 17);
        assert_eq!(ModelConfig::new(ModelKind::NcdeRnn).readout_input_dim(), 18);
        assert_eq!(ModelConfig::new(ModelKind::Ctrnn).readout_input_dim(), 28);
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::new(ModelKind::Ctrnn);
        assert_eq!(init_params(&c, 1).unwrap(), init_params(&c, 1).unwrap());
        assert_ne!(init_params(&c, 1).unwrap(), init_params(&c, 2).unwrap());
        let tau = *init_params(&c, 1).unwrap().group(GROUP_CTRNN).unwrap().values.last().unwrap();
        assert_eq!(tau, 1.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("NODE-RNN".parse::<ModelKind>().unwrap(), ModelKind::NodeRnn);
        assert_eq!("ncde_rnn".parse::<ModelKind>().unwrap(), ModelKind::NcdeRnn);
        assert!("gru".parse::<ModelKind>().is_err());
    }

    #[test]
    fn check_params_catches_mismatch() {
        let c = ModelConfig::new(ModelKind::NodeRnn);
        let other = init_params(&ModelConfig::new(ModelKind::NcdeRnn), 0).unwrap();
        assert!(c.check_params(&other).is_err());
    }
}
