//! Full models (recurrent cell plus output head) and the checkpoint format.
//!
//! Checkpoints are plain text:
//!
//! ```text
//! #ctgru-model v1
//! arch ctgru
//! hidden 20
//! vocab 12
//! head label-softmax
//! dt-feature log1p
//! bank-bounds 0.05 150
//! bank 0.05 0.158 ... (one value per scale)
//! block W_r 20 12
//! <row 0 values>
//! ...
//! ```
//!
//! `bank-bounds` and `bank` read `-` for the GRU variants. Each `block` line
//! gives a name, row count and column count, followed by that many rows of
//! space-separated values in shortest round-trip notation. Lines starting
//! with `# ` are comments.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{GateParams, GruParams, HeadKind};
use crate::datasets::Task;
use crate::error::{contract, Error, Result};
use crate::math::{Matrix, Vector};
use crate::timescales::{build_bank, TimescaleBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// GRU with the lags to the previous and next event as extra inputs.
    #[serde(rename = "gru")]
    Gru,
    /// GRU that never sees time.
    #[serde(rename = "gru-no-dt")]
    GruNoDt,
    #[serde(rename = "ctgru")]
    CtGru,
    /// CT-GRU whose traces do not decay between events.
    #[serde(rename = "ctgru-no-decay")]
    CtGruNoDecay,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gru, Arch::GruNoDt, Arch::CtGru, Arch::CtGruNoDecay];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gru => "gru",
            Arch::GruNoDt => "gru-no-dt",
            Arch::CtGru => "ctgru",
            Arch::CtGruNoDecay => "ctgru-no-decay",
        }
    }

    pub fn from_name(name: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn is_ctgru(self) -> bool {
        matches!(self, Arch::CtGru | Arch::CtGruNoDecay)
    }
}

/// How lags enter the GRU as input features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtFeature {
    /// `ln(1 + Δt)`
    #[default]
    Log1p,
    Raw,
}

impl DtFeature {
    #[inline]
    pub fn apply(self, dt: f64) -> f64 {
        match self {
            DtFeature::Log1p => dt.ln_1p(),
            DtFeature::Raw => dt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DtFeature::Log1p => "log1p",
            DtFeature::Raw => "raw",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub hidden: usize,
    pub vocab: usize,
    pub head: HeadKind,
    /// Bank bounds `(tau_min, tau_max)` for the CT-GRU variants.
    pub bank: Option<(f64, f64)>,
    #[serde(default)]
    pub dt_feature: DtFeature,
}

impl ModelSpec {
    pub fn new(arch: Arch, hidden: usize, vocab: usize, head: HeadKind) -> Self {
        ModelSpec {
            arch,
            hidden,
            vocab,
            head,
            bank: None,
            dt_feature: DtFeature::default(),
        }
    }

    pub fn with_bank(mut self, tau_min: f64, tau_max: f64) -> Self {
        self.bank = Some((tau_min, tau_max));
        self
    }

    pub fn input_dim(&self) -> usize {
        match self.arch {
            Arch::Gru => self.vocab + 2,
            _ => self.vocab,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            HeadKind::SequenceLogistic => 1,
            _ => self.vocab,
        }
    }

    pub fn build_bank(&self) -> Result<Option<TimescaleBank>> {
        if !self.arch.is_ctgru() {
            return Ok(None);
        }
        match self.bank {
            Some((lo, hi)) => build_bank(lo, hi).map(Some),
            None => contract(format!("{} needs bank bounds", self.arch.name())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.vocab == 0 {
            return contract("hidden size and vocabulary must be positive");
        }
        self.build_bank()?;
        Ok(())
    }
}

/// Output head matching a task.
pub fn head_for_task(task: Task) -> HeadKind {
    match task {
        Task::LabelPrediction => HeadKind::LabelSoftmax,
        Task::PolarityPrediction => HeadKind::PolarityLogistic,
        Task::Classification => HeadKind::SequenceLogistic,
    }
}

pub const BLOCK_NAMES: [&str; 11] = [
    "W_r", "U_r", "b_r", "W_q", "U_q", "b_q", "W_s", "U_s", "b_s", "W_out", "b_out",
];

fn blocks<'a>(g: &'a GruParams, w_out: &'a Matrix, b_out: &'a Vector) -> [&'a [f64]; 11] {
    [
        g.r.w.as_slice(),
        g.r.u.as_slice(),
        &g.r.b,
        g.q.w.as_slice(),
        g.q.u.as_slice(),
        &g.q.b,
        g.s.w.as_slice(),
        g.s.u.as_slice(),
        &g.s.b,
        w_out.as_slice(),
        b_out,
    ]
}

fn blocks_mut<'a>(
    g: &'a mut GruParams,
    w_out: &'a mut Matrix,
    b_out: &'a mut Vector,
) -> [&'a mut [f64]; 11] {
    let GruParams { r, q, s } = g;
    [
        r.w.as_mut_slice(),
        r.u.as_mut_slice(),
        &mut r.b,
        q.w.as_mut_slice(),
        q.u.as_mut_slice(),
        &mut q.b,
        s.w.as_mut_slice(),
        s.u.as_mut_slice(),
        &mut s.b,
        w_out.as_mut_slice(),
        b_out,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub gates: GruParams,
    pub bank: Option<TimescaleBank>,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl ModelParams {
    /// All-zero parameters for `spec`.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let bank = spec.build_bank()?;
        Ok(ModelParams {
            gates: GruParams::zeros(spec.hidden, spec.input_dim()),
            bank,
            w_out: Matrix::zeros(spec.output_dim(), spec.hidden),
            b_out: Vector::zeros(spec.output_dim()),
            spec,
        })
    }

    pub fn blocks(&self) -> [&[f64]; 11] {
        blocks(&self.gates, &self.w_out, &self.b_out)
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 11] {
        blocks_mut(&mut self.gates, &mut self.w_out, &mut self.b_out)
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.gates.validate()?;
        if self.gates.hidden() != self.spec.hidden
            || self.gates.input_dim() != self.spec.input_dim()
        {
            return contract("gate shapes do not match the model spec");
        }
        if self.w_out.rows() != self.spec.output_dim() || self.w_out.cols() != self.spec.hidden {
            return contract("output weights do not match the model spec");
        }
        if self.b_out.len() != self.spec.output_dim() {
            return contract("output bias does not match the model spec");
        }
        if self.spec.arch.is_ctgru() != self.bank.is_some() {
            return contract("timescale bank present iff the model is a CT-GRU");
        }
        if self
            .blocks()
            .iter()
            .any(|b| b.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("#ctgru-model v1\n");
        let s = &self.spec;
        writeln!(out, "arch {}", s.arch.name()).unwrap();
        writeln!(out, "hidden {}", s.hidden).unwrap();
        writeln!(out, "vocab {}", s.vocab).unwrap();
        writeln!(out, "head {}", s.head.name()).unwrap();
        writeln!(out, "dt-feature {}", s.dt_feature.name()).unwrap();
        match s.bank {
            Some((lo, hi)) => writeln!(out, "bank-bounds {lo:e} {hi:e}").unwrap(),
            None => out.push_str("bank-bounds -\n"),
        }
        match &self.bank {
            Some(b) => {
                out.push_str("bank");
                for t in b.taus() {
                    write!(out, " {t:e}").unwrap();
                }
                out.push('\n');
            }
            None => out.push_str("bank -\n"),
        }
        let shapes = self.block_shapes();
        for ((name, data), (rows, cols)) in BLOCK_NAMES.iter().zip(self.blocks()).zip(shapes) {
            writeln!(out, "block {name} {rows} {cols}").unwrap();
            for row in data.chunks(cols) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    /// `(rows, cols)` of each block; vectors are one column.
    pub fn block_shapes(&self) -> [(usize, usize); 11] {
        let (h, i, o) = (
            self.spec.hidden,
            self.spec.input_dim(),
            self.spec.output_dim(),
        );
        [
            (h, i),
            (h, h),
            (h, 1),
            (h, i),
            (h, h),
            (h, 1),
            (h, i),
            (h, h),
            (h, 1),
            (o, h),
            (o, 1),
        ]
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with("# "));
        let err = |line: usize, msg: String| Error::Parse { line, msg };
        match lines.next() {
            Some((_, "#ctgru-model v1")) => {}
            Some((n, _)) => return Err(err(n, "expected `#ctgru-model v1` header".into())),
            None => return Err(err(1, "empty model file".into())),
        }
        fn next_field<'a>(
            lines: &mut impl Iterator<Item = (usize, &'a str)>,
            key: &str,
        ) -> Result<(usize, Vec<String>)> {
            let (n, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected `{key}`"),
                });
            }
            Ok((n, parts.map(str::to_owned).collect()))
        }
        let mut field = |key: &str| next_field(&mut lines, key);
        let one = |(n, v): (usize, Vec<String>)| -> Result<(usize, String)> {
            match v.as_slice() {
                [x] => Ok((n, x.clone())),
                _ => Err(err(n, "expected one value".into())),
            }
        };
        let num = |(n, v): (usize, String)| -> Result<usize> {
            v.parse().map_err(|_| err(n, format!("bad integer `{v}`")))
        };
        let float = |n: usize, v: &str| -> Result<f64> {
            v.parse().map_err(|_| err(n, format!("bad number `{v}`")))
        };

        let (n, arch) = one(field("arch")?)?;
        let arch =
            Arch::from_name(&arch).ok_or_else(|| err(n, format!("unknown arch `{arch}`")))?;
        let hidden = num(one(field("hidden")?)?)?;
        let vocab = num(one(field("vocab")?)?)?;
        let (n, head) = one(field("head")?)?;
        let head = [
            HeadKind::LabelSoftmax,
            HeadKind::PolarityLogistic,
            HeadKind::SequenceLogistic,
        ]
        .into_iter()
        .find(|h| h.name() == head)
        .ok_or_else(|| err(n, format!("unknown head `{head}`")))?;
        let (n, dtf) = one(field("dt-feature")?)?;
        let dt_feature = match dtf.as_str() {
            "log1p" => DtFeature::Log1p,
            "raw" => DtFeature::Raw,
            _ => return Err(err(n, format!("unknown dt-feature `{dtf}`"))),
        };
        let (n, bounds) = field("bank-bounds")?;
        let bank_bounds = match bounds.as_slice() {
            [d] if d == "-" => None,
            [lo, hi] => Some((float(n, lo)?, float(n, hi)?)),
            _ => return Err(err(n, "bank-bounds takes `-` or two numbers".into())),
        };
        let (n, taus) = field("bank")?;
        let bank = match taus.as_slice() {
            [d] if d == "-" => None,
            list => Some(
                TimescaleBank::from_taus(list.iter().map(|t| float(n, t)).collect::<Result<_>>()?)
                    .map_err(|e| err(n, e.to_string()))?,
            ),
        };
        let spec = ModelSpec {
            arch,
            hidden,
            vocab,
            head,
            bank: bank_bounds,
            dt_feature,
        };
        let mut model = ModelParams::zeros(spec).map_err(|e| err(n, e.to_string()))?;
        model.bank = bank;
        let shapes = model.block_shapes();
        for (k, name) in BLOCK_NAMES.iter().enumerate() {
            let (n, dims) = next_field(&mut lines, "block")?;
            let (rows, cols) = shapes[k];
            if dims.len() != 3 || dims[0] != *name {
                return Err(err(n, format!("expected block `{name}`")));
            }
            if dims[1] != rows.to_string() || dims[2] != cols.to_string() {
                return Err(err(n, format!("block `{name}` must be {rows}x{cols}")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| err(0, format!("block `{name}` is truncated")))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| float(n, v))
                    .collect::<Result<_>>()?;
                if row.len() != cols {
                    return Err(err(n, format!("row of `{name}` needs {cols} values")));
                }
                values.extend(row);
            }
            model.blocks_mut()[k].copy_from_slice(&values);
        }
        if let Some((n, _)) = lines.next() {
            return Err(err(n, "trailing content after the last block".into()));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelParams::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Gradient of the loss, shaped like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub gates: GruParams,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl Gradients {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Gradients {
            gates: GruParams {
                r: GateParams::zeros(model.spec.hidden, model.spec.input_dim()),
                q: GateParams::zeros(model.spec.hidden, model.spec.input_dim()),
                s: GateParams::zeros(model.spec.hidden, model.spec.input_dim()),
            },
            w_out: Matrix::zeros(model.spec.output_dim(), model.spec.hidden),
            b_out: Vector::zeros(model.spec.output_dim()),
        }
    }

    pub fn blocks(&self) -> [&[f64]; 11] {
        blocks(&self.gates, &self.w_out, &self.b_out)
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 11] {
        blocks_mut(&mut self.gates, &mut self.w_out, &mut self.b_out)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}
