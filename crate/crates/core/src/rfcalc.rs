//! Receptive-field propagation through a chain of layers.
//!
//! Each layer maps the state `(n, j, r)` of its input feature map to that of
//! its output:
//!
//! ```text
//! n_out = floor((n_in + 2p - k) / s) + 1
//! j_out = j_in * s
//! r_out = r_in + (k - 1) * j_in
//! ```
//!
//! `n` is tracked per axis; `j` and `r` do not depend on `n` and are equal on
//! both axes for square kernels. The network RF of a chain is the `r` of its
//! last RF-bearing layer. The admissible watermark extent is bounded below by
//! the Embedder RF and above by the Detector RF.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Pool,
    Activation,
    Norm,
    #[serde(alias = "dense-terminal", alias = "dense")]
    DenseTerminal,
}

impl LayerKind {
    /// Activation and normalization layers leave the RF state unchanged.
    pub fn is_rf_neutral(self) -> bool {
        matches!(self, LayerKind::Activation | LayerKind::Norm)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::with(name, LayerKind::Conv, kernel, stride, padding)
    }

    pub fn pool(name: &str, kernel: usize, stride: usize) -> Self {
        Self::with(name, LayerKind::Pool, kernel, stride, 0)
    }

    pub fn activation(name: &str) -> Self {
        Self::with(name, LayerKind::Activation, 1, 1, 0)
    }

    pub fn norm(name: &str) -> Self {
        Self::with(name, LayerKind::Norm, 1, 1, 0)
    }

    pub fn dense(name: &str) -> Self {
        Self::with(name, LayerKind::DenseTerminal, 1, 1, 0)
    }

    fn with(name: &str, kind: LayerKind, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.to_string(),
            kind,
            kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.kernel == 0 {
            return Err("kernel must be at least 1".into());
        }
        if self.stride == 0 {
            return Err("stride must be at least 1".into());
        }
        if self.kind.is_rf_neutral() && (self.kernel, self.stride, self.padding) != (1, 1, 0) {
            return Err(format!(
                "{:?} layers must have kernel 1, stride 1, padding 0 (got {}, {}, {})",
                self.kind, self.kernel, self.stride, self.padding
            ));
        }
        Ok(())
    }
}

/// RF state of one feature map; `n` is `(width, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RfState {
    pub n: (usize, usize),
    pub j: usize,
    pub r: usize,
}

impl RfState {
    pub fn input(width: usize, height: usize) -> Self {
        Self {
            n: (width, height),
            j: 1,
            r: 1,
        }
    }
}

fn axis_extent(n_in: usize, layer: &LayerSpec) -> std::result::Result<usize, String> {
    let padded = n_in + 2 * layer.padding;
    if padded < layer.kernel {
        return Err(format!(
            "feature map of extent {n_in} (padded {padded}) vanishes under kernel {}",
            layer.kernel
        ));
    }
    Ok((padded - layer.kernel) / layer.stride + 1)
}

fn transition(state: RfState, layer: &LayerSpec) -> std::result::Result<RfState, String> {
    layer.validate()?;
    if state.n.0 == 0 || state.n.1 == 0 || state.j == 0 || state.r == 0 {
        return Err(format!("invalid input state {state:?}"));
    }
    if layer.kind.is_rf_neutral() || layer.kind == LayerKind::DenseTerminal {
        return Ok(state);
    }
    Ok(RfState {
        n: (axis_extent(state.n.0, layer)?, axis_extent(state.n.1, layer)?),
        j: state.j * layer.stride,
        r: state.r + (layer.kernel - 1) * state.j,
    })
}

/// Applies one layer to an RF state. Dense terminal layers are outside RF
/// propagation and, like activations and norms, return the state unchanged.
pub fn layer_transition(state: RfState, layer: &LayerSpec) -> Result<RfState> {
    transition(state, layer).map_err(|reason| Error::Layer {
        index: 0,
        name: layer.name.clone(),
        reason,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfRow {
    /// 0 is the input row.
    pub index: usize,
    pub name: String,
    pub kind: Option<LayerKind>,
    pub n: (usize, usize),
    pub j: usize,
    pub r: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfReport {
    pub input: (usize, usize),
    pub rows: Vec<RfRow>,
    pub network_rf: usize,
}

impl RfReport {
    pub fn final_state(&self) -> RfState {
        let last = self
            .rows
            .iter()
            .rev()
            .find(|r| r.kind != Some(LayerKind::DenseTerminal))
            .expect("the input row is always present");
        RfState {
            n: last.n,
            j: last.j,
            r: last.r,
        }
    }

    /// Aligned text table in the layout `Layer | Layer name | Map size | Jump | RF`.
    pub fn to_table(&self) -> String {
        let mut lines = vec![(
            "Layer".to_string(),
            "Layer name".to_string(),
            "Map size (n)".to_string(),
            "Jump (j)".to_string(),
            "RF (r)".to_string(),
        )];
        for row in &self.rows {
            lines.push((
                row.index.to_string(),
                row.name.clone(),
                format!("[{}, {}]", row.n.0, row.n.1),
                row.j.to_string(),
                row.r.to_string(),
            ));
        }
        let width = |f: fn(&(String, String, String, String, String)) -> &String| {
            lines.iter().map(|l| f(l).len()).max().unwrap_or(0)
        };
        let w = [
            width(|l| &l.0),
            width(|l| &l.1),
            width(|l| &l.2),
            width(|l| &l.3),
            width(|l| &l.4),
        ];
        let mut out = String::new();
        for l in &lines {
            out.push_str(&format!(
                "{:<w0$}  {:<w1$}  {:<w2$}  {:>w3$}  {:>w4$}\n",
                l.0,
                l.1,
                l.2,
                l.3,
                l.4,
                w0 = w[0],
                w1 = w[1],
                w2 = w[2],
                w3 = w[3],
                w4 = w[4]
            ));
        }
        out.push_str(&format!("network RF: {}\n", self.network_rf));
        out
    }
}

/// Folds [`layer_transition`] over `layers`, starting from an input of `(width, height)`.
pub fn chain_rf(layers: &[LayerSpec], input: (usize, usize)) -> Result<RfReport> {
    if layers.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut state = RfState::input(input.0, input.1);
    if input.0 == 0 || input.1 == 0 {
        return Err(Error::InvalidArgument(format!("input size {input:?} must be positive")));
    }
    let mut rows = vec![RfRow {
        index: 0,
        name: "Input".into(),
        kind: None,
        n: state.n,
        j: state.j,
        r: state.r,
    }];
    let mut seen_dense = false;
    for (i, layer) in layers.iter().enumerate() {
        let index = i + 1;
        if seen_dense && layer.kind != LayerKind::DenseTerminal {
            return Err(Error::Layer {
                index,
                name: layer.name.clone(),
                reason: "RF-bearing layer after a dense terminal layer".into(),
            });
        }
        seen_dense |= layer.kind == LayerKind::DenseTerminal;
        state = transition(state, layer).map_err(|reason| Error::Layer {
            index,
            name: layer.name.clone(),
            reason,
        })?;
        rows.push(RfRow {
            index,
            name: layer.name.clone(),
            kind: Some(layer.kind),
            n: state.n,
            j: state.j,
            r: state.r,
        });
    }
    let mut report = RfReport {
        input,
        rows,
        network_rf: 0,
    };
    report.network_rf = report.final_state().r;
    Ok(report)
}

/// Admissible watermark extents: at least the Embedder RF, at most the Detector RF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub lower: usize,
    pub upper: usize,
}

impl SizeRange {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        if lower > upper {
            return Err(Error::InvertedRange {
                embedder: lower,
                detector: upper,
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, extent: usize) -> bool {
        (self.lower..=self.upper).contains(&extent)
    }

    /// Both watermark dimensions inside the window.
    pub fn contains_dims(&self, (h, w): (usize, usize)) -> bool {
        self.contains(h) && self.contains(w)
    }
}

pub fn valid_watermark_range(embedder: &RfReport, detector: &RfReport) -> Result<SizeRange> {
    if embedder.input != detector.input {
        return Err(Error::InputMismatch(embedder.input, detector.input));
    }
    SizeRange::new(embedder.network_rf, detector.network_rf)
}

/// Embedder downsampling path at 1280×720 (RF 16).
pub fn reference_embedder_chain() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("Conv", 4, 4, 0),
        LayerSpec::norm("BatchNorm"),
        LayerSpec::activation("LeakyReLU"),
        LayerSpec::conv("Conv", 4, 2, 1),
        LayerSpec::norm("BatchNorm"),
        LayerSpec::activation("LeakyReLU"),
    ]
}

/// Detector convolution/pooling stack at 1280×720 (RF 161).
pub fn reference_detector_chain() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("Conv", 5, 3, 1),
        LayerSpec::activation("ReLU"),
        LayerSpec::pool("MaxPool2d", 5, 3),
        LayerSpec::conv("Conv", 5, 3, 1),
        LayerSpec::activation("ReLU"),
        LayerSpec::pool("MaxPool2d", 5, 3),
    ]
}
