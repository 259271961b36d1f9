//! Tensor shapes with tagged axes and storage precision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis tag. `T` time, `B` batch, `C` channels, `H`/`W` spatial, `F` features, `N` generic count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    T,
    B,
    C,
    H,
    W,
    F,
    N,
}

impl Axis {
    pub fn as_char(self) -> char {
        match self {
            Axis::T => 'T',
            Axis::B => 'B',
            Axis::C => 'C',
            Axis::H => 'H',
            Axis::W => 'W',
            Axis::F => 'F',
            Axis::N => 'N',
        }
    }

    fn from_tag(tag: &str) -> Option<Axis> {
        Some(match tag {
            "T" => Axis::T,
            "B" => Axis::B,
            "C" => Axis::C,
            "H" => Axis::H,
            "W" => Axis::W,
            "F" => Axis::F,
            "N" => Axis::N,
            _ => return None,
        })
    }
}

/// Storage precision of a tensor. Compute is always fp32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fp32,
    Fp16,
    Int8,
}

impl Precision {
    pub fn bytes(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
            Precision::Int8 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int8 => "int8",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Precision::Fp32 => 0,
            Precision::Fp16 => 1,
            Precision::Int8 => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Precision> {
        match code {
            0 => Some(Precision::Fp32),
            1 => Some(Precision::Fp16),
            2 => Some(Precision::Int8),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = ShapeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fp32" => Ok(Precision::Fp32),
            "fp16" => Ok(Precision::Fp16),
            "int8" => Ok(Precision::Int8),
            other => Err(ShapeParseError(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ShapeParseError(pub String);

/// Ordered list of tagged axes plus the storage precision of the tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    axes: Vec<(Axis, usize)>,
    pub precision: Precision,
}

impl TensorShape {
    pub fn new(axes: Vec<(Axis, usize)>, precision: Precision) -> Result<Self, ShapeParseError> {
        for (i, (tag, extent)) in axes.iter().enumerate() {
            if *extent == 0 {
                return Err(ShapeParseError(format!(
                    "axis {} has zero extent",
                    tag.as_char()
                )));
            }
            if axes[..i].iter().any(|(t, _)| t == tag) {
                return Err(ShapeParseError(format!(
                    "axis {} appears more than once",
                    tag.as_char()
                )));
            }
        }
        Ok(TensorShape { axes, precision })
    }

    /// Shorthand for fp32 shapes built in code; panics on invalid axes.
    pub fn fp32(axes: &[(Axis, usize)]) -> Self {
        TensorShape::new(axes.to_vec(), Precision::Fp32).expect("valid shape")
    }

    /// Parses the `T:100,B:1,F:26` dim syntax.
    pub fn parse_dims<S: AsRef<str>>(
        dims: &[S],
        precision: Precision,
    ) -> Result<Self, ShapeParseError> {
        if dims.is_empty() {
            return Err(ShapeParseError("shape has no axes".into()));
        }
        let mut axes = Vec::with_capacity(dims.len());
        for dim in dims {
            let dim = dim.as_ref().trim();
            let (tag, extent) = dim
                .split_once(':')
                .ok_or_else(|| ShapeParseError(format!("dim `{dim}` is not TAG:EXTENT")))?;
            let axis = Axis::from_tag(tag.trim())
                .ok_or_else(|| ShapeParseError(format!("unknown axis tag `{tag}`")))?;
            let extent: usize = extent
                .trim()
                .parse()
                .map_err(|_| ShapeParseError(format!("bad extent in `{dim}`")))?;
            axes.push((axis, extent));
        }
        TensorShape::new(axes, precision)
    }

    pub fn axes(&self) -> &[(Axis, usize)] {
        &self.axes
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn tags(&self) -> Vec<Axis> {
        self.axes.iter().map(|(a, _)| *a).collect()
    }

    pub fn extent(&self, axis: Axis) -> Option<usize> {
        self.axes.iter().find(|(a, _)| *a == axis).map(|(_, e)| *e)
    }

    pub fn last(&self) -> (Axis, usize) {
        *self.axes.last().expect("shape has at least one axis")
    }

    pub fn numel(&self) -> usize {
        self.axes.iter().map(|(_, e)| e).product()
    }

    /// Bytes occupied in storage precision.
    pub fn storage_bytes(&self) -> u64 {
        self.numel() as u64 * self.precision.bytes()
    }

    pub fn with_precision(&self, precision: Precision) -> Self {
        TensorShape {
            axes: self.axes.clone(),
            precision,
        }
    }

    pub fn with_extent(&self, axis: Axis, extent: usize) -> Self {
        let mut out = self.clone();
        for (a, e) in &mut out.axes {
            if *a == axis {
                *e = extent;
            }
        }
        out
    }

    pub fn with_last(&self, axis: Axis, extent: usize) -> Self {
        let mut out = self.clone();
        *out.axes.last_mut().expect("non-empty") = (axis, extent);
        out
    }

    pub fn dims_string(&self) -> String {
        self.axes
            .iter()
            .map(|(a, e)| format!("{}:{e}", a.as_char()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dims_string())
    }
}
