//! Serializable model descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::nn::{UnetConfig, UpsampleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dfno,
    Specdfno,
    Metagrad,
    Multigrad,
    TempDfno,
    TempSpecdfno,
    Cnn2,
    Cnn4,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Dfno,
        Variant::Specdfno,
        Variant::Metagrad,
        Variant::Multigrad,
        Variant::TempDfno,
        Variant::TempSpecdfno,
        Variant::Cnn2,
        Variant::Cnn4,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Dfno => "dfno",
            Variant::Specdfno => "specdfno",
            Variant::Metagrad => "metagrad",
            Variant::Multigrad => "multigrad",
            Variant::TempDfno => "temp_dfno",
            Variant::TempSpecdfno => "temp_specdfno",
            Variant::Cnn2 => "cnn2",
            Variant::Cnn4 => "cnn4",
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Variant::TempDfno | Variant::TempSpecdfno)
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Variant::Cnn2 | Variant::Cnn4)
    }

    pub fn has_residual(self) -> bool {
        matches!(self, Variant::Specdfno | Variant::TempSpecdfno)
    }

    /// Trained upsampling factor of the CNN baselines.
    pub fn cnn_factor(self) -> Option<usize> {
        match self {
            Variant::Cnn2 => Some(2),
            Variant::Cnn4 => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}` (expected one of dfno, specdfno, metagrad, multigrad, temp_dfno, temp_specdfno, cnn2, cnn4)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    None,
    /// Concatenate Sobel gradient channels to the input.
    Sobel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Two 1x1 layers with a GELU in between.
    Pointwise,
    /// Parallel 3/5/7 convolutions merged by a 1x1 layer.
    Multiscale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub blocks: usize,
    /// Kept modes per transformed axis: `[y, x]`, or `[t, y, x]` for temporal variants.
    pub modes: Vec<usize>,
    pub upsample: UpsampleMode,
    pub preprocess: Preprocess,
    pub reconstruction: Reconstruction,
    pub constraint: bool,
    pub boundary: Boundary,
    /// Input (and output) frames of temporal variants.
    pub window: usize,
    pub unet: UnetConfig,
}

impl ModelSpec {
    /// Default wiring and hyperparameters for `variant`.
    pub fn new(variant: Variant, channels: usize) -> Self {
        let temporal = variant.is_temporal();
        Self {
            variant,
            in_channels: channels,
            out_channels: channels,
            width: 32,
            blocks: 4,
            modes: if temporal { vec![2, 8, 8] } else { vec![12, 12] },
            upsample: if variant == Variant::Metagrad { UpsampleMode::Meta } else { UpsampleMode::Plain },
            preprocess: if matches!(variant, Variant::Metagrad | Variant::Multigrad) {
                Preprocess::Sobel
            } else {
                Preprocess::None
            },
            reconstruction: if variant == Variant::Multigrad { Reconstruction::Multiscale } else { Reconstruction::Pointwise },
            constraint: false,
            boundary: Boundary::Periodic,
            window: 5,
            unet: UnetConfig::default(),
        }
    }

    /// Small widths for tests and desk-scale runs.
    pub fn toy(variant: Variant, channels: usize) -> Self {
        let mut s = Self::new(variant, channels);
        s.width = 4;
        s.blocks = 2;
        s.modes = if variant.is_temporal() { vec![2, 2, 2] } else { vec![3, 3] };
        s.unet = UnetConfig { widths: vec![4, 4, 4, 4], pad: s.unet.pad };
        s
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.variant;
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !v.is_cnn() {
            if self.width == 0 || self.blocks == 0 {
                return Err(Error::invalid("width and block count must be positive"));
            }
            let axes = if v.is_temporal() { 3 } else { 2 };
            if self.modes.len() != axes || self.modes.contains(&0) {
                return Err(Error::invalid(format!("{v} needs {axes} positive mode counts, got {:?}", self.modes)));
            }
        }
        if v.is_temporal() {
            if self.window == 0 {
                return Err(Error::invalid("temporal window must be positive"));
            }
            if 2 * self.modes[0] > self.window {
                return Err(Error::invalid(format!(
                    "{} temporal modes exceed the Nyquist limit of a {}-frame window",
                    self.modes[0], self.window
                )));
            }
            if self.reconstruction == Reconstruction::Multiscale {
                return Err(Error::invalid("multiscale reconstruction is only defined for static variants"));
            }
            if self.constraint {
                return Err(Error::invalid("the constraint layer needs a coarse field at the output time; temporal variants predict future frames"));
            }
        }
        if self.constraint && self.in_channels != self.out_channels {
            return Err(Error::invalid("the constraint layer needs equal input and output channels"));
        }
        if v.is_cnn() && (self.unet.widths.is_empty() || self.unet.widths.contains(&0)) {
            return Err(Error::invalid("U-Net widths must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::Format(format!("model spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            let spec = ModelSpec::new(v, 2);
            spec.validate().unwrap();
            assert_eq!(ModelSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
            assert!(spec.to_json().unwrap().contains(&format!("\"{}\"", v.tag())));
        }
        assert!("duno".parse::<Variant>().is_err());
    }

    #[test]
    fn temporal_constraints() {
        let mut s = ModelSpec::new(Variant::TempDfno, 1);
        s.modes = vec![3, 8, 8];
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(Variant::TempDfno, 1);
        s.constraint = true;
        assert!(s.validate().is_err());
    }
}
