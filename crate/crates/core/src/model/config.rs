use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::conv::DilationSchedule;
use crate::error::{Error, Result};

/// Convolution style of the HC-Conv branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvVariant {
    /// Ordinary 3×3 convolutions, no dilation.
    Full,
    /// Ordinary 3×3 convolutions with the dilation schedule.
    DilatedOnly,
    /// Depthwise-separable 3×3 convolutions, no dilation.
    DwOnly,
    /// Dilated depthwise-separable 3×3 convolutions.
    Both,
}

impl ConvVariant {
    pub const ALL: [ConvVariant; 4] = [Self::Full, Self::DilatedOnly, Self::DwOnly, Self::Both];

    pub fn dilated(self) -> bool {
        matches!(self, Self::DilatedOnly | Self::Both)
    }

    pub fn separable(self) -> bool {
        matches!(self, Self::DwOnly | Self::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::DilatedOnly => "dilated_only",
            Self::DwOnly => "dw_only",
            Self::Both => "both",
        }
    }
}

impl fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConvVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Contract(alloc::format!("unknown conv variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub stage_depths: Vec<usize>,
    pub state_size: usize,
    pub num_classes: usize,
    pub input_size: (usize, usize),
    pub dilation_schedule: DilationSchedule,
    pub conv_variant: ConvVariant,
    /// Channel expansion inside the SSM branch.
    pub expand: usize,
    pub in_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 96,
            stage_depths: vec![2, 4, 2, 2],
            state_size: 16,
            num_classes: 2,
            input_size: (224, 224),
            dilation_schedule: DilationSchedule::default(),
            conv_variant: ConvVariant::Both,
            expand: 2,
            in_channels: 3,
        }
    }
}

impl ModelConfig {
    pub const PATCH: usize = 4;

    /// `[C, 2C, 4C, 8C]`
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.stage_depths.len()).map(|i| self.base_channels << i).collect()
    }

    /// Input extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        Self::PATCH << (self.stage_depths.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() < 2 {
            return Err(Error::Contract("at least two stages are required".into()));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::Contract(alloc::format!(
                "base_channels must be even (channel split), got {}",
                self.base_channels
            )));
        }
        if self.state_size == 0 || self.num_classes < 2 || self.expand == 0 || self.in_channels == 0 {
            return Err(Error::Contract(
                "state_size, expand and in_channels must be >= 1 and num_classes >= 2".into(),
            ));
        }
        let m = self.size_multiple();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Dimension(alloc::format!(
                "input size {h}x{w} must be a positive multiple of {m}"
            )));
        }
        Ok(())
    }
}
