//! Convolution specifications, depthwise-separable composition and
//! receptive-field analysis of dilated stacks.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub padding: Padding,
    pub stride: (usize, usize),
}

impl Conv2dSpec {
    /// Stride-1 convolution that preserves spatial size (odd square kernel).
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize, groups: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            dilation: (dilation, dilation),
            groups,
            padding: Padding::uniform(dilation * (kernel.saturating_sub(1)) / 2),
            stride: (1, 1),
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        Self::same(channels, channels, kernel, dilation, channels)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1, 1, 1)
    }

    /// Non-overlapping `patch × patch` projection (stride = kernel).
    pub fn patchify(in_channels: usize, out_channels: usize, patch: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (patch, patch),
            dilation: (1, 1),
            groups: 1,
            padding: Padding::default(),
            stride: (patch, patch),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.dilation.0,
            self.dilation.1,
            self.stride.0,
            self.stride.1,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(Error::Contract(alloc::format!("conv spec has a zero extent: {self:?}")));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Contract(alloc::format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups,
                self.in_channels,
                self.out_channels
            )));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.out_channels == self.in_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.dilation == (1, 1)
    }

    /// `[out, in / groups, kh, kw]`
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn param_count(&self, bias: bool) -> usize {
        self.weight_shape().iter().product::<usize>() + if bias { self.out_channels } else { 0 }
    }

    /// Bound for uniform fan-in initialisation, `sqrt(1 / fan_in)`.
    pub fn init_bound(&self) -> f64 {
        let fan_in = self.in_channels / self.groups * self.kernel.0 * self.kernel.1;
        (1.0 / fan_in as f64).sqrt()
    }
}

/// Depthwise convolution followed by a pointwise one.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_separable<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    dw_spec: &Conv2dSpec,
    dw_w: Var,
    dw_b: Option<Var>,
    pw_spec: &Conv2dSpec,
    pw_w: Var,
    pw_b: Option<Var>,
) -> Result<Var> {
    if !dw_spec.is_depthwise() {
        return Err(Error::Contract(
            "first stage of a separable conv must be depthwise".into(),
        ));
    }
    if !pw_spec.is_pointwise() || pw_spec.groups != 1 {
        return Err(Error::Contract(
            "second stage of a separable conv must be pointwise".into(),
        ));
    }
    if pw_spec.in_channels != dw_spec.out_channels {
        return Err(Error::Contract(alloc::format!(
            "separable chain mismatch: depthwise emits {} channels, pointwise expects {}",
            dw_spec.out_channels,
            pw_spec.in_channels
        )));
    }
    let h = tape.conv2d(x, dw_w, dw_b, dw_spec)?;
    tape.conv2d(h, pw_w, pw_b, pw_spec)
}

/// Parameters of a `k × k` depthwise-separable conv: `cin·k² + cin·cout` (+ biases).
pub fn separable_param_count(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    Conv2dSpec::depthwise(cin, k, 1).param_count(bias) + Conv2dSpec::pointwise(cin, cout).param_count(bias)
}

/// Dilation rates of a stack of equal-kernel stride-1 convolutions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DilationSchedule(Vec<usize>);

impl DilationSchedule {
    pub fn new(rates: Vec<usize>) -> Result<Self> {
        if rates.is_empty() || rates.contains(&0) {
            return Err(Error::Contract(alloc::format!(
                "dilation rates must be non-empty and >= 1, got {rates:?}"
            )));
        }
        Ok(Self(rates))
    }

    pub fn rates(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for DilationSchedule {
    fn default() -> Self {
        Self(vec![1, 2, 3, 1])
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Contract(alloc::format!(
            "kernel size must be odd and >= 1, got {kernel}"
        )));
    }
    Ok(())
}

/// `1 + Σ (kernel − 1)·rate` along one axis.
pub fn receptive_field(schedule: &DilationSchedule, kernel: usize) -> Result<usize> {
    check_kernel(kernel)?;
    Ok(1 + schedule.rates().iter().map(|r| (kernel - 1) * r).sum::<usize>())
}

/// Input offsets (along one axis) reachable from one output position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coverage {
    /// Sorted reachable offsets.
    pub offsets: Vec<i64>,
    /// `mask[i]` is true when offset `min + i` is reachable.
    pub mask: Vec<bool>,
    /// Whether the offsets form a full integer interval.
    pub continuous: bool,
}

impl Coverage {
    pub fn min(&self) -> i64 {
        self.offsets[0]
    }

    pub fn max(&self) -> i64 {
        self.offsets[self.offsets.len() - 1]
    }
}

/// Iterated Minkowski sum of each layer's tap offsets.
pub fn gridding_coverage(schedule: &DilationSchedule, kernel: usize) -> Result<Coverage> {
    check_kernel(kernel)?;
    let half = (kernel / 2) as i64;
    let mut reach: BTreeSet<i64> = BTreeSet::from([0]);
    for &rate in schedule.rates() {
        let taps: Vec<i64> = (-half..=half).map(|j| j * rate as i64).collect();
        reach = reach.iter().flat_map(|&r| taps.iter().map(move |&t| r + t)).collect();
    }
    let offsets: Vec<i64> = reach.into_iter().collect();
    let (lo, hi) = (offsets[0], offsets[offsets.len() - 1]);
    let mut mask = vec![false; (hi - lo + 1) as usize];
    for &o in &offsets {
        mask[(o - lo) as usize] = true;
    }
    let continuous = mask.iter().all(|&m| m);
    Ok(Coverage {
        offsets,
        mask,
        continuous,
    })
}
