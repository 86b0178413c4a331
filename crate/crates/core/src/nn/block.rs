use rand::Rng;

use super::layers::{Conv2d, PreActConv};
use super::params::{ParamStore, Session};
use crate::error::{dim_err, Result};
use crate::tensor::Var;

/// Pre-activation residual bottleneck: `y = skip(x) + F(x)` with
/// `F = [BN→ReLU→1×1 reduce] → [BN→ReLU→3×3, strided] → [BN→ReLU→1×1 restore]`.
///
/// The skip path is the identity unless the block changes width or
/// resolution, in which case it is a strided 1×1 projection of `x`.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: PreActConv,
    pub spatial: PreActConv,
    pub restore: PreActConv,
    pub projection: Option<Conv2d>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Bottleneck {
    /// `ratio` divides `out_channels` to get the bottleneck width (at least 1).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mid = (out_channels / ratio.max(1)).max(1);
        let reduce = PreActConv::new(store, &format!("{name}.reduce"), in_channels, mid, 1, 1, rng)?;
        let spatial = PreActConv::new(store, &format!("{name}.spatial"), mid, mid, 3, stride, rng)?;
        let restore = PreActConv::new(store, &format!("{name}.restore"), mid, out_channels, 1, 1, rng)?;
        let projection = if stride != 1 || in_channels != out_channels {
            Some(Conv2d::new(
                store,
                &format!("{name}.proj"),
                in_channels,
                out_channels,
                1,
                stride,
                false,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            reduce,
            spatial,
            restore,
            projection,
            in_channels,
            out_channels,
            stride,
        })
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        self.spatial.conv.output_extent(input)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = s.graph.value(x).shape().get(1).copied();
        if c != Some(self.in_channels) {
            return dim_err(format!(
                "bottleneck expects {} channels, got shape {:?}",
                self.in_channels,
                s.graph.value(x).shape()
            ));
        }
        let f = self.reduce.forward(s, x)?;
        let f = self.spatial.forward(s, f)?;
        let f = self.restore.forward(s, f)?;
        let skip = match &self.projection {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        s.graph.add(skip, f)
    }
}
