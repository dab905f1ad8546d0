use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ParamLayout;

/// Upper bounds accepted when an architecture comes from an untrusted file.
const MAX_BLOCKS: usize = 64;
const MAX_CONVS_PER_BLOCK: usize = 64;
const MAX_FILTER_LENGTH: usize = 4096;
const MAX_FILTER_GROUPS: usize = 64;
const MAX_CHANNELS: usize = 8192;

/// Shape of the residual embedding network.
///
/// Every conv layer holds `filters_per_length` filters of each width in
/// `filter_lengths`; their outputs are concatenated into
/// `filter_lengths.len() * filters_per_length` channels, which is also the
/// embedding dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    pub blocks: usize,
    pub convs_per_block: usize,
    pub filter_lengths: Vec<usize>,
    pub filters_per_length: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            convs_per_block: 2,
            filter_lengths: vec![4, 8, 16, 32, 64],
            filters_per_length: 33,
        }
    }
}

impl ArchSpec {
    /// One block, widths 2 and 3, two filters each: small enough for
    /// finite-difference checks of the whole network.
    pub fn tiny() -> Self {
        Self {
            blocks: 1,
            convs_per_block: 2,
            filter_lengths: vec![2, 3],
            filters_per_length: 2,
        }
    }

    pub fn channels(&self) -> usize {
        self.filter_lengths.len() * self.filters_per_length
    }

    pub fn embedding_dim(&self) -> usize {
        self.channels()
    }

    pub fn conv_layers(&self) -> usize {
        self.blocks * self.convs_per_block
    }

    pub fn max_filter_length(&self) -> usize {
        self.filter_lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("architecture: {msg}")));
        if self.blocks == 0 || self.blocks > MAX_BLOCKS {
            return bad(format!("blocks must be in 1..={MAX_BLOCKS}, got {}", self.blocks));
        }
        if self.convs_per_block == 0 || self.convs_per_block > MAX_CONVS_PER_BLOCK {
            return bad(format!(
                "convs_per_block must be in 1..={MAX_CONVS_PER_BLOCK}, got {}",
                self.convs_per_block
            ));
        }
        if self.filter_lengths.is_empty() || self.filter_lengths.len() > MAX_FILTER_GROUPS {
            return bad(format!(
                "between 1 and {MAX_FILTER_GROUPS} filter lengths required, got {}",
                self.filter_lengths.len()
            ));
        }
        if let Some(&f) = self
            .filter_lengths
            .iter()
            .find(|&&f| f == 0 || f > MAX_FILTER_LENGTH)
        {
            return bad(format!("filter length {f} outside 1..={MAX_FILTER_LENGTH}"));
        }
        if self.filters_per_length == 0 || self.channels() > MAX_CHANNELS {
            return bad(format!(
                "filters_per_length must be positive with at most {MAX_CHANNELS} channels in total"
            ));
        }
        Ok(())
    }

    /// Total number of trainable parameters, `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let m = self.channels();
        let widths: usize = self.filter_lengths.iter().sum();
        let mut total = 0usize;
        let mut in_ch = 1usize;
        for _ in 0..self.blocks {
            let block_in = in_ch;
            for _ in 0..self.convs_per_block {
                let weights = self.filters_per_length.checked_mul(in_ch)?.checked_mul(widths)?;
                total = total.checked_add(weights)?.checked_add(m)?.checked_add(2 * m)?;
                in_ch = m;
            }
            if block_in != m {
                total = total.checked_add(m.checked_mul(block_in)?)?.checked_add(3 * m)?;
            }
        }
        Some(total)
    }

    pub(crate) fn topology(&self) -> Result<Topology> {
        self.validate()?;
        if self.param_count().is_none() {
            return Err(Error::Config("architecture: parameter count overflows".into()));
        }
        Ok(Topology::build(self))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGroup {
    pub width: usize,
    pub filters: usize,
    pub weight: usize,
    pub bias: usize,
    /// First output channel written by this group.
    pub channel: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub groups: Vec<ConvGroup>,
    pub gamma: usize,
    pub beta: usize,
    pub bn: usize,
    pub params: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Shortcut {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: usize,
    pub bias: usize,
    pub gamma: usize,
    pub beta: usize,
    pub bn: usize,
    pub params: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub convs: Vec<ConvLayer>,
    pub shortcut: Option<Shortcut>,
}

impl Block {
    pub fn param_start(&self) -> usize {
        self.convs[0].params.start
    }
}

/// Parameter offsets and batch-norm indices derived from an [`ArchSpec`].
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    pub blocks: Vec<Block>,
    pub layout: ParamLayout,
    pub bn_channels: Vec<usize>,
}

impl Topology {
    fn build(spec: &ArchSpec) -> Self {
        let m = spec.channels();
        let mut layout = ParamLayout::new();
        let mut bn_channels = Vec::new();
        let mut blocks = Vec::with_capacity(spec.blocks);
        let mut in_ch = 1usize;
        for b in 0..spec.blocks {
            let block_in = in_ch;
            let mut convs = Vec::with_capacity(spec.convs_per_block);
            for j in 0..spec.convs_per_block {
                let start = layout.len();
                let mut groups = Vec::with_capacity(spec.filter_lengths.len());
                for (g, &width) in spec.filter_lengths.iter().enumerate() {
                    let prefix = format!("block{b}.conv{j}.group{g}");
                    let weight = layout.push(format!("{prefix}.weight"), &[spec.filters_per_length, in_ch, width]);
                    let bias = layout.push(format!("{prefix}.bias"), &[spec.filters_per_length]);
                    groups.push(ConvGroup {
                        width,
                        filters: spec.filters_per_length,
                        weight,
                        bias,
                        channel: g * spec.filters_per_length,
                    });
                }
                let gamma = layout.push(format!("block{b}.conv{j}.bn.gamma"), &[m]);
                let beta = layout.push(format!("block{b}.conv{j}.bn.beta"), &[m]);
                bn_channels.push(m);
                convs.push(ConvLayer {
                    in_ch,
                    out_ch: m,
                    groups,
                    gamma,
                    beta,
                    bn: bn_channels.len() - 1,
                    params: start..layout.len(),
                });
                in_ch = m;
            }
            let shortcut = (block_in != m).then(|| {
                let start = layout.len();
                let weight = layout.push(format!("block{b}.shortcut.weight"), &[m, block_in, 1]);
                let bias = layout.push(format!("block{b}.shortcut.bias"), &[m]);
                let gamma = layout.push(format!("block{b}.shortcut.bn.gamma"), &[m]);
                let beta = layout.push(format!("block{b}.shortcut.bn.beta"), &[m]);
                bn_channels.push(m);
                Shortcut {
                    in_ch: block_in,
                    out_ch: m,
                    weight,
                    bias,
                    gamma,
                    beta,
                    bn: bn_channels.len() - 1,
                    params: start..layout.len(),
                }
            });
            blocks.push(Block { convs, shortcut });
        }
        Self {
            blocks,
            layout,
            bn_channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_four_layers_of_165() {
        let spec = ArchSpec::default();
        assert_eq!(spec.conv_layers(), 4);
        assert_eq!(spec.channels(), 165);
        let topo = spec.topology().unwrap();
        let layers: Vec<_> = topo.blocks.iter().flat_map(|b| &b.convs).collect();
        assert_eq!(layers.len(), 4);
        assert!(layers.iter().all(|l| l.out_ch == 165));
        assert!(topo.blocks[0].shortcut.is_some());
        assert!(topo.blocks[1].shortcut.is_none());
        assert_eq!(topo.layout.len(), spec.param_count().unwrap());
    }

    #[test]
    fn single_filter_count_closed_form() {
        // m = 1: no projection, two layers of f weights + 1 bias + gamma + beta.
        for f in [1usize, 4, 9] {
            let spec = ArchSpec {
                blocks: 1,
                convs_per_block: 2,
                filter_lengths: vec![f],
                filters_per_length: 1,
            };
            assert_eq!(spec.topology().unwrap().layout.len(), 2 * (f + 3));
        }
        // m = 2 (two filters of width f): layer0 2f+2+4, layer1 4f+2+4,
        // projection 2 weights + 2 bias + 4 bn.
        let spec = ArchSpec {
            blocks: 1,
            convs_per_block: 2,
            filter_lengths: vec![5],
            filters_per_length: 2,
        };
        assert_eq!(spec.topology().unwrap().layout.len(), (10 + 6) + (20 + 6) + 8);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ArchSpec::tiny();
        spec.blocks = 0;
        assert!(spec.validate().is_err());
        let mut spec = ArchSpec::tiny();
        spec.filter_lengths = vec![3, 0];
        assert!(spec.validate().is_err());
        let mut spec = ArchSpec::tiny();
        spec.filters_per_length = 0;
        assert!(spec.validate().is_err());
    }
}
