//! Block layout of the stacked mean-parameter vector.
//!
//! A model's variational parameters are stacked into one vector `m`; the
//! layout records which slice belongs to which factor, the factor's family,
//! and whether the factor is a low-dimensional "global" block (`Alpha`) or a
//! per-observation nuisance block (`Z`). All alpha blocks must precede all z
//! blocks so the Schur elimination can split `m` at a single boundary.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::FactorFamily;

/// Partition label for the Schur split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Alpha,
    Z,
}

/// One factor's slot in the stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBlock {
    pub name: String,
    pub family: FactorFamily,
    pub range: Range<usize>,
    pub partition: Partition,
    /// Per-statistic names, e.g. `beta`, `lambda[0,1]`; used in artifacts.
    pub stat_names: Vec<String>,
}

impl FactorBlock {
    pub fn is_alpha(&self) -> bool {
        self.partition == Partition::Alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    blocks: Vec<FactorBlock>,
    alpha_dim: usize,
    z_dim: usize,
}

/// Incremental builder; blocks are laid out contiguously in push order.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<FactorBlock>,
    next: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a factor, deriving statistic names as `name.<stat>` from the
    /// family unless explicit names are given via [`LayoutBuilder::push_named`].
    pub fn push(&mut self, name: &str, family: FactorFamily, partition: Partition) -> usize {
        let stats = family
            .stat_names()
            .into_iter()
            .map(|s| format!("{name}.{s}"))
            .collect();
        self.push_named(name, family, partition, stats)
    }

    pub fn push_named(
        &mut self,
        name: &str,
        family: FactorFamily,
        partition: Partition,
        stat_names: Vec<String>,
    ) -> usize {
        let dim = family.dim();
        let range = self.next..self.next + dim;
        self.next += dim;
        self.blocks.push(FactorBlock {
            name: name.to_string(),
            family,
            range,
            partition,
            stat_names,
        });
        self.blocks.len() - 1
    }

    pub fn build(self) -> Result<BlockLayout> {
        BlockLayout::new(self.blocks)
    }
}

impl BlockLayout {
    pub fn new(blocks: Vec<FactorBlock>) -> Result<Self> {
        let mut expected = 0usize;
        let mut alpha_dim = 0usize;
        let mut z_dim = 0usize;
        let mut seen_z = false;
        for b in &blocks {
            if b.range.start != expected {
                return Err(Error::LayoutMismatch(format!(
                    "factor '{}' starts at {} but previous blocks end at {expected}",
                    b.name, b.range.start
                )));
            }
            if b.range.len() != b.family.dim() {
                return Err(Error::LayoutMismatch(format!(
                    "factor '{}' has range length {} but family dimension {}",
                    b.name,
                    b.range.len(),
                    b.family.dim()
                )));
            }
            if b.stat_names.len() != b.family.dim() {
                return Err(Error::LayoutMismatch(format!(
                    "factor '{}' has {} stat names for dimension {}",
                    b.name,
                    b.stat_names.len(),
                    b.family.dim()
                )));
            }
            match b.partition {
                Partition::Alpha => {
                    if seen_z {
                        return Err(Error::LayoutMismatch(format!(
                            "alpha factor '{}' appears after a z factor; alpha blocks must lead",
                            b.name
                        )));
                    }
                    alpha_dim += b.range.len();
                }
                Partition::Z => {
                    seen_z = true;
                    z_dim += b.range.len();
                }
            }
            expected = b.range.end;
        }
        Ok(Self { blocks, alpha_dim, z_dim })
    }

    pub fn blocks(&self) -> &[FactorBlock] {
        &self.blocks
    }

    pub fn num_factors(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &FactorBlock {
        &self.blocks[j]
    }

    pub fn total_dim(&self) -> usize {
        self.alpha_dim + self.z_dim
    }

    pub fn alpha_dim(&self) -> usize {
        self.alpha_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn z_blocks(&self) -> impl Iterator<Item = &FactorBlock> {
        self.blocks.iter().filter(|b| b.partition == Partition::Z)
    }

    /// Statistic names for the whole stacked vector, in index order.
    pub fn stat_names(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| b.stat_names.iter().cloned()).collect()
    }

    /// Names for the alpha prefix only.
    pub fn alpha_stat_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter(|b| b.partition == Partition::Alpha)
            .flat_map(|b| b.stat_names.iter().cloned())
            .collect()
    }

    /// Index of the factor whose range contains statistic `i`.
    pub fn factor_of(&self, i: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.range.contains(&i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_assigns_contiguous_ranges() {
        let mut b = LayoutBuilder::new();
        b.push("beta", FactorFamily::GaussianUv, Partition::Alpha);
        b.push("tau", FactorFamily::Gamma, Partition::Alpha);
        b.push("z[0]", FactorFamily::GaussianUv, Partition::Z);
        let layout = b.build().unwrap();
        assert_eq!(layout.total_dim(), 6);
        assert_eq!(layout.alpha_dim(), 4);
        assert_eq!(layout.z_dim(), 2);
        assert_eq!(layout.block(1).range, 2..4);
        assert_eq!(layout.factor_of(5), Some(2));
        assert_eq!(layout.stat_names()[2], "tau.x");
    }

    #[test]
    fn alpha_after_z_is_rejected() {
        let mut b = LayoutBuilder::new();
        b.push("z[0]", FactorFamily::GaussianUv, Partition::Z);
        b.push("beta", FactorFamily::GaussianUv, Partition::Alpha);
        assert!(b.build().is_err());
    }
}
