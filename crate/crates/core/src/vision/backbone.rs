use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_dim, Conv2d, GlobalAvgPool, MaxPool2d, Relu};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One `conv -> relu -> [maxpool2]` stage. Convolutions use same-padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
}

impl BlockSpec {
    pub fn new(filters: usize) -> Self {
        Self {
            filters,
            kernel: 3,
            stride: 1,
            pool: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneMode {
    /// Trainable convolutional stack over raw images.
    #[default]
    Conv,
    /// Precomputed embedding vectors from an external feature extractor.
    Precomputed,
}

/// Omitted config fields take their [`BackboneConfig::desk`] values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "BackboneConfig::desk")]
pub struct BackboneConfig {
    pub mode: BackboneMode,
    /// `[height, width]` in pixels.
    pub input_size: [usize; 2],
    pub channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub embedding_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            mode: BackboneMode::Conv,
            input_size: [299, 299],
            channels: 3,
            blocks: [16, 32, 64, 128].map(BlockSpec::new).to_vec(),
            embedding_dim: 128,
        }
    }
}

impl BackboneConfig {
    /// Same stack at 32×32 input.
    pub fn desk() -> Self {
        Self {
            input_size: [32, 32],
            ..Self::default()
        }
    }

    pub fn precomputed(embedding_dim: usize) -> Self {
        Self {
            mode: BackboneMode::Precomputed,
            input_size: [1, 1],
            channels: embedding_dim,
            blocks: Vec::new(),
            embedding_dim,
        }
    }

    /// Spatial size after every block, starting with the input.
    pub fn spatial_sizes(&self) -> Vec<[usize; 2]> {
        let mut sizes = vec![self.input_size];
        let mut cur = self.input_size;
        for b in &self.blocks {
            let pad = b.kernel / 2;
            let mut next = [
                conv_output_dim(cur[0], b.kernel, b.stride, pad),
                conv_output_dim(cur[1], b.kernel, b.stride, pad),
            ];
            if b.pool {
                next = [next[0] / 2, next[1] / 2];
            }
            sizes.push(next);
            cur = next;
        }
        sizes
    }

    /// Shape of one model input (without the batch axis).
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.mode {
            BackboneMode::Conv => vec![self.channels, self.input_size[0], self.input_size[1]],
            BackboneMode::Precomputed => vec![self.embedding_dim],
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.embedding_dim == 0 {
            errors.push("backbone.embedding_dim must be positive".to_string());
        }
        if self.mode == BackboneMode::Conv {
            if self.channels == 0 {
                errors.push("backbone.channels must be positive".to_string());
            }
            if self.input_size.iter().any(|&d| d == 0) {
                errors.push("backbone.input_size must be positive".to_string());
            }
            match self.blocks.last() {
                None => errors.push("backbone.blocks must not be empty in conv mode".to_string()),
                Some(last) if last.filters != self.embedding_dim => errors.push(format!(
                    "backbone.embedding_dim ({}) must equal the last block's filters ({})",
                    self.embedding_dim, last.filters
                )),
                _ => {}
            }
            for (i, b) in self.blocks.iter().enumerate() {
                if b.filters == 0 || b.kernel == 0 || b.stride == 0 {
                    errors.push(format!("backbone.blocks[{i}]: filters, kernel and stride must be positive"));
                }
            }
            if errors.is_empty() {
                let sizes = self.spatial_sizes();
                let mut cur = self.input_size;
                for (i, b) in self.blocks.iter().enumerate() {
                    if b.kernel > cur[0] + 2 * (b.kernel / 2) || b.kernel > cur[1] + 2 * (b.kernel / 2) {
                        errors.push(format!("backbone.blocks[{i}]: kernel larger than its input"));
                        break;
                    }
                    cur = sizes[i + 1];
                    if cur.iter().any(|&d| d == 0) {
                        errors.push(format!("backbone.blocks[{i}]: spatial size collapses to zero"));
                        break;
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub relu: Relu<T>,
    pub pool: Option<MaxPool2d>,
}

/// Convolutional feature extractor ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Backbone<T> {
    pub blocks: Vec<ConvBlock<T>>,
    gap: GlobalAvgPool,
}

impl<T: Scalar> Backbone<T> {
    pub fn new<R: Rng>(config: &BackboneConfig, rng: &mut R) -> Self {
        let mut in_c = config.channels;
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let conv = Conv2d::new(&format!("block{i}.conv"), in_c, b.filters, b.kernel, b.stride, b.kernel / 2, rng);
                in_c = b.filters;
                ConvBlock {
                    conv,
                    relu: Relu::new(),
                    pool: b.pool.then(|| MaxPool2d::new(2)),
                }
            })
            .collect();
        Self {
            blocks,
            gap: GlobalAvgPool::new(),
        }
    }

    pub fn from_convs(config: &BackboneConfig, convs: Vec<Conv2d<T>>) -> Result<Self> {
        if convs.len() != config.blocks.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} conv layers, found {}",
                config.blocks.len(),
                convs.len()
            )));
        }
        let blocks = convs
            .into_iter()
            .zip(&config.blocks)
            .map(|(conv, b)| ConvBlock {
                conv,
                relu: Relu::new(),
                pool: b.pool.then(|| MaxPool2d::new(2)),
            })
            .collect();
        Ok(Self {
            blocks,
            gap: GlobalAvgPool::new(),
        })
    }

    /// Inference without caching. Returns the embedding and the last block's
    /// post-ReLU activation (before pooling).
    pub fn infer_with_activation(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut h = x.clone();
        let mut last = None;
        for block in &self.blocks {
            let a = crate::nn::relu(&block.conv.infer(&h)?);
            h = match &block.pool {
                Some(p) => p.infer(&a)?,
                None => a.clone(),
            };
            last = Some(a);
        }
        let emb = crate::nn::global_avg_pool(&h)?;
        Ok((emb, last.unwrap_or(h)))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer_with_activation(x)?.0)
    }

    /// Training forward pass; caches everything backward needs.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for block in &mut self.blocks {
            let a = block.relu.forward(&block.conv.forward(&h)?);
            h = match &mut block.pool {
                Some(p) => p.forward(&a)?,
                None => a,
            };
        }
        Ok(self.gap.forward(&h)?)
    }

    pub fn backward(&mut self, grad_embedding: &Tensor<T>) -> Result<()> {
        let mut g = self.gap.backward(grad_embedding)?;
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if let Some(p) = &mut block.pool {
                g = p.backward(&g)?;
            }
            g = block.relu.backward(&g)?;
            match block.conv.backward(&g, i > 0)? {
                Some(gi) => g = gi,
                None => debug_assert_eq!(i, 0, "only the first of {n} blocks skips its input gradient"),
            }
        }
        Ok(())
    }

    /// Gradient of the embedding cotangent with respect to the last block's
    /// post-ReLU activation. Requires a preceding [`Backbone::forward`].
    pub fn grad_last_activation(&mut self, grad_embedding: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.gap.backward(grad_embedding)?;
        if let Some(block) = self.blocks.last_mut() {
            if let Some(p) = &mut block.pool {
                g = p.backward(&g)?;
            }
        }
        Ok(g)
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<T>> {
        self.blocks.iter().map(|b| &b.conv)
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<T>> {
        self.blocks.iter_mut().map(|b| &mut b.conv)
    }

    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.relu.clear_cache();
            if let Some(p) = &mut b.pool {
                p.clear_cache();
            }
        }
        self.gap = GlobalAvgPool::new();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_embedding_matches_last_block() {
        BackboneConfig::default().validate().unwrap();
        BackboneConfig::desk().validate().unwrap();
        assert_eq!(BackboneConfig::desk().spatial_sizes().last(), Some(&[2, 2]));
    }

    #[test]
    fn validation_reports_every_problem() {
        let cfg = BackboneConfig {
            embedding_dim: 7,
            input_size: [0, 4],
            ..BackboneConfig::desk()
        };
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn too_many_pools_collapse() {
        let cfg = BackboneConfig {
            input_size: [8, 8],
            ..BackboneConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }
}
