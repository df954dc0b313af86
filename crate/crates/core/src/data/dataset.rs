use std::collections::HashMap;

use rayon::prelude::*;

use super::image::read_image;
use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A manifest with every image decoded, addressable by id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    images: Vec<Tensor<f32>>,
    positions: HashMap<String, usize>,
}

impl Dataset {
    pub fn load(manifest: Manifest) -> Result<Self> {
        let images = manifest
            .records
            .par_iter()
            .map(|r| {
                let path = manifest.resolve(r);
                if !path.is_file() {
                    return Err(Error::MissingImage { id: r.id.clone(), path });
                }
                read_image(&path)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, images)
    }

    /// Pairs `images[i]` with `manifest.records[i]`.
    pub fn from_parts(manifest: Manifest, images: Vec<Tensor<f32>>) -> Result<Self> {
        if images.len() != manifest.len() {
            return Err(Error::invalid(format!(
                "{} images for {} manifest records",
                images.len(),
                manifest.len()
            )));
        }
        let mut positions = HashMap::with_capacity(images.len());
        for (i, r) in manifest.records.iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            manifest,
            images,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.positions.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn image(&self, id: &str) -> Result<&Tensor<f32>> {
        Ok(&self.images[self.position(id)?])
    }

    pub fn image_at(&self, index: usize) -> &Tensor<f32> {
        &self.images[index]
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }
}
