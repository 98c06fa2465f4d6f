use std::collections::BTreeMap;

use anyhow::{bail, Context};
use pppn_core::dataset::{load_keypoints, DatasetManifest};
use pppn_core::{load_feature_stack, FeatureMap, FeatureStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageRef {
    pub class_id: usize,
    stack: usize,
    row: usize,
}

/// Every feature map named by a manifest, addressable by image id.
#[derive(Debug, Default)]
pub struct ImageStore {
    stacks: Vec<FeatureStack>,
    index: BTreeMap<String, ImageRef>,
    sizes: BTreeMap<String, (u32, u32)>,
    /// Classes whose features could not be loaded, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl ImageStore {
    pub fn load(manifest: &DatasetManifest, clamp: bool) -> anyhow::Result<Self> {
        let mut store = ImageStore::default();
        for entry in &manifest.classes {
            let stack = match load_feature_stack(manifest, entry.class_id, clamp) {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(class_id = entry.class_id, error = %e, "skipping class features");
                    store.skipped.push((entry.class_id, e.to_string()));
                    continue;
                }
            };
            if entry.keypoint_file.is_some() {
                let anns = load_keypoints(manifest, entry.class_id)
                    .with_context(|| format!("keypoints of class {}", entry.class_id))?;
                for a in anns {
                    store.sizes.insert(a.image_id, (a.image_height, a.image_width));
                }
            }
            let s = store.stacks.len();
            for (row, id) in stack.image_ids.iter().enumerate() {
                let r = ImageRef { class_id: entry.class_id, stack: s, row };
                if store.index.insert(id.clone(), r).is_some() {
                    bail!("image id '{id}' appears more than once in the manifest");
                }
            }
            store.stacks.push(stack);
        }
        Ok(store)
    }

    pub fn get(&self, image_id: &str) -> Option<ImageRef> {
        self.index.get(image_id).copied()
    }

    pub fn feature_map(&self, r: ImageRef) -> FeatureMap {
        self.stacks[r.stack].feature_map(r.row)
    }

    /// `(height, width)` of the source image, when annotated.
    pub fn image_size(&self, image_id: &str) -> Option<(u32, u32)> {
        self.sizes.get(image_id).copied()
    }

    /// Image ids in manifest order with their class.
    pub fn images(&self) -> impl Iterator<Item = (&str, usize)> {
        self.stacks
            .iter()
            .flat_map(|s| s.image_ids.iter().map(move |id| (id.as_str(), s.class_id)))
    }
}
