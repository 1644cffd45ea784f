//! Manifest ingestion, image preprocessing, augmentation and splits.

mod augment;
mod imaging;
mod manifest;
mod split;
mod synthetic;

use std::path::Path;

pub use augment::{augment, AugmentationSpec, ImageItem, Transform};
pub use imaging::{
    center_crop, flip_horizontal, flip_vertical, load_image, preprocess, resize_bilinear, rotate90, save_png,
    ChannelStats,
};
pub use manifest::{class_histogram, filter_scheme, load_dataset, parse_manifest, DatasetRecord, MANIFEST_HEADER};
pub use split::{select, split, SplitIndices, SplitSpec};
pub use synthetic::{synthetic_items, write_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fusion::{ClassScheme, Mode, Sample};
use crate::location::{LocationCode, CODE_RANGE};

/// Location id given to records without one when the location branch is
/// active alongside the image branch. It lies outside both body maps.
pub const MISSING_LOCATION: u16 = (CODE_RANGE - 1) as u16;

/// Decodes and resizes every record's image (in parallel), tagging each item
/// with its record position as `source_id`.
pub fn load_items(root: &Path, records: &[DatasetRecord], size: usize, exec: Execution) -> Result<Vec<ImageItem>> {
    exec.map_range(records.len(), |i| {
        let r = &records[i];
        Ok(ImageItem {
            image: preprocess(&root.join(&r.image_path), size)?,
            label: r.label,
            location_id: r.location_id,
            source_id: i,
            transform: Transform::IDENTITY,
        })
    })
    .into_iter()
    .collect()
}

/// Converts items to model samples for `mode`. Location-only mode drops
/// items without a location; image+location mode gives them
/// [`MISSING_LOCATION`].
pub fn to_samples(items: &[ImageItem], scheme: &ClassScheme, mode: Mode) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let label = scheme
            .index_of(it.label)
            .ok_or_else(|| Error::contract(format!("class {} is not part of scheme {scheme}", it.label)))?;
        let location = match (mode.uses_location(), it.location_id) {
            (false, _) => None,
            (true, Some(id)) => Some(LocationCode::from_id(usize::from(id))?),
            (true, None) if mode.uses_image() => Some(LocationCode::from_id(usize::from(MISSING_LOCATION))?),
            (true, None) => continue,
        };
        out.push(Sample {
            image: mode.uses_image().then(|| it.image.clone()),
            location,
            label,
        });
    }
    Ok(out)
}

/// Train/val/test samples ready for a model.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub split: SplitIndices,
    pub stats: ChannelStats,
    /// Provenance of each training sample, for leakage audits.
    pub train_sources: Vec<usize>,
}

/// Splits base items, augments the training side only, fits channel
/// statistics on the augmented training images, and standardizes all three
/// splits with them.
pub fn prepare_splits(
    items: &[ImageItem],
    scheme: &ClassScheme,
    mode: Mode,
    split_spec: &SplitSpec,
    aug: &AugmentationSpec,
    seed: u64,
    exec: Execution,
) -> Result<PreparedData> {
    let labels: Vec<usize> = items
        .iter()
        .map(|it| {
            scheme
                .index_of(it.label)
                .ok_or_else(|| Error::contract(format!("class {} is not part of scheme {scheme}", it.label)))
        })
        .collect::<Result<_>>()?;
    let idx = split(&labels, split_spec)?;
    let train_items = augment(&select(items, &idx.train), aug, seed, exec)?;
    if train_items.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    let images: Vec<_> = train_items.iter().map(|it| it.image.clone()).collect();
    let stats = ChannelStats::fit(&images)?;
    let standardize = |xs: Vec<ImageItem>| -> Result<Vec<ImageItem>> {
        xs.into_iter()
            .map(|it| {
                Ok(ImageItem {
                    image: stats.apply(&it.image)?,
                    ..it
                })
            })
            .collect()
    };
    let train_items = standardize(train_items)?;
    let val_items = standardize(select(items, &idx.val))?;
    let test_items = standardize(select(items, &idx.test))?;
    let kept: Vec<&ImageItem> = train_items
        .iter()
        .filter(|it| mode.uses_image() || !mode.uses_location() || it.location_id.is_some())
        .collect();
    Ok(PreparedData {
        train: to_samples(&train_items, scheme, mode)?,
        val: to_samples(&val_items, scheme, mode)?,
        test: to_samples(&test_items, scheme, mode)?,
        split: idx,
        stats,
        train_sources: kept.iter().map(|it| it.source_id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::WoundClass;
    use crate::numerics::Tensor;

    fn item(label: WoundClass, loc: Option<u16>, i: usize) -> ImageItem {
        ImageItem {
            image: Tensor::full(&[4, 4, 3], 0.1 * i as f64),
            label,
            location_id: loc,
            source_id: i,
            transform: Transform::IDENTITY,
        }
    }

    #[test]
    fn missing_locations_by_mode() {
        let s = ClassScheme::full();
        let xs = vec![item(WoundClass::N, None, 0), item(WoundClass::D, Some(7), 1)];
        let loc = to_samples(&xs, &s, Mode::LocationOnly).unwrap();
        assert_eq!(loc.len(), 1);
        assert!(loc[0].image.is_none());
        let both = to_samples(&xs, &s, Mode::ImageLocation).unwrap();
        assert_eq!(both[0].location.unwrap().id(), 511);
        let img = to_samples(&xs, &s, Mode::ImageOnly).unwrap();
        assert!(img.iter().all(|x| x.location.is_none()));
    }

    #[test]
    fn augmentation_stays_on_train_side() {
        let s = ClassScheme::wound_types();
        let xs: Vec<ImageItem> = (0..20).map(|i| item(s.class(i % 4), Some(i as u16), i)).collect();
        let spec = SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            ..SplitSpec::default()
        };
        let p = prepare_splits(&xs, &s, Mode::ImageLocation, &spec, &AugmentationSpec::default(), 2, Execution::Parallel)
            .unwrap();
        assert_eq!(p.train.len(), 4 * p.split.train.len());
        assert_eq!(p.val.len(), p.split.val.len());
        for src in &p.train_sources {
            assert!(p.split.train.contains(src));
        }
    }
}
