//! Slice datasets, augmentation, synthetic phantoms and batching.
//!
//! Slices are stored as 16-bit grayscale PNG files listed in a JSON manifest
//! of `{id, path, split}` entries, and are min-max normalized to `[0, 1]` on
//! load.

mod augment;
mod batch;
mod phantom;
mod store;

pub use augment::{augment, elastic, elastic_field, flip_horizontal, rotate, shift, zoom, AugmentSpec};
pub use batch::Batcher;
pub use phantom::{make_phantom, phantom_dataset, PhantomKind};
pub use store::{
    id_seed, load_dataset, normalize_min_max, open_dataset, read_manifest, read_slice, scan_layout, write_png16,
    write_png8, Dataset, ManifestEntry, SliceRecord, Split, AUTO_TRAIN_FRACTION,
};

/// Mixes `base` with `parts` into an independent stream seed (SplitMix64).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
