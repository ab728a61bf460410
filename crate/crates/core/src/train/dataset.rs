use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{read_pgm, reflect_extend, window};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training patches drawn from a directory of graymaps.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub patches: Vec<Tensor<T>>,
    /// Images that were read successfully.
    pub images: usize,
    /// Files that could not be decoded.
    pub skipped: Vec<PathBuf>,
}

/// Regular files in `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Draws `count` random `size×size` windows. Images smaller than `size` are
/// reflect-extended first.
pub fn random_patches<T: Scalar>(img: &Tensor<T>, size: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<Tensor<T>>> {
    let (_, h, w) = img.dims3()?;
    let ext;
    let src = if h < size || w < size {
        ext = reflect_extend(img, h.max(size), w.max(size))?;
        &ext
    } else {
        img
    };
    let (_, h, w) = src.dims3()?;
    (0..count)
        .map(|_| {
            let y = rng.gen_range(0..=h - size);
            let x = rng.gen_range(0..=w - size);
            window(src, y, x, size)
        })
        .collect()
}

/// Reads every decodable graymap in `dir` (sorted by file name) and cuts
/// `patches_per_image` random patches from each. Undecodable files are
/// logged and skipped.
pub fn load_dataset<T: Scalar>(
    dir: &Path,
    patch_size: usize,
    block_size: usize,
    patches_per_image: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if block_size == 0 || patch_size == 0 || patch_size % block_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} must be a positive multiple of the block size {block_size}"
        )));
    }
    if patches_per_image == 0 {
        return Err(Error::InvalidArgument("patches_per_image must be at least 1".into()));
    }
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("{} contains no files", dir.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Dataset {
        patches: Vec::new(),
        images: 0,
        skipped: Vec::new(),
    };
    for f in files {
        match read_pgm::<T>(&f) {
            Ok(img) => {
                out.patches.extend(random_patches(&img, patch_size, patches_per_image, &mut rng)?);
                out.images += 1;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                out.skipped.push(f);
            }
        }
    }
    if out.images == 0 {
        return Err(Error::Dataset(format!(
            "no readable images in {} ({} files skipped)",
            dir.display(),
            out.skipped.len()
        )));
    }
    Ok(out)
}
