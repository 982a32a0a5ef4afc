use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use cgtn_tensor::{Element, Tensor};
use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// A set of images with one class id per image. Pixel values are kept in
/// [0,1] unless the caller standardizes them explicitly.
#[derive(Debug, Clone)]
pub struct LabeledImageSet<E: Element> {
    images: Tensor<E>,
    labels: Vec<u8>,
    num_classes: usize,
}

impl<E: Element> LabeledImageSet<E> {
    pub fn new(images: Tensor<E>, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(CoreError::Data(format!(
                "image tensor must be [count, channels, height, width], got rank {}",
                images.rank()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(CoreError::Data(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(CoreError::Data(format!(
                "class count {num_classes} out of range"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(CoreError::Data(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            num_classes,
        })
    }

    pub fn images(&self) -> &Tensor<E> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn image_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Flattened pixels of image `i`.
    pub fn image(&self, i: usize) -> &[E] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.count() {
                return Err(CoreError::Data(format!(
                    "index {i} out of range for {} images",
                    self.count()
                )));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(
            vec![indices.len(), self.channels(), self.height(), self.width()],
            data,
        )?;
        LabeledImageSet::new(images, labels, self.num_classes)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    pub fn indices_of_class(&self, class: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Deterministically resamples to exactly `per_class` images of every
    /// class: a seeded shuffle of each class, truncated when the class is
    /// larger and wrapped around when it is smaller.
    pub fn balanced_resample(&self, per_class: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(per_class * self.num_classes);
        for class in 0..self.num_classes {
            let mut pool = self.indices_of_class(class as u8);
            if pool.is_empty() {
                return Err(CoreError::Data(format!("class {class} has no images")));
            }
            shuffle(&mut pool, &mut rng);
            for k in 0..per_class {
                picked.push(pool[k % pool.len()]);
            }
        }
        self.subset(&picked)
    }

    /// Bilinear resize of every image.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let c = self.channels();
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(self.count() * c * out_h * out_w);
        for i in 0..self.count() {
            let img = Tensor::new(vec![c, h, w], self.image(i).to_vec())?;
            let small = bilinear_resize(&img, out_h, out_w)?;
            data.extend_from_slice(small.data());
        }
        let images = Tensor::new(vec![self.count(), c, out_h, out_w], data)?;
        LabeledImageSet::new(images, self.labels.clone(), self.num_classes)
    }

    /// In-place per-channel standardization to zero mean, unit variance.
    /// Returns the (mean, std) pair applied to each channel.
    pub fn standardize_per_channel(&mut self) -> Vec<(f64, f64)> {
        let c = self.channels();
        let plane = self.height() * self.width();
        let per_image = c * plane;
        let count = self.count();
        let mut stats = Vec::with_capacity(c);
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for i in 0..count {
                let base = i * per_image + ch * plane;
                for &v in &self.images.data()[base..base + plane] {
                    let x = v.to_f64();
                    sum += x;
                    sq += x * x;
                }
            }
            let n = (count * plane) as f64;
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            let std = var.sqrt().max(1e-8);
            for i in 0..count {
                let base = i * per_image + ch * plane;
                for v in &mut self.images.data_mut()[base..base + plane] {
                    *v = E::from_f64((v.to_f64() - mean) / std);
                }
            }
            stats.push((mean, std));
        }
        stats
    }

    pub fn cast<T: Element>(&self) -> Result<LabeledImageSet<T>> {
        LabeledImageSet::new(self.images.cast(), self.labels.clone(), self.num_classes)
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// The deterministic permutation [`batch_iter`] walks for a given seed.
pub fn shuffled_indices(count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    order
}

/// Parses an IDX file. Label files (magic 0x00000801) become a 1-D tensor
/// of the raw byte values; image files (magic 0x00000803) become a
/// [count, 1, height, width] tensor scaled by 1/255.
pub fn parse_idx<E: Element>(bytes: &[u8]) -> Result<Tensor<E>> {
    if bytes.len() < 4 {
        return Err(CoreError::Data("IDX file shorter than its magic".into()));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let ndims = match magic {
        0x0000_0801 => 1,
        0x0000_0803 => 3,
        other => {
            return Err(CoreError::Data(format!(
                "unrecognized IDX magic {other:#010x}"
            )))
        }
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(CoreError::Data("IDX header truncated".into()));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let o = 4 + 4 * d;
        dims.push(
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize,
        );
    }
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(CoreError::Data(format!(
            "IDX payload holds {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    if ndims == 1 {
        let data: Vec<E> = payload[..expected]
            .iter()
            .map(|&b| E::from_f64(b as f64))
            .collect();
        Ok(Tensor::new(vec![dims[0]], data)?)
    } else {
        let data: Vec<E> = payload[..expected]
            .iter()
            .map(|&b| E::from_f64(b as f64 / 255.0))
            .collect();
        Ok(Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)?)
    }
}

/// Parses concatenated CIFAR-10 binary records (1 label byte + 3072
/// channel-major pixel bytes each).
pub fn parse_cifar10<E: Element>(bytes: &[u8]) -> Result<LabeledImageSet<E>> {
    const RECORD: usize = 3073;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(CoreError::Data(format!(
            "CIFAR-10 file length {} is not a positive multiple of {RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for r in 0..n {
        let rec = &bytes[r * RECORD..(r + 1) * RECORD];
        labels.push(rec[0]);
        data.extend(rec[1..].iter().map(|&b| E::from_f64(b as f64 / 255.0)));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data)?;
    LabeledImageSet::new(images, labels, 10)
}

/// Bilinear interpolation with half-pixel centers: output pixel i samples
/// the source at (i+0.5)*h/outH - 0.5, clamped to the image.
pub fn bilinear_resize<E: Element>(
    img: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    if img.rank() != 3 {
        return Err(CoreError::Data(format!(
            "resize expects [channels, height, width], got rank {}",
            img.rank()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(CoreError::Data("resize to zero extent".into()));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let coord = |i: usize, out_extent: usize, extent: usize| -> (usize, usize, f64) {
        let s = (i as f64 + 0.5) * extent as f64 / out_extent as f64 - 0.5;
        let s = s.clamp(0.0, (extent - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(extent - 1);
        (lo, hi, s - lo as f64)
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = coord(ox, out_w, w);
                let p = |y: usize, x: usize| plane[y * w + x].to_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(E::from_f64(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Ok(Tensor::new(vec![c, out_h, out_w], out)?)
}

/// Iterator over shuffled minibatches. Every sample appears exactly once
/// per pass; the order is a pure function of the seed.
pub struct BatchIter<'a, E: Element> {
    set: &'a LabeledImageSet<E>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

pub fn batch_iter<E: Element>(
    set: &LabeledImageSet<E>,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<BatchIter<'_, E>> {
    if set.count() == 0 {
        return Err(CoreError::Data("cannot batch an empty set".into()));
    }
    if batch_size == 0 {
        return Err(CoreError::Data("batch size must be at least 1".into()));
    }
    let order = shuffled_indices(set.count(), shuffle_seed);
    Ok(BatchIter {
        set,
        order,
        batch_size,
        cursor: 0,
    })
}

impl<E: Element> Iterator for BatchIter<'_, E> {
    type Item = (Tensor<E>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let n = self.set.image_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.set.image(i));
            labels.push(self.set.labels()[i]);
        }
        let images = Tensor::new(
            vec![
                idx.len(),
                self.set.channels(),
                self.set.height(),
                self.set.width(),
            ],
            data,
        )
        .expect("batch construction cannot mismatch");
        Some((images, labels))
    }
}

const CACHE_MAGIC: &[u8; 4] = b"CGDS";
const CACHE_VERSION: u8 = 1;

impl<E: Element> LabeledImageSet<E> {
    /// Writes the split as a single binary file: a 16-byte header (magic,
    /// version, class count, channels, height, width, image count) then
    /// little-endian f32 pixels and one label byte per image.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 + self.images.numel() * 4 + self.labels.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.push(CACHE_VERSION);
        out.push(self.num_classes as u8);
        out.extend_from_slice(&(self.channels() as u16).to_le_bytes());
        out.extend_from_slice(&(self.height() as u16).to_le_bytes());
        out.extend_from_slice(&(self.width() as u16).to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        for &v in self.images.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 16 || &bytes[0..4] != CACHE_MAGIC {
            return Err(CoreError::Data(format!(
                "{} is not a dataset cache file",
                path.display()
            )));
        }
        if bytes[4] != CACHE_VERSION {
            return Err(CoreError::Data(format!(
                "unsupported cache version {}",
                bytes[4]
            )));
        }
        let num_classes = bytes[5] as usize;
        let c = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let h = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let w = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
        let n = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
        let pixels = n * c * h * w;
        let expected = 16 + pixels * 4 + n;
        if bytes.len() != expected {
            return Err(CoreError::Data(format!(
                "cache file holds {} bytes, header promises {expected}",
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(pixels);
        for i in 0..pixels {
            let o = 16 + i * 4;
            data.push(E::from_f64(f32::from_le_bytes([
                bytes[o],
                bytes[o + 1],
                bytes[o + 2],
                bytes[o + 3],
            ]) as f64));
        }
        let labels = bytes[16 + pixels * 4..].to_vec();
        let images = Tensor::new(vec![n, c, h, w], data)?;
        LabeledImageSet::new(images, labels, num_classes)
    }
}

/// One source file of a dataset: where it comes from and what its bytes
/// must hash to after any gzip layer is stripped.
#[derive(Debug, Clone)]
pub struct FetchFile {
    pub file_name: String,
    pub url: String,
    pub sha256: String,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Default MNIST sources with pinned checksums of the decompressed files.
pub fn mnist_fetch_plan() -> Vec<FetchFile> {
    const BASE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";
    const SHA: [&str; 4] = [
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ];
    MNIST_FILES
        .iter()
        .zip(SHA)
        .map(|(name, sha)| FetchFile {
            file_name: (*name).to_string(),
            url: format!("{BASE}/{name}.gz"),
            sha256: sha.to_string(),
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Holds an advisory lock on a directory for the lifetime of the value.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".cgds.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CoreError::Data(format!(
                    "{} is locked by another run; delete {} if that run is gone",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn http_get(url: &str) -> Result<Vec<u8>> {
    let response = ureq::get(url).call().map_err(|e| CoreError::Network {
        url: url.to_string(),
        message: e.to_string(),
    })?;
    let mut bytes = Vec::new();
    response
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CoreError::Network {
            url: url.to_string(),
            message: e.to_string(),
        })?;
    Ok(bytes)
}

fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Downloads the four MNIST files into `dir`, skipping any whose checksum
/// already matches. Safe to re-run; mismatching files are reported, not
/// silently overwritten.
pub fn fetch_mnist(dir: &Path, plan: &[FetchFile]) -> Result<Vec<PathBuf>> {
    let _lock = DirLock::acquire(dir)?;
    let mut paths = Vec::with_capacity(plan.len());
    for file in plan {
        let target = dir.join(&file.file_name);
        if target.exists() {
            let existing = fs::read(&target)?;
            let got = sha256_hex(&existing);
            if got == file.sha256 {
                paths.push(target);
                continue;
            }
            return Err(CoreError::Checksum {
                file: target.display().to_string(),
                expected: file.sha256.clone(),
                got,
            });
        }
        let raw = maybe_gunzip(http_get(&file.url)?)?;
        let got = sha256_hex(&raw);
        if got != file.sha256 {
            return Err(CoreError::Checksum {
                file: file.url.clone(),
                expected: file.sha256.clone(),
                got,
            });
        }
        fs::write(&target, raw)?;
        paths.push(target);
    }
    Ok(paths)
}

pub const CIFAR10_MEMBERS: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

const CIFAR10_MEMBER_LEN: usize = 30_730_000;

/// Downloads and unpacks the CIFAR-10 binary tarball. The archive checksum
/// comes from the caller (config pins it); member files are verified by
/// length as the format fixes every record at 3073 bytes.
pub fn fetch_cifar10(dir: &Path, url: &str, archive_sha256: Option<&str>) -> Result<Vec<PathBuf>> {
    let _lock = DirLock::acquire(dir)?;
    let mut missing = Vec::new();
    let mut paths = Vec::new();
    for name in CIFAR10_MEMBERS {
        let target = dir.join(name);
        match fs::metadata(&target) {
            Ok(meta) if meta.len() as usize == CIFAR10_MEMBER_LEN => paths.push(target),
            Ok(meta) => {
                return Err(CoreError::Data(format!(
                    "{} is {} bytes, expected {CIFAR10_MEMBER_LEN}",
                    target.display(),
                    meta.len()
                )))
            }
            Err(_) => missing.push(name),
        }
    }
    if missing.is_empty() {
        return Ok(paths);
    }
    let archive = http_get(url)?;
    if let Some(expected) = archive_sha256 {
        let got = sha256_hex(&archive);
        if got != expected {
            return Err(CoreError::Checksum {
                file: url.to_string(),
                expected: expected.to_string(),
                got,
            });
        }
    }
    let wanted: HashMap<&str, PathBuf> =
        CIFAR10_MEMBERS.iter().map(|&n| (n, dir.join(n))).collect();
    let mut archive = tar::Archive::new(GzDecoder::new(&archive[..]));
    let mut written = 0;
    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(target) = wanted.get(name) {
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes)?;
            if bytes.len() != CIFAR10_MEMBER_LEN {
                return Err(CoreError::Data(format!(
                    "archive member {name} is {} bytes, expected {CIFAR10_MEMBER_LEN}",
                    bytes.len()
                )));
            }
            fs::write(target, bytes)?;
            written += 1;
        }
    }
    if written < missing.len() {
        return Err(CoreError::Data(format!(
            "archive at {url} lacks {} of the expected batch files",
            missing.len() - written
        )));
    }
    Ok(CIFAR10_MEMBERS.iter().map(|n| dir.join(n)).collect())
}

/// Loads (train, test) MNIST splits from raw IDX files in `dir`.
pub fn load_mnist<E: Element>(dir: &Path) -> Result<(LabeledImageSet<E>, LabeledImageSet<E>)> {
    let read = |name: &str| -> Result<Vec<u8>> {
        fs::read(dir.join(name)).map_err(|e| {
            CoreError::Data(format!(
                "cannot read {} in {}: {e}; run fetch first",
                name,
                dir.display()
            ))
        })
    };
    let make = |images: &[u8], labels: &[u8]| -> Result<LabeledImageSet<E>> {
        let images = parse_idx::<E>(images)?;
        let label_tensor = parse_idx::<f64>(labels)?;
        let labels: Vec<u8> = label_tensor.data().iter().map(|&v| v as u8).collect();
        LabeledImageSet::new(images, labels, 10)
    };
    let train = make(&read(MNIST_FILES[0])?, &read(MNIST_FILES[1])?)?;
    let test = make(&read(MNIST_FILES[2])?, &read(MNIST_FILES[3])?)?;
    Ok((train, test))
}

/// Loads (train, test) CIFAR-10 splits from the unpacked batch files.
pub fn load_cifar10<E: Element>(dir: &Path) -> Result<(LabeledImageSet<E>, LabeledImageSet<E>)> {
    let mut train_bytes = Vec::new();
    for name in &CIFAR10_MEMBERS[..5] {
        let mut bytes = fs::read(dir.join(name)).map_err(|e| {
            CoreError::Data(format!(
                "cannot read {} in {}: {e}; run fetch first",
                name,
                dir.display()
            ))
        })?;
        train_bytes.append(&mut bytes);
    }
    let train = parse_cifar10(&train_bytes)?;
    let test_bytes = fs::read(dir.join(CIFAR10_MEMBERS[5]))?;
    let test = parse_cifar10(&test_bytes)?;
    Ok((train, test))
}

/// Writes a binary PGM (P5) grayscale image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(CoreError::Data(format!(
            "PGM payload {} does not match {width}x{height}",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Writes a binary PPM (P6) color image from interleaved RGB bytes.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(CoreError::Data(format!(
            "PPM payload {} does not match {width}x{height} RGB",
            rgb.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out)?;
    Ok(())
}
