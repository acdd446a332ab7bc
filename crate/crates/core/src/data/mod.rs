//! Multi-domain sample handling: mask vectors, generator input assembly,
//! input dropout, subject splits, dataset folder I/O.

pub mod color;
pub mod pnm;
pub mod synth;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One subject's aligned images across all N domains, with availability
/// flags for incomplete sets. Images are (channels, h, w) in [0, 1].
#[derive(Clone)]
pub struct DomainSample<S: Scalar> {
    pub subject_id: String,
    pub images: Vec<Tensor<S>>,
    pub available: Vec<bool>,
}

impl<S: Scalar> DomainSample<S> {
    pub fn n_domains(&self) -> usize {
        self.images.len()
    }

    pub fn is_complete(&self) -> bool {
        self.available.iter().all(|&a| a)
    }
}

/// N-channel one-hot spatial map marking the target domain.
#[derive(Clone)]
pub struct MaskVector<S: Scalar>(Tensor<S>);

impl<S: Scalar> MaskVector<S> {
    pub fn tensor(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.0
    }
}

/// One-hot mask: channel `target` all ones, every other channel all zeros.
pub fn make_mask<S: Scalar>(target: usize, n: usize, h: usize, w: usize) -> Result<MaskVector<S>> {
    if target >= n {
        return Err(Error::invalid(
            "make_mask",
            format!("target domain {target} out of range for {n} domains"),
        ));
    }
    let hw = h * w;
    Ok(MaskVector(Tensor::from_fn(vec![n, h, w], |i| {
        if i / hw == target {
            S::one()
        } else {
            S::zero()
        }
    })))
}

/// Channel-concatenates the sample's domain images in fixed domain order
/// (the target slot, nulled slots, and unavailable slots zero-filled),
/// followed by the target mask. Output shape: (N*channels + N, h, w).
///
/// The target-domain image is never read, whatever its contents.
pub fn assemble_input<S: Scalar>(
    sample: &DomainSample<S>,
    target: usize,
    null_set: &[usize],
) -> Result<Tensor<S>> {
    let n = sample.n_domains();
    if target >= n {
        return Err(Error::invalid(
            "assemble_input",
            format!("target domain {target} out of range for {n} domains"),
        ));
    }
    if let Some(&bad) = null_set.iter().find(|&&d| d >= n) {
        return Err(Error::invalid(
            "assemble_input",
            format!("null_set entry {bad} out of range for {n} domains"),
        ));
    }
    let live = (0..n)
        .filter(|&d| d != target && !null_set.contains(&d) && sample.available[d])
        .count();
    if live == 0 {
        return Err(Error::Data("no information to impute from".into()));
    }
    let reference = sample
        .images
        .iter()
        .enumerate()
        .find(|(d, _)| *d != target && sample.available[*d])
        .map(|(_, img)| img)
        .expect("a live domain exists");
    let (c, h, w) = reference.dims3()?;

    let mut slabs: Vec<Tensor<S>> = Vec::with_capacity(n + 1);
    for d in 0..n {
        let zero_fill = d == target || null_set.contains(&d) || !sample.available[d];
        if zero_fill {
            slabs.push(Tensor::zeros(vec![c, h, w]));
        } else {
            let img = &sample.images[d];
            if img.dims3()? != (c, h, w) {
                return Err(Error::shape("assemble_input", &[c, h, w], img.shape()));
            }
            slabs.push(img.clone());
        }
    }
    slabs.push(make_mask::<S>(target, n, h, w)?.into_tensor());

    let mut data = Vec::with_capacity((n * c + n) * h * w);
    for slab in &slabs {
        data.extend_from_slice(slab.data());
    }
    Tensor::new(vec![n * c + n, h, w], data)
}

/// Draws the set of complement domains to null for one step: each
/// non-target domain independently with probability `rate`, resampled
/// whole if every complement came up nulled.
pub fn input_dropout_sample(
    rng: &mut ChaCha8Rng,
    n: usize,
    target: usize,
    rate: f64,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "input_dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    let complements: Vec<usize> = (0..n).filter(|&d| d != target).collect();
    loop {
        let nulled: Vec<usize> = complements
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < rate)
            .collect();
        if nulled.len() < complements.len() {
            return Ok(nulled);
        }
    }
}

/// Train/validation/test subject-id lists: pairwise disjoint, covering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn contains_train(&self, id: &str) -> bool {
        self.train.iter().any(|s| s == id)
    }
}

/// Deterministic subject-wise split by seeded shuffle and cumulative
/// rounding of the fractions.
pub fn split_by_subject(
    subject_ids: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    if subject_ids.is_empty() {
        return Err(Error::Data("cannot split an empty subject list".into()));
    }
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::Config(format!(
            "split fractions ({ft}, {fv}, {fe}) must be nonnegative and sum to 1"
        )));
    }
    let mut ids = subject_ids.to_vec();
    // Fisher-Yates with a dedicated stream
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let n = ids.len();
    let cut1 = ((n as f64) * ft).round() as usize;
    let cut2 = ((n as f64) * (ft + fv)).round() as usize;
    let cut1 = cut1.min(n);
    let cut2 = cut2.clamp(cut1, n);
    Ok(DatasetSplit {
        train: ids[..cut1].to_vec(),
        validation: ids[cut1..cut2].to_vec(),
        test: ids[cut2..].to_vec(),
    })
}

/// Writes samples as `<root>/<subject_id>/<domain_index>.pgm|ppm` plus a
/// `manifest.txt` recording seed, size, and domain transform names.
pub fn write_dataset<S: Scalar>(
    root: impl AsRef<Path>,
    samples: &[DomainSample<S>],
    domain_names: &[String],
    seed: u64,
    force: bool,
) -> Result<()> {
    let root = root.as_ref();
    if root.exists() {
        let non_empty = fs::read_dir(root)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Data(format!(
                "output directory {} is not empty (use --force to overwrite)",
                root.display()
            )));
        }
    }
    fs::create_dir_all(root)?;
    for sample in samples {
        let dir = root.join(&sample.subject_id);
        fs::create_dir_all(&dir)?;
        for (d, img) in sample.images.iter().enumerate() {
            if !sample.available[d] {
                continue;
            }
            let (c, _, _) = img.dims3()?;
            let ext = if c == 3 { "ppm" } else { "pgm" };
            pnm::write_image(dir.join(format!("{d}.{ext}")), img)?;
        }
    }
    let mut manifest = String::new();
    manifest.push_str(&format!("seed={seed}\n"));
    if let Some(first) = samples.first() {
        let (_, h, w) = first.images[0].dims3()?;
        manifest.push_str(&format!("size={h}x{w}\n"));
    }
    manifest.push_str(&format!("domains={}\n", domain_names.join(",")));
    let ids: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    manifest.push_str(&format!("subjects={}\n", ids.join(",")));
    fs::write(root.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads a dataset folder. Subjects are subdirectories (sorted by name);
/// missing domain files become unavailable slots. Validates uniform shapes.
pub fn load_dataset<S: Scalar>(root: impl AsRef<Path>) -> Result<Vec<DomainSample<S>>> {
    let root = root.as_ref();
    let mut subject_dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    subject_dirs.sort();
    if subject_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no subject directories under {}",
            root.display()
        )));
    }

    // domain count = highest index present anywhere + 1
    let mut n_domains = 0;
    for dir in &subject_dirs {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if let Ok(idx) = stem.parse::<usize>() {
                    match path.extension().and_then(|e| e.to_str()) {
                        Some("pgm") | Some("ppm") => n_domains = n_domains.max(idx + 1),
                        _ => {}
                    }
                }
            }
        }
    }
    if n_domains < 2 {
        return Err(Error::Data(
            "dataset must provide at least 2 domain image slots".into(),
        ));
    }

    let mut samples = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for dir in &subject_dirs {
        let subject_id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let mut images = Vec::with_capacity(n_domains);
        let mut available = Vec::with_capacity(n_domains);
        for d in 0..n_domains {
            let pgm = dir.join(format!("{d}.pgm"));
            let ppm = dir.join(format!("{d}.ppm"));
            let img = if pgm.exists() {
                Some(pnm::read_image::<S>(&pgm)?)
            } else if ppm.exists() {
                Some(pnm::read_image::<S>(&ppm)?)
            } else {
                None
            };
            match img {
                Some(img) => {
                    match &shape {
                        Some(s) if s != img.shape() => {
                            return Err(Error::shape("load_dataset", s, img.shape()));
                        }
                        None => shape = Some(img.shape().to_vec()),
                        _ => {}
                    }
                    images.push(img);
                    available.push(true);
                }
                None => {
                    // placeholder; resized to the dataset shape below
                    images.push(Tensor::zeros(vec![1, 1, 1]));
                    available.push(false);
                }
            }
        }
        samples.push(DomainSample {
            subject_id,
            images,
            available,
        });
    }
    // size unavailable placeholders to the dataset shape
    let shape = shape.ok_or_else(|| Error::Data("dataset contains no images".into()))?;
    for sample in &mut samples {
        for d in 0..sample.images.len() {
            if !sample.available[d] {
                sample.images[d] = Tensor::zeros(shape.clone());
            }
        }
    }
    Ok(samples)
}
