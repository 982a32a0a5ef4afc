use std::path::{Path, PathBuf};

use cgtn_tensor::{Element, ReduceKind, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{FlowShape, LayerSpec, Network};
use crate::data::{write_pgm, write_ppm, LabeledImageSet};
use crate::error::{CoreError, Result};
use crate::train::argmax;

/// The divide-and-conquer schedule: per-class image counts level by level
/// and the group size folded at each step. Plans always distill down to a
/// single image per class.
#[derive(Debug, Clone)]
pub struct DistillPlan {
    pub num_classes: usize,
    /// Per-class image count at levels 0..=L.
    pub per_class_counts: Vec<usize>,
    /// Images folded into one at each level transition; length L.
    pub group_sizes: Vec<usize>,
    pub lambda: f64,
    pub steps_per_subset: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl DistillPlan {
    pub fn new(
        num_classes: usize,
        per_class_counts: Vec<usize>,
        group_sizes: Vec<usize>,
        lambda: f64,
        steps_per_subset: usize,
        step_size: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(CoreError::Config("plan needs at least one class".into()));
        }
        if per_class_counts.len() != group_sizes.len() + 1 || group_sizes.is_empty() {
            return Err(CoreError::Config(format!(
                "{} level counts need exactly {} group sizes",
                per_class_counts.len(),
                per_class_counts.len().saturating_sub(1)
            )));
        }
        for (k, &g) in group_sizes.iter().enumerate() {
            if g == 0 || per_class_counts[k] % g != 0 {
                return Err(CoreError::Config(format!(
                    "level {k} holds {} images per class, not divisible by group size {g}",
                    per_class_counts[k]
                )));
            }
            if per_class_counts[k + 1] != per_class_counts[k] / g {
                return Err(CoreError::Config(format!(
                    "level {} count {} should be {}/{g}",
                    k + 1,
                    per_class_counts[k + 1],
                    per_class_counts[k]
                )));
            }
        }
        let product: usize = group_sizes.iter().product();
        if product != per_class_counts[0] {
            return Err(CoreError::Config(format!(
                "group sizes multiply to {product}, level 0 holds {} per class",
                per_class_counts[0]
            )));
        }
        Ok(DistillPlan {
            num_classes,
            per_class_counts,
            group_sizes,
            lambda,
            steps_per_subset,
            step_size,
            seed,
        })
    }

    /// The 6000-per-class MNIST schedule folding 10, 6, 5, 5, then 4.
    pub fn mnist_default(seed: u64) -> Self {
        DistillPlan::new(
            10,
            vec![6000, 600, 100, 20, 4, 1],
            vec![10, 6, 5, 5, 4],
            19.0,
            500,
            1.0,
            seed,
        )
        .expect("schedule arithmetic holds")
    }

    pub fn levels(&self) -> usize {
        self.group_sizes.len()
    }
}

/// How synthetic images are embedded inside the Eq.-style matching loss.
pub enum Embedder {
    /// Flattened pixels, for analytic tests.
    Identity,
    /// A network rebuilt from these specs, freshly initialized per step.
    Specs(Vec<LayerSpec>),
}

/// Fig.-8-style embedding stack: three conv+norm+relu+pool blocks ending
/// in a flat 128-channel feature vector.
pub fn default_embedder_specs() -> Vec<LayerSpec> {
    use crate::arch::LayerKind;
    let mut specs = vec![LayerSpec::conv(3, 3, 128, 1, 1, 3)];
    for i in 0..3 {
        specs.push(LayerSpec::plain(LayerKind::InstNorm));
        specs.push(LayerSpec::plain(LayerKind::Relu));
        specs.push(LayerSpec::avgpool(2, 2));
        if i < 2 {
            specs.push(LayerSpec::conv(3, 3, 128, 1, 1, 1));
        }
    }
    specs.push(LayerSpec::plain(LayerKind::Flatten));
    specs
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Redraw the embedder parameters every step (distribution matching);
    /// false keeps the step-0 embedder for analytic tests.
    pub resample_embedder: bool,
    /// Abort when the loss falls below this, the divergence guard.
    pub loss_floor: f64,
}

impl Default for DistillOptions {
    fn default() -> Self {
        DistillOptions {
            lambda: 19.0,
            steps: 500,
            step_size: 1.0,
            seed: 0,
            resample_embedder: true,
            loss_floor: -1e15,
        }
    }
}

/// Deterministically splits a class-balanced set into subsets that each
/// hold `group_size` images of every class; every image lands in exactly
/// one subset. Each class consumes an identical seeded shuffle stream, so
/// relabeling classes permutes the subsets rather than changing them.
pub fn partition<E: Element>(
    set: &LabeledImageSet<E>,
    group_size: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let hist = set.class_histogram();
    let per_class = hist[0];
    if hist.iter().any(|&h| h != per_class) {
        return Err(CoreError::Data(format!(
            "partition needs a class-balanced set, histogram {hist:?}"
        )));
    }
    if group_size == 0 || per_class % group_size != 0 {
        return Err(CoreError::Data(format!(
            "{per_class} images per class not divisible by group size {group_size}"
        )));
    }
    let num_subsets = per_class / group_size;
    let mut subsets = vec![vec![Vec::with_capacity(group_size); set.num_classes()]; num_subsets];
    for class in 0..set.num_classes() {
        let mut pool = set.indices_of_class(class as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=i);
            pool.swap(i, j);
        }
        for (i, &idx) in pool.iter().enumerate() {
            subsets[i / group_size][class].push(idx);
        }
    }
    Ok(subsets)
}

struct EmbedderNets<E: Element> {
    specs: Option<Vec<LayerSpec>>,
    input_shape: (usize, usize, usize),
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> EmbedderNets<E> {
    fn new(embedder: &Embedder, input_shape: (usize, usize, usize)) -> Result<Self> {
        let specs = match embedder {
            Embedder::Identity => None,
            Embedder::Specs(specs) => {
                let net = Network::<E>::build(specs.clone(), input_shape, 0)?;
                if !matches!(net.shapes().last(), Some(FlowShape::Flat { .. })) {
                    return Err(CoreError::Config(
                        "embedder must end in a flat feature vector (add Flatten)".into(),
                    ));
                }
                Some(specs.clone())
            }
        };
        Ok(EmbedderNets {
            specs,
            input_shape,
            _marker: std::marker::PhantomData,
        })
    }

    fn sample(&self, seed: u64) -> Result<Option<Network<E>>> {
        match &self.specs {
            None => Ok(None),
            Some(specs) => Ok(Some(Network::build(specs.clone(), self.input_shape, seed)?)),
        }
    }
}

fn embed_eval<E: Element>(net: &Option<Network<E>>, images: &Tensor<E>) -> Result<Tensor<E>> {
    match net {
        None => {
            let b = images.shape()[0];
            let n = images.numel() / b;
            Ok(images.reshape(vec![b, n])?)
        }
        Some(net) => Ok(net.eval_with_features(images)?.1),
    }
}

/// Synthesizes one image per class from the given subset by gradient
/// descent on the distribution-matching loss
/// L = sum_a [ lambda d(a,a) - sum_{b != a} d(a,b) ],
/// d(a,b) = sum_i |f(Y_a) - f(X_b_i)|^2, with pixels projected to [0,1]
/// after every step. Returns the images and the final loss.
pub fn distill_subset<E: Element>(
    source: &LabeledImageSet<E>,
    subset: &[Vec<usize>],
    embedder: &Embedder,
    opts: &DistillOptions,
) -> Result<(Tensor<E>, f64)> {
    let n = subset.len();
    if n == 0 || subset.iter().any(|s| s.len() != subset[0].len()) || subset[0].is_empty() {
        return Err(CoreError::Data(
            "subset must hold the same positive number of images for every class".into(),
        ));
    }
    let m = subset[0].len();
    let (c, h, w) = (source.channels(), source.height(), source.width());
    let pix = c * h * w;
    let nets = EmbedderNets::<E>::new(embedder, (c, h, w))?;

    let mut y = Tensor::<E>::zeros(vec![n, c, h, w]);
    for (class, members) in subset.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let dst = &mut y.data_mut()[class * pix..(class + 1) * pix];
        for &i in members {
            for (d, &s) in dst.iter_mut().zip(source.image(i)) {
                *d += s;
            }
        }
        let inv = E::from_f64(1.0 / m as f64);
        for d in dst.iter_mut() {
            let noisy = (*d * inv).to_f64() + rng.gen_range(-0.01..0.01);
            *d = E::from_f64(noisy.clamp(0.0, 1.0));
        }
    }

    let source_batches: Vec<Tensor<E>> = subset
        .iter()
        .map(|members| {
            let mut data = Vec::with_capacity(m * pix);
            for &i in members {
                data.extend_from_slice(source.image(i));
            }
            Ok(Tensor::new(vec![m, c, h, w], data)?)
        })
        .collect::<Result<_>>()?;

    let mut coeff = Tensor::<E>::zeros(vec![n, n]);
    for a in 0..n {
        for b in 0..n {
            coeff.data_mut()[a * n + b] = E::from_f64(if a == b { opts.lambda } else { -1.0 });
        }
    }

    let mut last_loss = f64::NAN;
    for step in 0..opts.steps {
        let embed_seed = if opts.resample_embedder {
            opts.seed
                .wrapping_add(((step + 1) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        } else {
            opts.seed
        };
        let net = nets.sample(embed_seed)?;

        let mut dim = 0;
        let mut s_t = Vec::new();
        let mut t_row = vec![E::zero(); n];
        for (class, batch) in source_batches.iter().enumerate() {
            let f = embed_eval(&net, batch)?;
            dim = f.shape()[1];
            if s_t.is_empty() {
                s_t = vec![E::zero(); dim * n];
            }
            let mut t_acc = 0.0;
            for row in 0..m {
                for (j, &v) in f.data()[row * dim..(row + 1) * dim].iter().enumerate() {
                    s_t[j * n + class] += v;
                    t_acc += v.to_f64() * v.to_f64();
                }
            }
            t_row[class] = E::from_f64(t_acc);
        }

        let mut tape = Tape::new();
        let y_id = tape.param(y.clone());
        let e = match &net {
            None => tape.reshape(y_id, vec![n, pix])?,
            Some(net) => {
                let params = net.insert_params(&mut tape, false);
                net.forward(&mut tape, y_id, &params)?
            }
        };
        let e2 = tape.mul(e, e)?;
        let e2_row = tape.reduce(ReduceKind::Sum, e2, Some(&[1]))?;
        let e2_col = tape.reshape(e2_row, vec![n, 1])?;
        let pull = tape.scale(e2_col, E::from_f64(m as f64))?;
        let st = tape.constant(Tensor::new(vec![dim, n], s_t)?);
        let es = tape.matmul(e, st)?;
        let cross = tape.scale(es, E::from_f64(-2.0))?;
        let t_const = tape.constant(Tensor::new(vec![n], t_row)?);
        let d_partial = tape.add(pull, cross)?;
        let d = tape.add(d_partial, t_const)?;
        let c_const = tape.constant(coeff.clone());
        let weighted = tape.mul(d, c_const)?;
        let loss = tape.sum(weighted)?;
        last_loss = tape.value(loss).item()?.to_f64();
        if !last_loss.is_finite() || last_loss < opts.loss_floor {
            return Err(CoreError::Numeric(format!(
                "distillation diverged at step {step}: loss {last_loss}"
            )));
        }
        tape.backward(loss)?;
        let grad = tape
            .grad_tensor(y_id)
            .ok_or_else(|| CoreError::Numeric("missing image gradient".into()))?;
        let lr = opts.step_size;
        for (p, &g) in y.data_mut().iter_mut().zip(grad.data()) {
            *p = E::from_f64((p.to_f64() - lr * g.to_f64()).clamp(0.0, 1.0));
        }
    }
    Ok((y, last_loss))
}

/// One level of distilled images plus where each came from.
#[derive(Debug, Clone)]
pub struct DistilledSet<E: Element> {
    pub level: usize,
    pub set: LabeledImageSet<E>,
    /// (class, subset id, source indices in the previous level).
    pub provenance: Vec<(usize, usize, Vec<usize>)>,
}

/// Runs the whole schedule: partition, distill every subset, stack the
/// outputs into the next level. `per_level_steps` overrides the plan's
/// per-subset step count level by level. `on_level` sees each finished
/// level, letting callers persist progress.
pub fn run_hierarchy<E: Element>(
    source: &LabeledImageSet<E>,
    plan: &DistillPlan,
    embedder: &Embedder,
    per_level_steps: Option<&[usize]>,
    mut on_level: impl FnMut(&DistilledSet<E>) -> Result<()>,
) -> Result<Vec<DistilledSet<E>>> {
    if source.count() == 0 {
        return Err(CoreError::Data("cannot distill an empty dataset".into()));
    }
    if source.num_classes() != plan.num_classes {
        return Err(CoreError::Config(format!(
            "plan covers {} classes, dataset has {}",
            plan.num_classes,
            source.num_classes()
        )));
    }
    if let Some(steps) = per_level_steps {
        if steps.len() != plan.levels() {
            return Err(CoreError::Config(format!(
                "{} per-level step counts for {} levels",
                steps.len(),
                plan.levels()
            )));
        }
    }
    let mut current = source.balanced_resample(plan.per_class_counts[0], plan.seed)?;
    let mut out = Vec::with_capacity(plan.levels());
    for level in 1..=plan.levels() {
        let group = plan.group_sizes[level - 1];
        let per_class_out = plan.per_class_counts[level];
        let subsets = partition(&current, group, plan.seed.wrapping_add(level as u64))?;
        let (c, h, w) = (current.channels(), current.height(), current.width());
        let pix = c * h * w;
        let mut images = vec![E::zero(); plan.num_classes * per_class_out * pix];
        let mut labels = Vec::with_capacity(plan.num_classes * per_class_out);
        let mut provenance = Vec::new();
        for class in 0..plan.num_classes {
            for _ in 0..per_class_out {
                labels.push(class as u8);
            }
        }
        let steps = per_level_steps
            .map(|s| s[level - 1])
            .unwrap_or(plan.steps_per_subset);
        for (si, subset) in subsets.iter().enumerate() {
            let opts = DistillOptions {
                lambda: plan.lambda,
                steps,
                step_size: plan.step_size,
                seed: plan
                    .seed
                    .wrapping_add((level as u64) << 32)
                    .wrapping_add(si as u64),
                resample_embedder: true,
                loss_floor: -1e15,
            };
            let (y, _) = distill_subset(&current, subset, embedder, &opts)?;
            for class in 0..plan.num_classes {
                let dst_index = class * per_class_out + si;
                images[dst_index * pix..(dst_index + 1) * pix]
                    .copy_from_slice(&y.data()[class * pix..(class + 1) * pix]);
                provenance.push((class, si, subset[class].clone()));
            }
        }
        let set = LabeledImageSet::new(
            Tensor::new(vec![plan.num_classes * per_class_out, c, h, w], images)?,
            labels,
            plan.num_classes,
        )?;
        let distilled = DistilledSet {
            level,
            set,
            provenance,
        };
        on_level(&distilled)?;
        current = distilled.set.clone();
        out.push(distilled);
    }
    Ok(out)
}

/// Writes one level to `dir`: the cache file, a provenance sidecar, and a
/// class-by-count image grid (PGM for 1 channel, PPM for 3).
pub fn save_distilled<E: Element>(dir: &Path, d: &DistilledSet<E>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let cache = dir.join(format!("level{}.cgds", d.level));
    d.set.save_cache(&cache)?;

    let sidecar = dir.join(format!("level{}_provenance.txt", d.level));
    let mut text = format!("level {}\n", d.level);
    for (class, subset, sources) in &d.provenance {
        let ids: Vec<String> = sources.iter().map(|s| s.to_string()).collect();
        text.push_str(&format!(
            "class {class} subset {subset} sources {}\n",
            ids.join(",")
        ));
    }
    std::fs::write(&sidecar, text)?;

    let grid = grid_image(&d.set)?;
    let grid_path = if d.set.channels() == 3 {
        let p = dir.join(format!("level{}_grid.ppm", d.level));
        write_ppm(&p, grid.0, grid.1, &grid.2)?;
        p
    } else {
        let p = dir.join(format!("level{}_grid.pgm", d.level));
        write_pgm(&p, grid.0, grid.1, &grid.2)?;
        p
    };
    Ok(vec![cache, sidecar, grid_path])
}

/// Tiles a class-balanced set into (width, height, bytes): one row per
/// class, images in per-class order. 1-channel sets yield grayscale
/// bytes, 3-channel sets interleaved RGB.
pub fn grid_image<E: Element>(set: &LabeledImageSet<E>) -> Result<(usize, usize, Vec<u8>)> {
    let hist = set.class_histogram();
    let cols = hist[0];
    if cols == 0 || hist.iter().any(|&h| h != cols) {
        return Err(CoreError::Data(format!(
            "grid needs a class-balanced set, histogram {hist:?}"
        )));
    }
    let (c, h, w) = (set.channels(), set.height(), set.width());
    if c != 1 && c != 3 {
        return Err(CoreError::Data(format!(
            "grid supports 1 or 3 channels, got {c}"
        )));
    }
    let rows = set.num_classes();
    let width = cols * w;
    let height = rows * h;
    let mut bytes = vec![0u8; width * height * c];
    let mut per_class_seen = vec![0usize; rows];
    for i in 0..set.count() {
        let class = set.labels()[i] as usize;
        let col = per_class_seen[class];
        per_class_seen[class] += 1;
        let img = set.image(i);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = img[ch * h * w + y * w + x].to_f64().clamp(0.0, 1.0);
                    let b = (v * 255.0).round() as u8;
                    let gy = class * h + y;
                    let gx = col * w + x;
                    bytes[(gy * width + gx) * c + ch] = b;
                }
            }
        }
    }
    Ok((width, height, bytes))
}

#[derive(Debug, Clone)]
pub struct ReferenceReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Test images whose embedding had zero norm, counted as misses.
    pub zero_norm_misses: usize,
}

/// Classifies by the angle between embeddings: each test image takes the
/// class of the reference with the highest cosine similarity. Ties break
/// to the lowest class id.
pub fn classify_by_reference<E: Element>(
    test: &LabeledImageSet<E>,
    references: &LabeledImageSet<E>,
    embedder: &Network<E>,
    chunk: usize,
) -> Result<ReferenceReport> {
    let ref_emb = embedder.eval_with_features(references.images())?.1;
    let dim = ref_emb.shape()[1];
    let r = references.count();
    let mut ref_rows: Vec<Vec<f64>> = Vec::with_capacity(r);
    for i in 0..r {
        let row: Vec<f64> = ref_emb.data()[i * dim..(i + 1) * dim]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        ref_rows.push(if norm > 0.0 {
            row.iter().map(|v| v / norm).collect()
        } else {
            vec![0.0; dim]
        });
    }
    let k = test.num_classes();
    let mut correct = 0;
    let mut zero_norm = 0;
    let n = test.count();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = test.subset(&idx)?;
        let emb = embedder.eval_with_features(batch.images())?.1;
        for (row, &label) in batch.labels().iter().enumerate() {
            let e = &emb.data()[row * dim..(row + 1) * dim];
            let norm = e.iter().map(|&v| v.to_f64().powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero_norm += 1;
                continue;
            }
            let mut best_per_class = vec![f64::NEG_INFINITY; k];
            for (ri, rrow) in ref_rows.iter().enumerate() {
                let dot: f64 = e
                    .iter()
                    .zip(rrow)
                    .map(|(&a, b)| a.to_f64() * b)
                    .sum::<f64>()
                    / norm;
                let class = references.labels()[ri] as usize;
                if dot > best_per_class[class] {
                    best_per_class[class] = dot;
                }
            }
            if argmax(&best_per_class) == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(ReferenceReport {
        accuracy: correct as f64 / n as f64,
        correct,
        total: n,
        zero_norm_misses: zero_norm,
    })
}

/// Accuracy of predicting the nearest class pixel-mean, the baseline the
/// reference classifier must beat.
pub fn nearest_mean_pixel_accuracy<E: Element>(
    train: &LabeledImageSet<E>,
    test: &LabeledImageSet<E>,
) -> Result<f64> {
    let k = train.num_classes();
    let pix = train.image_len();
    let mut means = vec![vec![0.0f64; pix]; k];
    let mut counts = vec![0usize; k];
    for i in 0..train.count() {
        let class = train.labels()[i] as usize;
        counts[class] += 1;
        for (m, &v) in means[class].iter_mut().zip(train.image(i)) {
            *m += v.to_f64();
        }
    }
    for (mean, &count) in means.iter_mut().zip(&counts) {
        if count == 0 {
            return Err(CoreError::Data("a class has no training images".into()));
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
    }
    let mut correct = 0;
    for i in 0..test.count() {
        let img = test.image(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (class, mean) in means.iter().enumerate() {
            let d: f64 = img
                .iter()
                .zip(mean)
                .map(|(&v, m)| (v.to_f64() - m).powi(2))
                .sum();
            if d < best_d {
                best_d = d;
                best = class;
            }
        }
        if best == test.labels()[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.count() as f64)
}

/// Residual conv classifier used as the desk-scale reference embedder.
pub fn reference_embedder_specs() -> Vec<LayerSpec> {
    use crate::arch::LayerKind;
    let mut specs = vec![
        LayerSpec::conv(3, 3, 32, 1, 1, 1),
        LayerSpec::plain(LayerKind::InstNorm),
        LayerSpec::plain(LayerKind::Relu),
        LayerSpec::avgpool(2, 2),
    ];
    for _ in 0..2 {
        specs.push(LayerSpec::plain(LayerKind::ResidualBegin));
        specs.push(LayerSpec::conv(3, 3, 32, 1, 1, 1));
        specs.push(LayerSpec::plain(LayerKind::InstNorm));
        specs.push(LayerSpec::plain(LayerKind::Relu));
        specs.push(LayerSpec::conv(3, 3, 32, 1, 1, 1));
        specs.push(LayerSpec::plain(LayerKind::InstNorm));
        specs.push(LayerSpec::plain(LayerKind::ResidualEnd));
        specs.push(LayerSpec::plain(LayerKind::Relu));
        specs.push(LayerSpec::avgpool(2, 2));
    }
    specs.push(LayerSpec::plain(LayerKind::Flatten));
    specs.push(LayerSpec::linear(10));
    specs
}
