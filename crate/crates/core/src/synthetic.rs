//! Seeded synthetic data: Gaussian class clusters for encoder experiments and
//! a small on-disk image dataset (pictures, proposals, masks, manifest) that
//! exercises the whole pipeline.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedder::{EmbedError, LabeledSet, PatchDescriptor};
use crate::geometry::{write_proposals, BoundingBox, Proposal};
use crate::metrics::Mask;
use crate::pnm::{write_pbm, write_ppm, PnmError, RgbImage};

/// `n` vectors with i.i.d. standard normal entries.
pub fn gaussian_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Isotropic Gaussian clusters, one per class. Centres are drawn from
/// `N(0, center_scale²)` per coordinate, members from `N(centre, noise²)`.
#[derive(Debug, Clone)]
pub struct GaussianClasses {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub center_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl GaussianClasses {
    /// Train and test sets drawn around the same centres. Items are grouped
    /// by class, class `c` carrying label `c`.
    pub fn generate(&self) -> Result<(LabeledSet, LabeledSet), EmbedError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut draw = |per_class: usize| -> Result<LabeledSet, EmbedError> {
            let mut descriptors = Vec::with_capacity(per_class * self.classes);
            let mut labels = Vec::with_capacity(per_class * self.classes);
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    let v = center
                        .iter()
                        .map(|m| m + self.noise * rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<f64>>();
                    descriptors.push(PatchDescriptor::new(v)?);
                    labels.push(c as u32);
                }
            }
            LabeledSet::new(descriptors, labels)
        };
        let train = draw(self.train_per_class)?;
        let test = draw(self.test_per_class)?;
        Ok((train, test))
    }
}

const CLASS_NAMES: [&str; 6] = ["stripes", "bars", "checker", "dots", "rings", "diagonal"];

/// Pictures of textured elliptical objects on noisy backgrounds. Each class
/// has its own texture, so grey-level patches separate the classes; every
/// image gets its own background level and gradient, so only the object
/// recurs across a class.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub classes: usize,
    pub images_per_class: usize,
    /// Images per class marked `test` in the manifest (the last ones).
    pub test_per_class: usize,
    pub image_size: u32,
    pub proposals_per_image: usize,
    pub seed: u64,
}

impl Default for SceneSet {
    fn default() -> Self {
        Self {
            classes: 4,
            images_per_class: 8,
            test_per_class: 2,
            image_size: 64,
            proposals_per_image: 20,
            seed: 0,
        }
    }
}

/// Paths written by [`SceneSet::write_to`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub manifest: PathBuf,
    pub proposals: PathBuf,
    /// Config with small training and index settings for these scenes.
    pub config: PathBuf,
}

/// Bright and dark level of each class texture; the means differ so the
/// classes also separate by overall grey level.
const LEVELS: [(u8, u8); 6] = [
    (240, 210),
    (45, 15),
    (185, 155),
    (90, 60),
    (255, 225),
    (130, 100),
];

fn texture(class: usize, x: u32, y: u32) -> u8 {
    let on = match class % CLASS_NAMES.len() {
        0 => (y / 3) % 2 == 0,
        1 => (x / 3) % 2 == 0,
        2 => ((x / 4) + (y / 4)) % 2 == 0,
        3 => x % 6 < 3 && y % 6 < 3,
        4 => {
            let (dx, dy) = (x as i64 % 8 - 4, y as i64 % 8 - 4);
            dx * dx + dy * dy < 9
        }
        _ => (x + y) / 3 % 2 == 0,
    };
    let (hi, lo) = LEVELS[class % LEVELS.len()];
    if on {
        hi
    } else {
        lo
    }
}

fn in_ellipse(b: &BoundingBox, x: u32, y: u32) -> bool {
    let (cx, cy) = (
        b.x() as f64 + b.width() as f64 / 2.0,
        b.y() as f64 + b.height() as f64 / 2.0,
    );
    let (rx, ry) = (b.width() as f64 / 2.0, b.height() as f64 / 2.0);
    let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

impl SceneSet {
    pub fn class_name(class: usize) -> String {
        let base = CLASS_NAMES[class % CLASS_NAMES.len()];
        if class < CLASS_NAMES.len() {
            base.to_string()
        } else {
            format!("{base}{}", class / CLASS_NAMES.len())
        }
    }

    /// Writes `images/`, `masks/`, `manifest.csv`, `proposals.txt` and
    /// `coseg.conf` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<SceneFiles, PnmError> {
        let size = self.image_size.max(16);
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut manifest =
            String::from("item_id,image_path,class,split,gt_x,gt_y,gt_w,gt_h,gt_mask_path\n");
        let mut proposals = Vec::new();
        for class in 0..self.classes {
            let name = Self::class_name(class);
            for i in 0..self.images_per_class {
                let id = format!("{name}_{i:02}");
                let (w, h) = (
                    rng.random_range(size * 3 / 8..=size / 2),
                    rng.random_range(size * 3 / 8..=size / 2),
                );
                let gt = BoundingBox::new(
                    rng.random_range(0..=(size - w) as i32),
                    rng.random_range(0..=(size - h) as i32),
                    w,
                    h,
                )
                .expect("positive size");
                let mut img = RgbImage::new(size, size, [0; 3]);
                let mut mask = Mask::filled(size, size, false).expect("positive size");
                let tint = [
                    (class * 53 % 64) as u8,
                    (class * 29 % 64) as u8,
                    (class * 71 % 64) as u8,
                ];
                let base: f64 = rng.random_range(40.0..215.0);
                let (gx, gy): (f64, f64) =
                    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for y in 0..size {
                    for x in 0..size {
                        if in_ellipse(&gt, x, y) {
                            let v = texture(class, x - gt.x() as u32, y - gt.y() as u32);
                            img.put(
                                x,
                                y,
                                [
                                    v.saturating_add(tint[0] / 4),
                                    v,
                                    v.saturating_add(tint[2] / 4),
                                ],
                            );
                            mask.set(x, y, true);
                        } else {
                            let ramp = base
                                + gx * x as f64
                                + gy * y as f64
                                + rng.random_range(-15.0..15.0);
                            let n = ramp.clamp(0.0, 255.0) as u8;
                            img.put(x, y, [n, n.saturating_add(rng.random_range(0..20)), n]);
                        }
                    }
                }
                write_ppm(&dir.join(format!("images/{id}.ppm")), &img)?;
                write_pbm(&dir.join(format!("masks/{id}.pbm")), &mask)?;
                let split = if i + self.test_per_class >= self.images_per_class {
                    "test"
                } else {
                    "train"
                };
                writeln!(
                    manifest,
                    "{id},images/{id}.ppm,{name},{split},{},{},{},{},masks/{id}.pbm",
                    gt.x(),
                    gt.y(),
                    gt.width(),
                    gt.height()
                )
                .expect("writing to a String");
                proposals.extend(self.propose(&id, &gt, size, &mut rng));
            }
        }
        let files = SceneFiles {
            manifest: dir.join("manifest.csv"),
            proposals: dir.join("proposals.txt"),
            config: dir.join("coseg.conf"),
        };
        fs::write(&files.manifest, manifest)?;
        let mut buf = Vec::new();
        write_proposals(&mut buf, &proposals).map_err(|e| io::Error::other(e.to_string()))?;
        fs::write(&files.proposals, buf)?;
        fs::write(&files.config, self.config_text())?;
        Ok(files)
    }

    /// Half the proposals jitter the object box, the rest are random boxes
    /// with lower scores.
    fn propose(
        &self,
        id: &str,
        gt: &BoundingBox,
        size: u32,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Proposal> {
        let n_near = self.proposals_per_image.div_ceil(2);
        (0..self.proposals_per_image)
            .map(|j| {
                let (bbox, score, source) = if j < n_near {
                    let jw = (gt.width() as i32 / 6).max(1);
                    let w = (gt.width() as i32 + rng.random_range(-jw..=jw)).max(4) as u32;
                    let h = (gt.height() as i32 + rng.random_range(-jw..=jw)).max(4) as u32;
                    let x = gt.x() + rng.random_range(-jw..=jw);
                    let y = gt.y() + rng.random_range(-jw..=jw);
                    (
                        BoundingBox::new(x, y, w, h),
                        rng.random_range(0.5..1.0),
                        "jitter",
                    )
                } else {
                    let w = rng.random_range(size / 6..=size / 2);
                    let h = rng.random_range(size / 6..=size / 2);
                    let x = rng.random_range(0..=(size - w) as i32);
                    let y = rng.random_range(0..=(size - h) as i32);
                    (
                        BoundingBox::new(x, y, w, h),
                        rng.random_range(0.0..0.6),
                        "random",
                    )
                };
                let score = (score * 1000.0_f64).round() / 1000.0;
                Proposal::new(id, bbox.expect("positive size"), score, source)
                    .expect("score in range")
            })
            .collect()
    }

    fn config_text(&self) -> String {
        format!(
            "# small settings for the synthetic scenes\n\
             seed = {}\n\
             manifest = manifest.csv\n\
             proposals = proposals.txt\n\
             out_dir = out\n\
             train.iterations = 400\n\
             train.batch_size = 32\n\
             train.hidden = 64\n\
             train.embedding_dim = 16\n\
             train.lr = 0.01\n\
             # hard mining collapses the encoder on raw pixel patches this small\n\
             train.mining = random\n\
             index.n_trees = 20\n\
             index.search_k = 200\n\
             retrieve.search_k = 200\n",
            self.seed
        )
    }
}
