//! Seeded synthetic corpus: one random stroke glyph per class, perturbed by
//! rotation, translation and pixel noise.

use super::{CharacterSample, Dataset, LabelSet};
use crate::imaging::SAMPLE_SIZE;
use crate::numerics::{Prng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Augment {
    pub rotation_deg_max: f64,
    /// Standard deviation in `[0, 1]` intensity units.
    pub noise_std: f64,
    pub translate_px_max: u32,
}

impl Augment {
    pub const NONE: Augment = Augment {
        rotation_deg_max: 0.0,
        noise_std: 0.0,
        translate_px_max: 0,
    };
}

const INK: f32 = 0.0;
const BACKGROUND: f32 = 1.0;
const MARGIN: f64 = 10.0;

fn class_seed(seed: u64, class_index: usize) -> u64 {
    let mut p = Prng::new(seed ^ (class_index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    p.next_u64()
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// 5–8 straight strokes of width 2–4 px, dark on light.
fn prototype(rng: &mut Prng) -> Vec<f32> {
    let n = SAMPLE_SIZE;
    let mut canvas = vec![BACKGROUND; n * n];
    let hi = n as f64 - MARGIN;
    let strokes = rng.range_i64(5, 8);
    for _ in 0..strokes {
        let a = (rng.range_f64(MARGIN, hi), rng.range_f64(MARGIN, hi));
        let b = (rng.range_f64(MARGIN, hi), rng.range_f64(MARGIN, hi));
        let half_width = rng.range_i64(2, 4) as f64 / 2.0;
        for y in 0..n {
            for x in 0..n {
                if segment_distance(x as f64 + 0.5, y as f64 + 0.5, a, b) <= half_width {
                    canvas[y * n + x] = INK;
                }
            }
        }
    }
    canvas
}

/// One class prototype per label, as `[1, 50, 50]` tensors.
pub fn prototypes(seed: u64, num_classes: usize) -> Vec<Tensor> {
    (0..num_classes)
        .map(|c| {
            let mut rng = Prng::new(class_seed(seed, c));
            Tensor::from_vec(&[1, SAMPLE_SIZE, SAMPLE_SIZE], prototype(&mut rng))
                .expect("canvas size")
        })
        .collect()
}

fn sample_bilinear(src: &[f32], x: f64, y: f64) -> f32 {
    let n = SAMPLE_SIZE as i64;
    let x0 = x.floor();
    let y0 = y.floor();
    let (tx, ty) = ((x - x0) as f32, (y - y0) as f32);
    let at = |xi: i64, yi: i64| -> f32 {
        if xi < 0 || yi < 0 || xi >= n || yi >= n {
            BACKGROUND
        } else {
            src[(yi * n + xi) as usize]
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let top = at(xi, yi) + (at(xi + 1, yi) - at(xi, yi)) * tx;
    let bottom = at(xi, yi + 1) + (at(xi + 1, yi + 1) - at(xi, yi + 1)) * tx;
    top + (bottom - top) * ty
}

fn perturb(proto: &[f32], aug: &Augment, rng: &mut Prng) -> Vec<f32> {
    let n = SAMPLE_SIZE;
    let angle = rng
        .range_f64(-aug.rotation_deg_max, aug.rotation_deg_max)
        .to_radians();
    let t = i64::from(aug.translate_px_max);
    let (tx, ty) = (rng.range_i64(-t, t) as f64, rng.range_i64(-t, t) as f64);
    let (sin, cos) = angle.sin_cos();
    let c = (n as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            // inverse map: undo translation, then rotation about the center
            let (dx, dy) = (x as f64 - tx - c, y as f64 - ty - c);
            let sx = cos * dx + sin * dy + c;
            let sy = -sin * dx + cos * dy + c;
            out.push(sample_bilinear(proto, sx, sy));
        }
    }
    if aug.noise_std > 0.0 {
        for pair in out.chunks_mut(2) {
            let (z0, z1) = rng.normal_pair();
            pair[0] = (pair[0] + (aug.noise_std * z0) as f32).clamp(0.0, 1.0);
            if let Some(v) = pair.get_mut(1) {
                *v = (*v + (aug.noise_std * z1) as f32).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// `n_per_class` samples for each of the 33 classes, class-major order.
pub fn generate_synthetic(n_per_class: usize, seed: u64, augment: Augment) -> Dataset {
    let labels = LabelSet::tifinagh().clone();
    let protos = prototypes(seed, labels.len());
    let mut samples = Vec::with_capacity(n_per_class * labels.len());
    for (class_index, proto) in protos.iter().enumerate() {
        let mut rng = Prng::new(class_seed(seed, class_index) ^ 0xA076_1D64_78BD_642F);
        for _ in 0..n_per_class {
            let data = perturb(proto.data(), &augment, &mut rng);
            samples.push(CharacterSample {
                tensor: Tensor::from_vec(&[1, SAMPLE_SIZE, SAMPLE_SIZE], data)
                    .expect("canvas size"),
                class_index,
                source: "synthetic".into(),
            });
        }
    }
    Dataset { samples, labels }
}
