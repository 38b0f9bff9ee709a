//! Seeded synthetic bi-temporal scenes.
//!
//! Each scene has a smooth textured background and 3 to 8 non-overlapping
//! axis-aligned rectangular buildings at time 1. Every building changes with
//! probability `change_prob`: it is removed, translated, or joined by a new
//! building at time 2. The change mask is `m1 XOR m2`. Scene `i` draws from
//! its own random stream, so a scene does not depend on how many others are
//! generated.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::{LABEL_DIRS, MANIFEST};
use crate::io::netpbm::{write_mask, write_raster};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub min_buildings: usize,
    pub max_buildings: usize,
    pub change_prob: f64,
    pub texture_amplitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 42,
            count: 200,
            size: 64,
            min_buildings: 3,
            max_buildings: 8,
            change_prob: 0.4,
            texture_amplitude: 0.08,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    /// True when the rectangles overlap or touch.
    fn near(&self, o: &Rect) -> bool {
        self.y < o.y + o.h + 1
            && o.y < self.y + self.h + 1
            && self.x < o.x + o.w + 1
            && o.x < self.x + self.w + 1
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.h).contains(&y) && (self.x..self.x + self.w).contains(&x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Building {
    pub rect: Rect,
    pub color: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Change {
    Removed,
    Translated,
    Added,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub t1: Vec<Building>,
    pub t2: Vec<Building>,
    pub changes: Vec<Change>,
    pub img_t1: Tensor<f32>,
    pub img_t2: Tensor<f32>,
    pub m1: Tensor<f32>,
    pub m2: Tensor<f32>,
    pub m_cd: Tensor<f32>,
}

fn roof_color(rng: &mut Rng) -> [f64; 3] {
    let base = rng.uniform_in(0.6, 0.95);
    [0, 1, 2].map(|_| (base + rng.uniform_in(-0.15, 0.05)).clamp(0.0, 1.0))
}

fn random_rect(rng: &mut Rng, size: usize, max_side: usize) -> Rect {
    let h = rng.int_in(4, max_side);
    let w = rng.int_in(4, max_side);
    Rect {
        y: rng.int_in(0, size - h),
        x: rng.int_in(0, size - w),
        h,
        w,
    }
}

/// Place a random rectangle clear of `taken`, shrinking after repeated failures.
fn place(rng: &mut Rng, size: usize, taken: &[Rect]) -> Option<Rect> {
    let mut max_side = (size / 4).max(4);
    for attempt in 0..400 {
        if attempt % 100 == 99 {
            max_side = (max_side * 3 / 4).max(4);
        }
        let r = random_rect(rng, size, max_side);
        if taken.iter().all(|t| !r.near(t)) {
            return Some(r);
        }
    }
    None
}

/// Background of low-frequency sinusoids plus per-pixel noise.
fn background(rng: &mut Rng, size: usize, amplitude: f64) -> [Vec<f64>; 3] {
    let base = [
        rng.uniform_in(0.25, 0.4),
        rng.uniform_in(0.3, 0.45),
        rng.uniform_in(0.2, 0.35),
    ];
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform_in(0.05, 0.3),
                rng.uniform_in(0.05, 0.3),
                rng.uniform_in(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    base.map(|b| {
        let mut plane = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let smooth: f64 = waves
                    .iter()
                    .map(|&(fy, fx, ph)| (fy * y as f64 + fx * x as f64 + ph).sin())
                    .sum();
                plane.push(
                    b + amplitude * smooth / 3.0 + amplitude * 0.5 * rng.uniform_in(-1.0, 1.0),
                );
            }
        }
        plane
    })
}

fn render(
    bg: &[Vec<f64>; 3],
    buildings: &[Building],
    size: usize,
    shift: f64,
    rng: &mut Rng,
) -> (Tensor<f32>, Tensor<f32>) {
    let mut img = Tensor::zeros(Shape::new(1, 3, size, size));
    let mut mask = Tensor::zeros(Shape::new(1, 1, size, size));
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let roof = buildings.iter().find(|b| b.rect.contains(y, x));
            let noise = 0.02 * rng.uniform_in(-1.0, 1.0);
            for c in 0..3 {
                let v = match roof {
                    Some(b) => b.color[c] + noise,
                    None => bg[c][i] + shift + noise,
                };
                // Quantise now so the stored raster is exactly what was generated.
                img.data_mut()[c * size * size + i] =
                    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
            }
            if roof.is_some() {
                mask.data_mut()[i] = 1.0;
            }
        }
    }
    (img, mask)
}

/// Scene `index` of `spec`.
pub fn generate_scene(spec: &SynthSpec, index: u64) -> Scene {
    let size = spec.size;
    let mut rng = Rng::with_stream(spec.seed, index);
    let k = rng.int_in(spec.min_buildings, spec.max_buildings);
    let mut t1: Vec<Building> = Vec::with_capacity(k);
    for _ in 0..k {
        let taken: Vec<Rect> = t1.iter().map(|b| b.rect).collect();
        if let Some(rect) = place(&mut rng, size, &taken) {
            t1.push(Building {
                rect,
                color: roof_color(&mut rng),
            });
        }
    }

    let mut kept = Vec::new();
    let mut pending = Vec::new();
    let mut changes = Vec::new();
    for b in &t1 {
        if rng.bernoulli(spec.change_prob) {
            let change = match rng.int_in(0, 2) {
                0 => Change::Removed,
                1 => Change::Translated,
                _ => Change::Added,
            };
            changes.push(change);
            match change {
                Change::Removed => {}
                Change::Translated => pending.push(Some(*b)),
                Change::Added => {
                    kept.push(*b);
                    pending.push(None);
                }
            }
        } else {
            kept.push(*b);
        }
    }
    let mut t2 = kept;
    for p in pending {
        let taken: Vec<Rect> = t2.iter().map(|b| b.rect).collect();
        match p {
            Some(b) => {
                // Move by at least 3 pixels along some axis, staying clear of the others.
                for _ in 0..100 {
                    let dy = rng.int_in(0, 16) as isize - 8;
                    let dx = rng.int_in(0, 16) as isize - 8;
                    if dy.abs().max(dx.abs()) < 3 {
                        continue;
                    }
                    let y = b.rect.y as isize + dy;
                    let x = b.rect.x as isize + dx;
                    if y < 0
                        || x < 0
                        || y as usize + b.rect.h > size
                        || x as usize + b.rect.w > size
                    {
                        continue;
                    }
                    let rect = Rect {
                        y: y as usize,
                        x: x as usize,
                        ..b.rect
                    };
                    if taken.iter().all(|t| !rect.near(t)) {
                        t2.push(Building { rect, ..b });
                        break;
                    }
                }
            }
            None => {
                if let Some(rect) = place(&mut rng, size, &taken) {
                    t2.push(Building {
                        rect,
                        color: roof_color(&mut rng),
                    });
                }
            }
        }
    }

    let bg = background(&mut rng, size, spec.texture_amplitude);
    let (img_t1, m1) = render(&bg, &t1, size, 0.0, &mut rng);
    let shift = rng.uniform_in(-0.04, 0.04);
    let (img_t2, m2) = render(&bg, &t2, size, shift, &mut rng);
    let xor = m1
        .data()
        .iter()
        .zip(m2.data())
        .map(|(&a, &b)| if a != b { 1.0 } else { 0.0 })
        .collect();
    let m_cd = Tensor::from_vec(m1.shape(), xor).expect("mask shape");
    Scene {
        t1,
        t2,
        changes,
        img_t1,
        img_t2,
        m1,
        m2,
        m_cd,
    }
}

/// Write scenes `offset .. offset + spec.count` as split `split` under `root`.
pub fn gen_synth(spec: &SynthSpec, root: &Path, split: &str, offset: u64) -> Result<()> {
    if spec.size < 16 || spec.min_buildings == 0 || spec.min_buildings > spec.max_buildings {
        return Err(Error::Config(format!("unusable synthetic spec {spec:?}")));
    }
    let dir = root.join(split);
    for sub in ["t1", "t2"].iter().chain(LABEL_DIRS.iter()) {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let width = (offset as usize + spec.count)
        .max(1)
        .to_string()
        .len()
        .max(4);
    let mut manifest = String::new();
    for i in 0..spec.count as u64 {
        let index = offset + i;
        let id = format!("scene_{index:0width$}");
        let s = generate_scene(spec, index);
        write_raster(&dir.join("t1").join(format!("{id}.ppm")), &s.img_t1)?;
        write_raster(&dir.join("t2").join(format!("{id}.ppm")), &s.img_t2)?;
        for (name, m) in LABEL_DIRS.iter().zip([&s.m1, &s.m2, &s.m_cd]) {
            write_mask(&dir.join(name).join(format!("{id}.pgm")), m)?;
        }
        manifest.push_str(&format!("{id} 1 1 1\n"));
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn building_counts_in_range() {
        let spec = SynthSpec {
            size: 64,
            ..SynthSpec::default()
        };
        for i in 0..1000 {
            let s = generate_scene(&spec, i);
            assert!(
                (3..=8).contains(&s.t1.len()),
                "scene {i}: {} buildings",
                s.t1.len()
            );
        }
    }

    #[test]
    fn change_mask_is_xor() {
        let spec = SynthSpec::default();
        for i in 0..50 {
            let s = generate_scene(&spec, i);
            for ((&a, &b), &c) in s.m1.data().iter().zip(s.m2.data()).zip(s.m_cd.data()) {
                assert_eq!(c, if a != b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn buildings_never_touch() {
        let spec = SynthSpec::default();
        for i in 0..200 {
            let s = generate_scene(&spec, i);
            for set in [&s.t1, &s.t2] {
                for (a, ra) in set.iter().enumerate() {
                    for rb in &set[a + 1..] {
                        assert!(!ra.rect.near(&rb.rect));
                    }
                }
            }
        }
    }

    #[test]
    fn scenes_are_deterministic_and_independent_of_count() {
        let spec = SynthSpec::default();
        let a = generate_scene(&spec, 7);
        let b = generate_scene(
            &SynthSpec {
                count: 3,
                ..spec.clone()
            },
            7,
        );
        assert_eq!(a.img_t1, b.img_t1);
        assert_eq!(a.img_t2, b.img_t2);
        assert_ne!(generate_scene(&spec, 8).img_t1, a.img_t1);
    }

    #[test]
    fn some_scenes_change() {
        let spec = SynthSpec::default();
        let changed = (0..100)
            .filter(|&i| generate_scene(&spec, i).m_cd.sum() > 0.0)
            .count();
        assert!(changed > 60, "{changed}");
    }
}
