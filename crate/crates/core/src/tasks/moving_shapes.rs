use rand::Rng;

use super::TaskError;
use crate::scalar::Scalar;
use crate::scheme::{Sequence, Target};
use crate::tensor::Tensor;

pub const SHAPE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Triangle,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingShapeSample<T> {
    /// `[1, H, W]` per frame.
    pub frames: Vec<Tensor<T>>,
    pub shape: ShapeClass,
    pub direction: Direction,
    /// Top-left corner of the shape's box at frame 0.
    pub origin: (usize, usize),
}

impl<T: Scalar> MovingShapeSample<T> {
    /// `2 · shape + direction`, in `0..4`.
    pub fn label(&self) -> usize {
        joint_label(self.shape, self.direction)
    }

    pub fn into_sequence(self) -> Sequence<T> {
        let label = self.label();
        Sequence {
            frames: self.frames,
            target: Target::Class(label),
        }
    }
}

pub fn joint_label(shape: ShapeClass, direction: Direction) -> usize {
    let s = match shape {
        ShapeClass::Triangle => 0,
        ShapeClass::Circle => 1,
    };
    let d = match direction {
        Direction::Left => 0,
        Direction::Right => 1,
    };
    2 * s + d
}

fn class_of(label: usize) -> (ShapeClass, Direction) {
    let shape = if label / 2 == 0 { ShapeClass::Triangle } else { ShapeClass::Circle };
    let direction = if label % 2 == 0 { Direction::Left } else { Direction::Right };
    (shape, direction)
}

/// `SHAPE_SIZE × SHAPE_SIZE` binary mask, row-major.
pub fn shape_mask(shape: ShapeClass) -> [[bool; SHAPE_SIZE]; SHAPE_SIZE] {
    let mut m = [[false; SHAPE_SIZE]; SHAPE_SIZE];
    let mid = (SHAPE_SIZE / 2) as i64;
    for (r, row) in m.iter_mut().enumerate() {
        for (c, px) in row.iter_mut().enumerate() {
            let (dr, dc) = (r as i64 - mid, c as i64 - mid);
            *px = match shape {
                // apex on top, widening by one pixel each side every two rows
                ShapeClass::Triangle => 2 * dc.abs() <= r as i64,
                ShapeClass::Circle => dr * dr + dc * dc <= 5,
            };
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingShapesConfig {
    pub seq_len: usize,
    pub image_size: usize,
    /// Pixels per frame; the shape wraps around the left and right borders.
    pub speed: usize,
    /// Amplitude of uniform additive noise.
    pub noise: f64,
}

impl Default for MovingShapesConfig {
    fn default() -> Self {
        Self {
            seq_len: 8,
            image_size: 16,
            speed: 1,
            noise: 0.0,
        }
    }
}

/// `n` samples cycling through the four classes, so `n = 4k` gives exactly
/// `k` of each.
pub fn gen_moving_shapes<T: Scalar>(
    n: usize,
    cfg: &MovingShapesConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MovingShapeSample<T>>, TaskError> {
    if cfg.speed == 0 {
        return Err(TaskError::InvalidConfig("speed 0 leaves the motion class undefined".into()));
    }
    if cfg.image_size < SHAPE_SIZE {
        return Err(TaskError::InvalidConfig(format!(
            "image size {} cannot hold a {SHAPE_SIZE}px shape",
            cfg.image_size
        )));
    }
    if cfg.seq_len < 2 {
        return Err(TaskError::InvalidConfig("moving shapes need at least two frames".into()));
    }
    let size = cfg.image_size;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (shape, direction) = class_of(i % 4);
        let mask = shape_mask(shape);
        let x0 = rng.gen_range(0..size);
        let y0 = rng.gen_range(0..=size - SHAPE_SIZE);
        let step = match direction {
            Direction::Left => size - cfg.speed % size,
            Direction::Right => cfg.speed % size,
        };
        let frames = (0..cfg.seq_len)
            .map(|t| {
                let x = (x0 + t * step) % size;
                let mut data = vec![0.0f64; size * size];
                for (r, row) in mask.iter().enumerate() {
                    for (c, &on) in row.iter().enumerate() {
                        if on {
                            data[(y0 + r) * size + (x + c) % size] = 1.0;
                        }
                    }
                }
                if cfg.noise > 0.0 {
                    for v in &mut data {
                        *v += rng.gen_range(-cfg.noise..=cfg.noise);
                    }
                }
                Tensor::from_f64(vec![1, size, size], &data).expect("square frame")
            })
            .collect();
        out.push(MovingShapeSample {
            frames,
            shape,
            direction,
            origin: (y0, x0),
        });
    }
    Ok(out)
}
