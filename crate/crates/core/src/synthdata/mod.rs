//! Synthetic circle/rectangle image protocols.
//!
//! Two protocols share one outlier class (blue rectangles):
//!
//! | protocol | inlier classes                               |
//! |----------|----------------------------------------------|
//! | `E1`     | blue circle, red rectangle                   |
//! | `E2`     | blue circle, red rectangle, red circle       |
//!
//! Every image is 64×64 RGB on a black background. Shape dimensions are drawn
//! from the integers 10..=30 (a continuous uniform draw rounded to the nearest
//! pixel) and centers from the pixel grid, so shapes may be clipped by the
//! border. Each image has its own generator seeded from the master seed, the
//! class, the split and the index within the split, which makes a dataset a
//! pure function of `(protocol, seed)` and lets E1 and E2 share images for
//! the classes they have in common.

mod image;
mod io;
mod render;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use self::image::Image;
pub use self::io::{
    decode_ppm, encode_ppm, load_dataset, parse_manifest, write_dataset, Manifest, ManifestEntry,
    MANIFEST_FILE,
};
pub use self::render::render_shape;

use crate::error::{Error, Result};
use crate::seed;

pub const IMAGE_SIZE: usize = 64;
pub const CHANNELS: usize = 3;

pub const MIN_EXTENT: u32 = 10;
pub const MAX_EXTENT: u32 = 30;

/// Outline band width in pixels.
pub const OUTLINE_THICKNESS: u32 = 2;

pub const TRAIN_PER_CLASS: usize = 100;
pub const TEST_PER_CLASS: usize = 50;
pub const OUTLIER_TEST: usize = 50;

pub type Rgb = [f32; 3];

pub const BLUE: Rgb = [0.0, 0.0, 1.0];
pub const RED: Rgb = [1.0, 0.0, 0.0];
/// Achromatic color used by the outline-only sets.
pub const WHITE: Rgb = [1.0, 1.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Circle,
    Rectangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fill {
    Filled,
    Outline,
}

impl Fill {
    pub fn name(self) -> &'static str {
        match self {
            Fill::Filled => "filled",
            Fill::Outline => "outline",
        }
    }
}

impl FromStr for Fill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filled" => Ok(Fill::Filled),
            "outline" => Ok(Fill::Outline),
            other => Err(Error::InvalidArgument(format!("unknown fill mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    BlueCircle,
    RedRectangle,
    RedCircle,
    BlueRectangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::BlueCircle,
        ShapeClass::RedRectangle,
        ShapeClass::RedCircle,
        ShapeClass::BlueRectangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::BlueCircle => "blue-circle",
            ShapeClass::RedRectangle => "red-rectangle",
            ShapeClass::RedCircle => "red-circle",
            ShapeClass::BlueRectangle => "blue-rectangle",
        }
    }

    pub fn kind(self) -> ShapeKind {
        match self {
            ShapeClass::BlueCircle | ShapeClass::RedCircle => ShapeKind::Circle,
            ShapeClass::RedRectangle | ShapeClass::BlueRectangle => ShapeKind::Rectangle,
        }
    }

    pub fn color(self) -> Rgb {
        match self {
            ShapeClass::BlueCircle | ShapeClass::BlueRectangle => BLUE,
            ShapeClass::RedRectangle | ShapeClass::RedCircle => RED,
        }
    }

    fn stream_id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Circle { radius: u32 },
    Rectangle { width: u32, height: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub geometry: Geometry,
    pub color: Rgb,
    pub fill: Fill,
    pub center_x: i32,
    pub center_y: i32,
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self.geometry {
            Geometry::Circle { .. } => ShapeKind::Circle,
            Geometry::Rectangle { .. } => ShapeKind::Rectangle,
        }
    }

    /// Draws a filled spec for `class`.
    pub fn sample<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> ShapeSpec {
        let geometry = match class.kind() {
            ShapeKind::Circle => Geometry::Circle {
                radius: sample_extent(rng),
            },
            ShapeKind::Rectangle => Geometry::Rectangle {
                width: sample_extent(rng),
                height: sample_extent(rng),
            },
        };
        let size = IMAGE_SIZE as i32;
        ShapeSpec {
            geometry,
            color: class.color(),
            fill: Fill::Filled,
            center_x: rng.random_range(0..size),
            center_y: rng.random_range(0..size),
        }
    }
}

fn sample_extent<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let v: f64 = rng.random_range(f64::from(MIN_EXTENT)..=f64::from(MAX_EXTENT));
    v.round() as u32
}

/// Samples a spec for a class given by name, e.g. `"blue-circle"`.
pub fn sample_shape_spec(class_id: &str, seed: u64) -> Result<ShapeSpec> {
    let class: ShapeClass = class_id.parse()?;
    Ok(ShapeSpec::sample(class, &mut seed::rng_for(seed, &[])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    E1,
    E2,
}

impl Protocol {
    pub fn inlier_classes(self) -> &'static [ShapeClass] {
        match self {
            Protocol::E1 => &[ShapeClass::BlueCircle, ShapeClass::RedRectangle],
            Protocol::E2 => &[
                ShapeClass::BlueCircle,
                ShapeClass::RedRectangle,
                ShapeClass::RedCircle,
            ],
        }
    }

    pub fn outlier_class(self) -> ShapeClass {
        ShapeClass::BlueRectangle
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::E1 => "E1",
            Protocol::E2 => "E2",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E1" | "e1" => Ok(Protocol::E1),
            "E2" | "e2" => Ok(Protocol::E2),
            other => Err(Error::InvalidArgument(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    TestInlier,
    TestOutlier,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::TestInlier => "test_inlier",
            Role::TestOutlier => "test_outlier",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Role::Train => 0,
            Role::TestInlier => 1,
            Role::TestOutlier => 2,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test_inlier" => Ok(Role::TestInlier),
            "test_outlier" => Ok(Role::TestOutlier),
            other => Err(Error::InvalidArgument(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub class: ShapeClass,
    /// Index of `class` in [`LabeledDataset::classes`].
    pub label: usize,
    pub role: Role,
}

/// Images with labels and split roles.
///
/// `classes` lists the inlier classes in label order followed by the outlier
/// class, so inlier labels are `0..num_known()` and outliers carry label
/// `num_known()`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub protocol: Protocol,
    pub fill: Fill,
    pub seed: u64,
    pub classes: Vec<ShapeClass>,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn num_known(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn split(&self, role: Role) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.role == role)
    }

    pub fn count(&self, role: Role) -> usize {
        self.split(role).count()
    }

    pub fn label_of(&self, class: ShapeClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

struct Job {
    class: ShapeClass,
    label: usize,
    role: Role,
    index: usize,
}

fn generate(protocol: Protocol, seed: u64, fill: Fill) -> LabeledDataset {
    let mut classes = protocol.inlier_classes().to_vec();
    classes.push(protocol.outlier_class());

    let mut jobs = Vec::new();
    for (role, per_class) in [(Role::Train, TRAIN_PER_CLASS), (Role::TestInlier, TEST_PER_CLASS)] {
        for (label, &class) in protocol.inlier_classes().iter().enumerate() {
            jobs.extend((0..per_class).map(|index| Job {
                class,
                label,
                role,
                index,
            }));
        }
    }
    let outlier_label = classes.len() - 1;
    jobs.extend((0..OUTLIER_TEST).map(|index| Job {
        class: protocol.outlier_class(),
        label: outlier_label,
        role: Role::TestOutlier,
        index,
    }));

    let samples = jobs
        .par_iter()
        .map(|job| {
            let mut rng = seed::rng_for(
                seed,
                &[job.class.stream_id(), job.role.stream_id(), job.index as u64],
            );
            let mut spec = ShapeSpec::sample(job.class, &mut rng);
            if fill == Fill::Outline {
                spec.fill = Fill::Outline;
                spec.color = WHITE;
            }
            Sample {
                image: render_shape(&spec, IMAGE_SIZE, IMAGE_SIZE),
                class: job.class,
                label: job.label,
                role: job.role,
            }
        })
        .collect();

    LabeledDataset {
        protocol,
        fill,
        seed,
        classes,
        samples,
    }
}

/// Filled-shape dataset: 100 train and 50 test images per inlier class plus
/// 50 outlier test images.
pub fn generate_protocol(protocol: Protocol, seed: u64) -> LabeledDataset {
    generate(protocol, seed, Fill::Filled)
}

/// The same shapes as [`generate_protocol`] drawn as white outlines, so that
/// only shape distinguishes the classes.
pub fn generate_outline_set(protocol: Protocol, seed: u64) -> LabeledDataset {
    generate(protocol, seed, Fill::Outline)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_round_trip() {
        for class in ShapeClass::ALL {
            assert_eq!(class.name().parse::<ShapeClass>().unwrap(), class);
        }
        assert!(matches!(
            "green-triangle".parse::<ShapeClass>(),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn blue_circle_spec() {
        let spec = sample_shape_spec("blue-circle", 7).unwrap();
        assert_eq!(spec.kind(), ShapeKind::Circle);
        assert_eq!(spec.color, [0.0, 0.0, 1.0]);
        let Geometry::Circle { radius } = spec.geometry else {
            panic!("expected a circle");
        };
        assert!((10..=30).contains(&radius));
        assert_eq!(spec, sample_shape_spec("blue-circle", 7).unwrap());
    }

    #[test]
    fn red_rectangle_spec() {
        for seed in 0..20 {
            let spec = sample_shape_spec("red-rectangle", seed).unwrap();
            assert_eq!(spec.kind(), ShapeKind::Rectangle);
            assert_eq!(spec.color, [1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn unknown_class_rejected() {
        assert!(sample_shape_spec("purple-circle", 1).is_err());
    }

    #[test]
    fn sampled_extents_and_centers_in_range() {
        let mut rng = seed::rng_for(99, &[]);
        let mut seen_min = false;
        let mut seen_max = false;
        for i in 0..10_000 {
            let class = ShapeClass::ALL[i % 4];
            let spec = ShapeSpec::sample(class, &mut rng);
            let extents = match spec.geometry {
                Geometry::Circle { radius } => vec![radius],
                Geometry::Rectangle { width, height } => vec![width, height],
            };
            for e in extents {
                assert!((MIN_EXTENT..=MAX_EXTENT).contains(&e));
                seen_min |= e == MIN_EXTENT;
                seen_max |= e == MAX_EXTENT;
            }
            assert!((0..IMAGE_SIZE as i32).contains(&spec.center_x));
            assert!((0..IMAGE_SIZE as i32).contains(&spec.center_y));
        }
        assert!(seen_min && seen_max);
    }

    #[test]
    fn protocol_counts() {
        let e1 = generate_protocol(Protocol::E1, 3);
        assert_eq!(e1.count(Role::Train), 200);
        assert_eq!(e1.count(Role::TestInlier), 100);
        assert_eq!(e1.count(Role::TestOutlier), 50);
        assert_eq!(e1.num_known(), 2);

        let e2 = generate_protocol(Protocol::E2, 3);
        assert_eq!(e2.count(Role::Train), 300);
        assert_eq!(e2.count(Role::TestInlier), 150);
        assert_eq!(e2.count(Role::TestOutlier), 50);
        for s in e2.split(Role::TestOutlier) {
            assert_eq!(s.class, ShapeClass::BlueRectangle);
            assert_eq!(s.label, 3);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_protocol(Protocol::E2, 11),
            generate_protocol(Protocol::E2, 11)
        );
        assert_ne!(
            generate_protocol(Protocol::E1, 11).samples[0].image,
            generate_protocol(Protocol::E1, 12).samples[0].image
        );
    }

    #[test]
    fn every_image_satisfies_invariants() {
        let ds = generate_protocol(Protocol::E2, 5);
        for s in &ds.samples {
            assert_eq!(s.image.height(), IMAGE_SIZE);
            assert_eq!(s.image.width(), IMAGE_SIZE);
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(ds.classes[s.label], s.class);
        }
    }

    #[test]
    fn outline_set_matches_class_structure() {
        let ds = generate_outline_set(Protocol::E2, 4);
        assert_eq!(ds.num_known(), 3);
        assert_eq!(ds.fill, Fill::Outline);
        let classes: std::collections::HashSet<_> =
            ds.split(Role::TestInlier).map(|s| s.class).collect();
        assert_eq!(classes.len(), 3);
    }

    #[test]
    fn outline_is_much_dimmer_than_filled() {
        let filled = generate_protocol(Protocol::E1, 8);
        let outline = generate_outline_set(Protocol::E1, 8);
        let mut checked = 0;
        for (f, o) in filled.samples.iter().zip(&outline.samples) {
            if f.class != ShapeClass::BlueCircle {
                continue;
            }
            // Per-pixel brightness taken as the maximum channel value.
            assert!(o.image.mean_value() < 0.6 * f.image.mean_value());
            checked += 1;
        }
        assert_eq!(checked, 150);
    }
}
