//! Factor vocabulary and rasterisation of the synthetic shapes.

use crate::error::{Error, Result};

pub const SHAPE_NAMES: [&str; 4] = ["circle", "square", "triangle", "diamond"];
pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "yellow", "magenta", "cyan"];
pub const SIZE_NAMES: [&str; 3] = ["small", "medium", "large"];

/// 8-bit RGB values of the palette, indexed like [`COLOR_NAMES`].
pub const PALETTE: [[u8; 3]; 6] = [
    [220, 30, 30],
    [30, 180, 40],
    [30, 60, 220],
    [235, 215, 30],
    [210, 40, 200],
    [40, 210, 215],
];

/// Base radius per size bucket at a 64 pixel canvas.
const RADII: [f64; 3] = [10.0, 15.0, 20.0];
const BORDER: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Factors {
    pub shape: usize,
    pub fill: usize,
    pub border: usize,
    pub size: usize,
}

/// Corpus configuration: resolution, class count and attribute layout.
///
/// Attribute indices are laid out group by group: shape kinds, fill colours,
/// border colours, size buckets.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub image_size: usize,
    pub num_classes: usize,
    pub num_attributes: usize,
    pub shape_kinds: usize,
    pub fill_colors: usize,
    pub border_colors: usize,
    pub sizes: usize,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec::new(64, 10)
    }
}

impl ShapeSpec {
    pub fn new(image_size: usize, num_classes: usize) -> Self {
        ShapeSpec {
            image_size,
            num_classes,
            num_attributes: 19,
            shape_kinds: 4,
            fill_colors: 6,
            border_colors: 6,
            sizes: 3,
        }
    }

    pub fn factor_values(&self) -> usize {
        self.shape_kinds + self.fill_colors + self.border_colors + self.sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_attributes < self.factor_values() {
            return Err(Error::Spec(format!(
                "{} attributes cannot encode {} factor values",
                self.num_attributes,
                self.factor_values()
            )));
        }
        if self.num_attributes != self.factor_values() {
            return Err(Error::Spec(format!(
                "attribute count {} must equal the factor value count {}",
                self.num_attributes,
                self.factor_values()
            )));
        }
        if self.shape_kinds > SHAPE_NAMES.len()
            || self.fill_colors > COLOR_NAMES.len()
            || self.border_colors > COLOR_NAMES.len()
            || self.sizes > SIZE_NAMES.len()
        {
            return Err(Error::Spec("factor vocabulary exceeds the renderer".into()));
        }
        if self.fill_colors < 2 || self.border_colors < 2 {
            return Err(Error::Spec("need at least two colours per colour factor".into()));
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return Err(Error::Spec(format!(
                "image size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Spec("need at least two classes".into()));
        }
        Ok(())
    }

    pub fn shape_offset(&self) -> usize {
        0
    }

    pub fn fill_offset(&self) -> usize {
        self.shape_kinds
    }

    pub fn border_offset(&self) -> usize {
        self.shape_kinds + self.fill_colors
    }

    pub fn size_offset(&self) -> usize {
        self.shape_kinds + self.fill_colors + self.border_colors
    }

    pub fn fill_attribute(&self, color: usize) -> usize {
        self.fill_offset() + color
    }

    /// Attribute indices of the fill colours.
    pub fn color_attributes(&self) -> std::ops::Range<usize> {
        self.fill_offset()..self.fill_offset() + self.fill_colors
    }

    pub fn attribute_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_attributes);
        names.extend(SHAPE_NAMES[..self.shape_kinds].iter().map(|s| format!("shape_{s}")));
        names.extend(COLOR_NAMES[..self.fill_colors].iter().map(|s| format!("fill_{s}")));
        names.extend(COLOR_NAMES[..self.border_colors].iter().map(|s| format!("border_{s}")));
        names.extend(SIZE_NAMES[..self.sizes].iter().map(|s| format!("size_{s}")));
        names
    }

    /// Deterministic factor assignment for a class id.
    ///
    /// Walks fill colours fastest and rotates the shape by one per full colour
    /// cycle, so the first `shape_kinds * fill_colors` classes have distinct
    /// (shape, fill) pairs.
    pub fn class_factors(&self, class_id: usize) -> Factors {
        let k = class_id;
        let fill = k % self.fill_colors;
        let shape = (k + k / self.fill_colors) % self.shape_kinds;
        let border_step = 1 + k % (self.border_colors - 1);
        let mut border = (fill + border_step) % self.border_colors;
        if border == fill {
            border = (border + 1) % self.border_colors;
        }
        Factors {
            shape,
            fill,
            border,
            size: k % self.sizes,
        }
    }

    pub fn attributes_of(&self, f: &Factors) -> Vec<u8> {
        let mut a = vec![0u8; self.num_attributes];
        a[self.shape_offset() + f.shape] = 1;
        a[self.fill_offset() + f.fill] = 1;
        a[self.border_offset() + f.border] = 1;
        a[self.size_offset() + f.size] = 1;
        a
    }

    /// Inverse of [`ShapeSpec::attributes_of`] for clean one-hot-per-group vectors.
    pub fn factors_of(&self, attrs: &[u8]) -> Option<Factors> {
        let pick = |off: usize, n: usize| {
            let hot: Vec<usize> = (0..n).filter(|&i| attrs[off + i] == 1).collect();
            (hot.len() == 1).then(|| hot[0])
        };
        Some(Factors {
            shape: pick(self.shape_offset(), self.shape_kinds)?,
            fill: pick(self.fill_offset(), self.fill_colors)?,
            border: pick(self.border_offset(), self.border_colors)?,
            size: pick(self.size_offset(), self.sizes)?,
        })
    }

    pub fn border_width(&self) -> f64 {
        BORDER * self.image_size as f64 / 64.0
    }
}

/// Per-sample geometry that does not enter the attribute vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub background: [u8; 3],
}

impl Placement {
    pub fn base_radius(spec: &ShapeSpec, size: usize) -> f64 {
        RADII[size] * spec.image_size as f64 / 64.0
    }
}

pub fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    if r <= 0.0 {
        return false;
    }
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs().max(dy.abs()) <= r * 0.85,
        2 => {
            // Upward triangle inscribed in the circle of radius r.
            let top = -r;
            let bottom = 0.5 * r;
            if dy < top || dy > bottom {
                return false;
            }
            let half_width = (dy - top) / (bottom - top) * r * 0.866 * 1.0;
            dx.abs() <= half_width
        }
        _ => dx.abs() + dy.abs() <= r,
    }
}

/// Pixel classes of a rendered sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Border,
    Fill,
}

pub fn classify_pixel(spec: &ShapeSpec, f: &Factors, p: &Placement, x: usize, y: usize) -> Region {
    let dx = x as f64 + 0.5 - p.cx;
    let dy = y as f64 + 0.5 - p.cy;
    if !inside(f.shape, dx, dy, p.radius) {
        Region::Background
    } else if inside(f.shape, dx, dy, p.radius - spec.border_width()) {
        Region::Fill
    } else {
        Region::Border
    }
}

/// Renders an RGB8 image (row-major, interleaved) and its binary mask.
pub fn render(spec: &ShapeSpec, f: &Factors, p: &Placement) -> (Vec<u8>, Vec<u8>) {
    let s = spec.image_size;
    let mut rgb = Vec::with_capacity(s * s * 3);
    let mut mask = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (color, m) = match classify_pixel(spec, f, p, x, y) {
                Region::Background => (p.background, 0),
                Region::Border => (PALETTE[f.border], 1),
                Region::Fill => (PALETTE[f.fill], 1),
            };
            rgb.extend_from_slice(&color);
            mask.push(m);
        }
    }
    (rgb, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_has_nineteen_attributes() {
        let spec = ShapeSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.attribute_names().len(), 19);
    }

    #[test]
    fn too_few_attributes_is_a_spec_error() {
        let spec = ShapeSpec {
            num_attributes: 12,
            ..ShapeSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn first_24_classes_have_distinct_shape_fill_pairs() {
        let spec = ShapeSpec::new(64, 24);
        let pairs: std::collections::HashSet<_> = (0..24)
            .map(|k| {
                let f = spec.class_factors(k);
                assert_ne!(f.fill, f.border);
                (f.shape, f.fill)
            })
            .collect();
        assert_eq!(pairs.len(), 24);
    }

    #[test]
    fn attributes_round_trip_through_factors() {
        let spec = ShapeSpec::new(64, 20);
        for k in 0..20 {
            let f = spec.class_factors(k);
            let a = spec.attributes_of(&f);
            assert_eq!(a.iter().map(|&v| v as usize).sum::<usize>(), 4);
            assert_eq!(spec.factors_of(&a), Some(f));
        }
    }

    #[test]
    fn every_shape_has_fill_and_border_pixels() {
        let spec = ShapeSpec::default();
        for shape in 0..4 {
            for size in 0..3 {
                let f = Factors { shape, fill: 0, border: 1, size };
                let p = Placement {
                    cx: 32.0,
                    cy: 32.0,
                    radius: Placement::base_radius(&spec, size),
                    background: [200, 200, 200],
                };
                let (_, mask) = render(&spec, &f, &p);
                let fg = mask.iter().filter(|&&m| m == 1).count();
                assert!(fg > 50, "shape {shape} size {size} has {fg} pixels");
            }
        }
    }
}
