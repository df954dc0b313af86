//! Deterministic synthetic icon collections. Every collection shares a
//! frame motif and style (stroke width, fill, corner rounding); the inner
//! glyph varies from icon to icon and doubles as the semantic keyword.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::write_pgm;
use super::manifest::{save_manifest, IconRecord, Manifest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INK: f32 = 0.0;
const PAPER: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motif {
    CircleFrame,
    SquareFrame,
    Tag,
    Arrow,
    Notebook,
    Shield,
}

impl Motif {
    pub const ALL: [Motif; 6] = [
        Motif::CircleFrame,
        Motif::SquareFrame,
        Motif::Tag,
        Motif::Arrow,
        Motif::Notebook,
        Motif::Shield,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motif::CircleFrame => "circle-frame",
            Motif::SquareFrame => "square-frame",
            Motif::Tag => "tag",
            Motif::Arrow => "arrow",
            Motif::Notebook => "notebook",
            Motif::Shield => "shield",
        }
    }
}

pub const GLYPHS: [&str; 8] = ["dot", "ring", "plus", "bar", "triangle", "diamond", "star", "house"];

const STROKE_WIDTHS: [f64; 4] = [0.03, 0.05, 0.075, 0.1];
const CORNER_RADII: [f64; 3] = [0.0, 0.08, 0.16];

/// Style shared by a collection. Widths and radii are fractions of the image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub motif: Motif,
    pub stroke_width: f64,
    pub filled: bool,
    pub corner_radius: f64,
    /// Glyph of the collection's first icon; later icons step through [`GLYPHS`].
    pub glyph: usize,
    pub jitter_seed: u64,
}

impl StyleSpec {
    fn same_style(&self, other: &StyleSpec) -> bool {
        self.motif == other.motif
            && self.stroke_width == other.stroke_width
            && self.filled == other.filled
            && self.corner_radius == other.corner_radius
    }
}

pub fn max_collections() -> usize {
    Motif::ALL.len() * STROKE_WIDTHS.len() * 2 * CORNER_RADII.len()
}

/// Motifs cycle over collections; within a motif, (stroke, fill) pairs are
/// taken in a seeded order before corner radii start to vary, so any two
/// collections differ in motif or in at least one style parameter.
pub fn collection_styles(n_collections: usize, seed: u64) -> Result<Vec<StyleSpec>> {
    if n_collections > max_collections() {
        return Err(Error::invalid(format!(
            "at most {} distinct synthetic collections are available",
            max_collections()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_motif: Vec<Vec<(usize, bool)>> = Motif::ALL
        .iter()
        .map(|_| {
            let mut pairs: Vec<(usize, bool)> = (0..STROKE_WIDTHS.len())
                .flat_map(|s| [(s, false), (s, true)])
                .collect();
            pairs.shuffle(&mut rng);
            pairs
        })
        .collect();
    let radius_offset = rng.random_range(0..CORNER_RADII.len());
    let styles: Vec<StyleSpec> = (0..n_collections)
        .map(|c| {
            let m = c % Motif::ALL.len();
            let k = c / Motif::ALL.len();
            let pairs = &per_motif[m];
            let (stroke, filled) = pairs[k % pairs.len()];
            StyleSpec {
                motif: Motif::ALL[m],
                stroke_width: STROKE_WIDTHS[stroke],
                filled,
                corner_radius: CORNER_RADII[(k / pairs.len() + radius_offset) % CORNER_RADII.len()],
                glyph: rng.random_range(0..GLYPHS.len()),
                jitter_seed: rng.random(),
            }
        })
        .collect();
    debug_assert!(styles
        .iter()
        .enumerate()
        .all(|(i, a)| styles[..i].iter().all(|b| !a.same_style(b))));
    Ok(styles)
}

type Pt = (f64, f64);

/// Binary raster; coordinates are in pixels with pixel centers at +0.5.
struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            px: vec![PAPER; size * size],
        }
    }

    /// Even-odd scanline fill sampled at pixel centers.
    fn fill(&mut self, poly: &[Pt], value: f32) {
        let n = poly.len();
        let mut xs = Vec::new();
        for row in 0..self.size {
            let y = row as f64 + 0.5;
            xs.clear();
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                if (a.1 <= y) != (b.1 <= y) {
                    xs.push(a.0 + (y - a.1) / (b.1 - a.1) * (b.0 - a.0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                let start = (span[0] - 0.5).ceil().max(0.0) as usize;
                let end = (span[1] - 0.5).floor().min(self.size as f64 - 1.0);
                if end < 0.0 {
                    continue;
                }
                for col in start..=end as usize {
                    self.px[row * self.size + col] = value;
                }
            }
        }
    }

    /// Paints every pixel whose center lies within `width / 2` of the closed outline.
    fn stroke(&mut self, poly: &[Pt], width: f64, closed: bool, value: f32) {
        let half = width / 2.0;
        let segments = if closed { poly.len() } else { poly.len() - 1 };
        for i in 0..segments {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let lo_x = (a.0.min(b.0) - half - 1.0).floor().max(0.0) as usize;
            let hi_x = ((a.0.max(b.0) + half + 1.0).ceil() as usize).min(self.size);
            let lo_y = (a.1.min(b.1) - half - 1.0).floor().max(0.0) as usize;
            let hi_y = ((a.1.max(b.1) + half + 1.0).ceil() as usize).min(self.size);
            for row in lo_y..hi_y {
                for col in lo_x..hi_x {
                    let p = (col as f64 + 0.5, row as f64 + 0.5);
                    if segment_distance(p, a, b) <= half {
                        self.px[row * self.size + col] = value;
                    }
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        Tensor::new(vec![1, self.size, self.size], self.px).expect("canvas shape")
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (ex, ey) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (ex * ex + ey * ey).sqrt()
}

fn circle(center: Pt, r: f64) -> Vec<Pt> {
    (0..64)
        .map(|i| {
            let t = i as f64 * 2.0 * PI / 64.0;
            (center.0 + r * t.cos(), center.1 + r * t.sin())
        })
        .collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Pt> {
    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
}

/// Replaces each vertex by a circular fillet of radius `r` (clamped so
/// fillets never overlap).
fn round_corners(poly: &[Pt], r: f64) -> Vec<Pt> {
    if r <= 0.0 {
        return poly.to_vec();
    }
    let n = poly.len();
    let mut out = Vec::with_capacity(n * 9);
    for i in 0..n {
        let p = poly[i];
        let a = poly[(i + n - 1) % n];
        let b = poly[(i + 1) % n];
        let (la, lb) = (dist(a, p), dist(b, p));
        let u = ((a.0 - p.0) / la, (a.1 - p.1) / la);
        let v = ((b.0 - p.0) / lb, (b.1 - p.1) / lb);
        let theta = (u.0 * v.0 + u.1 * v.1).clamp(-1.0, 1.0).acos();
        if theta < 1e-6 || PI - theta < 1e-6 {
            out.push(p);
            continue;
        }
        let half_tan = (theta / 2.0).tan();
        let t = (r / half_tan).min(0.45 * la.min(lb));
        let radius = t * half_tan;
        let bis = (u.0 + v.0, u.1 + v.1);
        let bl = (bis.0 * bis.0 + bis.1 * bis.1).sqrt();
        let reach = radius / (theta / 2.0).sin();
        let c = (p.0 + bis.0 / bl * reach, p.1 + bis.1 / bl * reach);
        let t1 = (p.0 + u.0 * t, p.1 + u.1 * t);
        let t2 = (p.0 + v.0 * t, p.1 + v.1 * t);
        let a1 = (t1.1 - c.1).atan2(t1.0 - c.0);
        let mut a2 = (t2.1 - c.1).atan2(t2.0 - c.0);
        let mut sweep = a2 - a1;
        if sweep > PI {
            sweep -= 2.0 * PI;
        } else if sweep < -PI {
            sweep += 2.0 * PI;
        }
        a2 = a1 + sweep;
        for k in 0..=8 {
            let ang = a1 + (a2 - a1) * k as f64 / 8.0;
            out.push((c.0 + radius * ang.cos(), c.1 + radius * ang.sin()));
        }
    }
    out
}

fn dist(a: Pt, b: Pt) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Frame outline in unit coordinates (centered, roughly within ±0.4),
/// plus where the glyph sits and how large it is.
fn frame(motif: Motif) -> (Vec<Pt>, Pt, f64) {
    match motif {
        Motif::CircleFrame => (circle((0.0, 0.0), 0.38), (0.0, 0.0), 0.13),
        Motif::SquareFrame => (rect(-0.34, -0.34, 0.34, 0.34), (0.0, 0.0), 0.13),
        Motif::Tag => (
            vec![(-0.4, 0.0), (-0.18, -0.27), (0.38, -0.27), (0.38, 0.27), (-0.18, 0.27)],
            (0.1, 0.0),
            0.12,
        ),
        Motif::Arrow => (
            vec![(-0.4, -0.15), (0.04, -0.15), (0.04, -0.34), (0.4, 0.0), (0.04, 0.34), (0.04, 0.15), (-0.4, 0.15)],
            (-0.14, 0.0),
            0.085,
        ),
        Motif::Notebook => (rect(-0.3, -0.38, 0.32, 0.38), (0.07, 0.0), 0.13),
        Motif::Shield => (
            vec![(-0.32, -0.36), (0.32, -0.36), (0.32, 0.02), (0.0, 0.4), (-0.32, 0.02)],
            (0.0, -0.06),
            0.12,
        ),
    }
}

/// Glyph polygons in a [-1,1] box.
fn glyph_shapes(glyph: usize) -> Vec<Vec<Pt>> {
    match GLYPHS[glyph % GLYPHS.len()] {
        "dot" => vec![circle((0.0, 0.0), 0.65)],
        "plus" => vec![rect(-0.22, -0.9, 0.22, 0.9), rect(-0.9, -0.22, 0.9, 0.22)],
        "bar" => vec![rect(-0.95, -0.3, 0.95, 0.3)],
        "triangle" => vec![vec![(0.0, -0.85), (0.9, 0.7), (-0.9, 0.7)]],
        "diamond" => vec![vec![(0.0, -0.95), (0.75, 0.0), (0.0, 0.95), (-0.75, 0.0)]],
        "star" => vec![(0..10)
            .map(|i| {
                let r = if i % 2 == 0 { 0.98 } else { 0.42 };
                let t = -PI / 2.0 + i as f64 * PI / 5.0;
                (r * t.cos(), r * t.sin())
            })
            .collect()],
        "house" => vec![vec![(0.0, -0.9), (0.85, -0.1), (0.6, -0.1), (0.6, 0.85), (-0.6, 0.85), (-0.6, -0.1), (-0.85, -0.1)]],
        // ring: outer disk here, the hole is punched in `render_icon`
        _ => vec![circle((0.0, 0.0), 0.8)],
    }
}

/// Renders one icon of `style` with `glyph`; `jitter` supplies the small
/// per-icon placement and scale variation.
pub fn render_icon<R: Rng + ?Sized>(style: &StyleSpec, glyph: usize, size: usize, jitter: &mut R) -> Tensor<f32> {
    let s = size as f64;
    let scale = jitter.random_range(0.92..1.04);
    let offset = (jitter.random_range(-0.03..0.03), jitter.random_range(-0.03..0.03));
    let glyph_shift = (jitter.random_range(-0.02..0.02), jitter.random_range(-0.02..0.02));
    let glyph_turn = jitter.random_range(-0.15..0.15f64);
    let to_px = |p: Pt| ((0.5 + offset.0 + p.0 * scale) * s, (0.5 + offset.1 + p.1 * scale) * s);
    let stroke = style.stroke_width * s;
    let (foreground, background) = if style.filled { (PAPER, INK) } else { (INK, PAPER) };

    let mut canvas = Canvas::new(size);
    let (outline, glyph_at, glyph_scale) = frame(style.motif);
    let outline: Vec<Pt> = round_corners(&outline, style.corner_radius).into_iter().map(to_px).collect();
    if style.filled {
        canvas.fill(&outline, INK);
    } else {
        canvas.stroke(&outline, stroke, true, INK);
    }
    match style.motif {
        Motif::Tag => {
            let hole: Vec<Pt> = circle((-0.2, 0.0), 0.045).into_iter().map(to_px).collect();
            canvas.fill(&hole, foreground);
        }
        Motif::Notebook => {
            let spine: Vec<Pt> = [(-0.18, -0.38), (-0.18, 0.38)].into_iter().map(to_px).collect();
            canvas.stroke(&spine, stroke, false, foreground);
        }
        _ => {}
    }

    let (sin, cos) = glyph_turn.sin_cos();
    let place = |p: Pt| {
        let (x, y) = (p.0 * cos - p.1 * sin, p.0 * sin + p.1 * cos);
        to_px((
            glyph_at.0 + glyph_shift.0 + x * glyph_scale,
            glyph_at.1 + glyph_shift.1 + y * glyph_scale,
        ))
    };
    for shape in glyph_shapes(glyph) {
        let shape: Vec<Pt> = shape.into_iter().map(place).collect();
        canvas.fill(&shape, foreground);
    }
    if GLYPHS[glyph % GLYPHS.len()] == "ring" {
        let hole: Vec<Pt> = circle((0.0, 0.0), 0.4).into_iter().map(place).collect();
        canvas.fill(&hole, background);
    }
    canvas.into_tensor()
}

fn icon_rng(seed: u64, collection: usize, icon: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((collection as u64) << 32) | icon as u64);
    rng
}

pub fn collection_label(index: usize, style: &StyleSpec) -> String {
    format!("c{index:02}-{}", style.motif.name())
}

/// Renders every icon in memory: `(record, image)` pairs in manifest order.
pub fn synthesize(n_collections: usize, per_collection: usize, image_size: usize, seed: u64) -> Result<Vec<(IconRecord, Tensor<f32>)>> {
    if n_collections < 2 || per_collection < 2 {
        return Err(Error::invalid("need at least 2 collections of at least 2 icons"));
    }
    if image_size < 8 {
        return Err(Error::invalid(format!("image size {image_size} is too small to draw on")));
    }
    let styles = collection_styles(n_collections, seed)?;
    let mut out = Vec::with_capacity(n_collections * per_collection);
    for (c, style) in styles.iter().enumerate() {
        for i in 0..per_collection {
            let glyph = (style.glyph + i) % GLYPHS.len();
            let mut rng = icon_rng(style.jitter_seed, c, i);
            let image = render_icon(style, glyph, image_size, &mut rng);
            let id = format!("c{c:02}-{i:03}");
            out.push((
                IconRecord {
                    path: format!("images/{id}.pgm"),
                    id,
                    collection: collection_label(c, style),
                    split: None,
                    keyword: Some(GLYPHS[glyph].to_owned()),
                },
                image,
            ));
        }
    }
    Ok(out)
}

/// Writes `images/*.pgm` and `manifest.jsonl` under `out_dir`.
pub fn generate_synthetic_dataset(
    n_collections: usize,
    per_collection: usize,
    image_size: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let icons = synthesize(n_collections, per_collection, image_size, seed)?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut records = Vec::with_capacity(icons.len());
    for (record, image) in icons {
        write_pgm(&image, out_dir.join(&record.path))?;
        records.push(record);
    }
    let mut manifest = Manifest::new(records, out_dir)?;
    manifest.provenance = Some(format!(
        "synthetic collections={n_collections} per_collection={per_collection} size={image_size} seed={seed}"
    ));
    save_manifest(&manifest, out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Fraction of ink (value < 0.5) pixels.
pub fn ink_ratio(image: &Tensor<f32>) -> f64 {
    image.data().iter().filter(|&&v| v < 0.5).count() as f64 / image.numel() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styles_are_distinct_and_consistent() {
        let styles = collection_styles(max_collections(), 5).unwrap();
        for (i, a) in styles.iter().enumerate() {
            for b in &styles[..i] {
                assert!(!a.same_style(b), "{a:?} vs {b:?}");
            }
        }
        assert!(collection_styles(max_collections() + 1, 5).is_err());
    }

    #[test]
    fn icons_are_binary_with_sane_ink() {
        for (record, image) in synthesize(12, 8, 64, 3).unwrap() {
            assert!(image.data().iter().all(|&v| v == INK || v == PAPER));
            let ink = ink_ratio(&image);
            assert!((0.02..=0.6).contains(&ink), "{} ink {ink}", record.id);
        }
    }

    #[test]
    fn fill_covers_square_exactly() {
        let mut c = Canvas::new(8);
        c.fill(&rect(2.0, 2.0, 6.0, 6.0), INK);
        assert_eq!(c.px.iter().filter(|&&v| v == INK).count(), 16);
    }

    #[test]
    fn rounding_shrinks_area() {
        let mut sharp = Canvas::new(40);
        sharp.fill(&rect(4.0, 4.0, 36.0, 36.0), INK);
        let mut round = Canvas::new(40);
        round.fill(&round_corners(&rect(4.0, 4.0, 36.0, 36.0), 8.0), INK);
        let count = |c: &Canvas| c.px.iter().filter(|&&v| v == INK).count();
        assert!(count(&round) < count(&sharp));
        assert!(count(&round) > count(&sharp) * 9 / 10);
    }

    #[test]
    fn too_small_requests_rejected() {
        assert!(synthesize(1, 5, 64, 0).is_err());
        assert!(synthesize(3, 1, 64, 0).is_err());
    }
}
