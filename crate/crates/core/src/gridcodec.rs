//! Four-overlapping-grid geometry.
//!
//! The main, horizontal, vertical and center grids are realized as the four
//! parity classes of one `(2·S_m − 1)²` lattice whose cells are
//! `cell_size × cell_size` pixel windows placed with stride `cell_size / 2`.
//! Lattice position `(row, col)` belongs to
//!
//! | row  | col  | grid       | cells       |
//! |------|------|------------|-------------|
//! | even | even | main       | `S_m × S_m` |
//! | even | odd  | horizontal | `S_m × S_a` |
//! | odd  | even | vertical   | `S_a × S_m` |
//! | odd  | odd  | center     | `S_a × S_a` |
//!
//! with `S_a = S_m − 1`. All lattice arrays are row-major `[row][col]`.

use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum clipped length (pixels) for a cell to count as positive.
pub const DEFAULT_MIN_PIECE_LEN: f64 = 2.0;

/// A straight line segment in continuous image coordinates.
///
/// The origin is the top-left image corner, `x` grows rightward and `y`
/// downward. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`. A segment and its
/// endpoint-swapped twin describe the same geometric object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl LineSegment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            x1,
            y1,
            x2,
            y2,
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn length(&self) -> f64 {
        (self.x2 - self.x1).hypot(self.y2 - self.y1)
    }

    /// The same segment with its endpoints exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x1: self.x2,
            y1: self.y2,
            x2: self.x1,
            y2: self.y1,
            confidence: self.confidence,
        }
    }

    /// Coordinates finite and confidence (when present) inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.coords().iter().all(|v| v.is_finite())
            && self
                .confidence
                .is_none_or(|c| (0.0..=1.0).contains(&c))
    }

    /// Maximum endpoint deviation from `other`, minimized over both endpoint orders.
    pub fn order_free_distance(&self, other: &LineSegment) -> f64 {
        let direct = max_abs_diff(self.coords(), other.coords());
        let crossed = max_abs_diff(self.swapped().coords(), other.coords());
        direct.min(crossed)
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        (
            self.x1 + t * (self.x2 - self.x1),
            self.y1 + t * (self.y2 - self.y1),
        )
    }
}

fn max_abs_diff(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

/// Axis-aligned closed box `[x0, x0 + width] × [y0, y0 + height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBox {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl CellBox {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.height
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1() && y >= self.y0 && y <= self.y1()
    }
}

/// One of the four overlapping grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityClass {
    Main,
    Horizontal,
    Vertical,
    Center,
}

impl ParityClass {
    pub const ALL: [ParityClass; 4] = [
        ParityClass::Main,
        ParityClass::Horizontal,
        ParityClass::Vertical,
        ParityClass::Center,
    ];

    pub fn of(row: usize, col: usize) -> Self {
        match (row % 2, col % 2) {
            (0, 0) => ParityClass::Main,
            (0, _) => ParityClass::Horizontal,
            (_, 0) => ParityClass::Vertical,
            _ => ParityClass::Center,
        }
    }

    pub fn letter(self) -> char {
        match self {
            ParityClass::Main => 'M',
            ParityClass::Horizontal => 'H',
            ParityClass::Vertical => 'V',
            ParityClass::Center => 'C',
        }
    }

    fn bit(self) -> u8 {
        match self {
            ParityClass::Main => 1,
            ParityClass::Horizontal => 2,
            ParityClass::Vertical => 4,
            ParityClass::Center => 8,
        }
    }
}

/// A non-empty subset of the four grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSet(u8);

impl GridSet {
    pub const ALL: GridSet = GridSet(0b1111);
    pub const MAIN: GridSet = GridSet(0b0001);

    pub fn new(classes: &[ParityClass]) -> Result<Self> {
        let bits = classes.iter().fold(0u8, |acc, c| acc | c.bit());
        if bits == 0 {
            return Err(Error::Config(
                "grid selection must contain at least one parity class".into(),
            ));
        }
        Ok(GridSet(bits))
    }

    /// Parses letter codes such as `"M"`, `"MH"` or `"MHVC"` (any order).
    pub fn parse(code: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for ch in code.chars() {
            let class = match ch.to_ascii_uppercase() {
                'M' => ParityClass::Main,
                'H' => ParityClass::Horizontal,
                'V' => ParityClass::Vertical,
                'C' => ParityClass::Center,
                other => {
                    return Err(Error::Config(format!(
                        "unknown grid letter '{other}' in \"{code}\" (expected M, H, V or C)"
                    )))
                }
            };
            classes.push(class);
        }
        Self::new(&classes)
    }

    pub fn contains(self, class: ParityClass) -> bool {
        self.0 & class.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn classes(self) -> impl Iterator<Item = ParityClass> {
        ParityClass::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    pub fn admits(self, row: usize, col: usize) -> bool {
        self.contains(ParityClass::of(row, col))
    }
}

impl fmt::Display for GridSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.classes() {
            write!(f, "{}", c.letter())?;
        }
        Ok(())
    }
}

impl Default for GridSet {
    fn default() -> Self {
        GridSet::ALL
    }
}

impl Serialize for GridSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GridSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        GridSet::parse(&code).map_err(serde::de::Error::custom)
    }
}

/// A position on the combined four-grid lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticePosition {
    pub row: usize,
    pub col: usize,
}

impl LatticePosition {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn class(&self) -> ParityClass {
        ParityClass::of(self.row, self.col)
    }
}

/// Geometry of the four overlapping grids over a square image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub image_width: usize,
    pub image_height: usize,
    pub cell_size: usize,
    pub stride: usize,
    /// Cells per axis in the main grid (`S_m`).
    pub main_cells: usize,
    /// Cells per axis of the auxiliary grids (`S_a = S_m − 1`).
    pub aux_cells: usize,
    pub lattice_rows: usize,
    pub lattice_cols: usize,
}

impl GridSpec {
    /// Builds the grid for a square `image_size × image_size` input.
    pub fn new(image_size: usize, cell_size: usize) -> Result<Self> {
        if cell_size == 0 || cell_size % 2 != 0 {
            return Err(Error::Config(format!(
                "cell_size must be even and positive, got {cell_size}"
            )));
        }
        if image_size < cell_size {
            return Err(Error::Config(format!(
                "image_size {image_size} is smaller than cell_size {cell_size}"
            )));
        }
        if image_size % cell_size != 0 {
            return Err(Error::Config(format!(
                "image_size {image_size} is not divisible by cell_size {cell_size}"
            )));
        }
        let main_cells = image_size / cell_size;
        let side = 2 * main_cells - 1;
        Ok(Self {
            image_width: image_size,
            image_height: image_size,
            cell_size,
            stride: cell_size / 2,
            main_cells,
            aux_cells: main_cells - 1,
            lattice_rows: side,
            lattice_cols: side,
        })
    }

    /// Like [`GridSpec::new`] but rejects non-square images.
    pub fn for_image(width: usize, height: usize, cell_size: usize) -> Result<Self> {
        if width != height {
            return Err(Error::Config(format!(
                "image must be square, got {width}x{height}; pad or crop first"
            )));
        }
        Self::new(width, cell_size)
    }

    pub fn lattice_len(&self) -> usize {
        self.lattice_rows * self.lattice_cols
    }

    pub fn positions(&self) -> impl Iterator<Item = LatticePosition> + '_ {
        (0..self.lattice_rows)
            .flat_map(move |r| (0..self.lattice_cols).map(move |c| LatticePosition::new(r, c)))
    }

    /// Number of lattice positions in `class`.
    pub fn class_cardinality(&self, class: ParityClass) -> usize {
        let (m, a) = (self.main_cells, self.aux_cells);
        match class {
            ParityClass::Main => m * m,
            ParityClass::Horizontal => m * a,
            ParityClass::Vertical => a * m,
            ParityClass::Center => a * a,
        }
    }

    /// Pixel box of the cell at `pos`.
    pub fn cell_box(&self, pos: LatticePosition) -> Result<CellBox> {
        if pos.row >= self.lattice_rows || pos.col >= self.lattice_cols {
            return Err(Error::Index(format!(
                "lattice position ({}, {}) outside {}x{} lattice",
                pos.row, pos.col, self.lattice_rows, self.lattice_cols
            )));
        }
        Ok(self.cell_box_unchecked(pos))
    }

    fn cell_box_unchecked(&self, pos: LatticePosition) -> CellBox {
        let c = self.cell_size as f64;
        CellBox::new(
            (self.stride * pos.col) as f64,
            (self.stride * pos.row) as f64,
            c,
            c,
        )
    }

    pub fn image_box(&self) -> CellBox {
        CellBox::new(0.0, 0.0, self.image_width as f64, self.image_height as f64)
    }
}

/// Clips `seg` to the closed box `bx` (parametric Liang–Barsky clipping).
///
/// Returns `None` when the intersection is empty or a single point. The
/// confidence of the input is carried over. Output coordinates are clamped
/// into the box so rounding never places them outside it.
pub fn clip_segment_to_box(seg: &LineSegment, bx: &CellBox) -> Option<LineSegment> {
    let dx = seg.x2 - seg.x1;
    let dy = seg.y2 - seg.y1;
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let p = [-dx, dx, -dy, dy];
    let q = [
        seg.x1 - bx.x0,
        bx.x1() - seg.x1,
        seg.y1 - bx.y0,
        bx.y1() - seg.y1,
    ];
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (pk, qk) in p.iter().zip(q.iter()) {
        if *pk == 0.0 {
            if *qk < 0.0 {
                return None;
            }
        } else {
            let t = qk / pk;
            if *pk < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 >= t1 {
        return None;
    }
    let (mut ax, mut ay) = if t0 == 0.0 {
        (seg.x1, seg.y1)
    } else {
        seg.point_at(t0)
    };
    let (mut bx_, mut by) = if t1 == 1.0 {
        (seg.x2, seg.y2)
    } else {
        seg.point_at(t1)
    };
    ax = ax.clamp(bx.x0, bx.x1());
    bx_ = bx_.clamp(bx.x0, bx.x1());
    ay = ay.clamp(bx.y0, bx.y1());
    by = by.clamp(bx.y0, bx.y1());
    if ax == bx_ && ay == by {
        return None;
    }
    Some(LineSegment {
        x1: ax,
        y1: ay,
        x2: bx_,
        y2: by,
        confidence: seg.confidence,
    })
}

/// Per-cell classification labels and normalized endpoint targets.
///
/// `labels[[r, c]]` is `+1` when the cell holds a line segment and `−1`
/// otherwise; `coords[[r, c, ..]]` holds `(x1, y1, x2, y2)` relative to the
/// cell origin divided by `cell_size` and is zero at negative cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor {
    pub labels: Array2<i8>,
    pub coords: Array3<f32>,
}

impl TargetTensor {
    pub fn negative(rows: usize, cols: usize) -> Self {
        Self {
            labels: Array2::from_elem((rows, cols), -1),
            coords: Array3::zeros((rows, cols, 4)),
        }
    }

    pub fn rows(&self) -> usize {
        self.labels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.labels.ncols()
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn is_positive(&self, pos: LatticePosition) -> bool {
        self.labels[[pos.row, pos.col]] == 1
    }
}

/// Encodes ground-truth segments into per-cell targets.
///
/// Every segment is clipped to every cell; among the pieces longer than
/// `min_piece_len` the longest one wins (ties go to the lowest segment index)
/// and its endpoints, in input order, become the normalized target.
pub fn encode_targets(
    segments: &[LineSegment],
    spec: &GridSpec,
    min_piece_len: f64,
) -> TargetTensor {
    let mut targets = TargetTensor::negative(spec.lattice_rows, spec.lattice_cols);
    let cell = spec.cell_size as f64;
    for pos in spec.positions() {
        let bx = spec.cell_box_unchecked(pos);
        let mut best: Option<(f64, LineSegment)> = None;
        for seg in segments {
            if !segment_bbox_overlaps(seg, &bx) {
                continue;
            }
            if let Some(piece) = clip_segment_to_box(seg, &bx) {
                let len = piece.length();
                if len > min_piece_len && best.is_none_or(|(l, _)| len > l) {
                    best = Some((len, piece));
                }
            }
        }
        if let Some((_, piece)) = best {
            targets.labels[[pos.row, pos.col]] = 1;
            let local = [
                (piece.x1 - bx.x0) / cell,
                (piece.y1 - bx.y0) / cell,
                (piece.x2 - bx.x0) / cell,
                (piece.y2 - bx.y0) / cell,
            ];
            for (k, v) in local.iter().enumerate() {
                targets.coords[[pos.row, pos.col, k]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    targets
}

fn segment_bbox_overlaps(seg: &LineSegment, bx: &CellBox) -> bool {
    seg.x1.max(seg.x2) >= bx.x0
        && seg.x1.min(seg.x2) <= bx.x1()
        && seg.y1.max(seg.y2) >= bx.y0
        && seg.y1.min(seg.y2) <= bx.y1()
}

/// Converts per-cell predictions back into global line segments.
///
/// Cells whose probability strictly exceeds `conf_threshold` emit one segment
/// each; normalized coordinates are clamped to `[0, 1]` before being mapped
/// back to pixels. Detections from all four grids are concatenated in
/// row-major lattice order without merging or suppression.
pub fn decode_predictions(
    class_probs: ArrayView2<f32>,
    coords: ArrayView3<f32>,
    spec: &GridSpec,
    conf_threshold: f64,
) -> Result<Vec<LineSegment>> {
    let (r, c) = class_probs.dim();
    if (r, c) != (spec.lattice_rows, spec.lattice_cols) {
        return Err(Error::Shape(format!(
            "class probabilities are {r}x{c}, lattice is {}x{}",
            spec.lattice_rows, spec.lattice_cols
        )));
    }
    if coords.dim() != (r, c, 4) {
        return Err(Error::Shape(format!(
            "coordinates are {:?}, expected ({r}, {c}, 4)",
            coords.dim()
        )));
    }
    let cell = spec.cell_size as f64;
    let mut out = Vec::new();
    for pos in spec.positions() {
        let p = class_probs[[pos.row, pos.col]] as f64;
        if p <= conf_threshold {
            continue;
        }
        let bx = spec.cell_box_unchecked(pos);
        let v = |k: usize| (coords[[pos.row, pos.col, k]] as f64).clamp(0.0, 1.0) * cell;
        out.push(
            LineSegment::new(bx.x0 + v(0), bx.y0 + v(1), bx.x0 + v(2), bx.y0 + v(3))
                .with_confidence(p.clamp(0.0, 1.0)),
        );
    }
    Ok(out)
}

/// Lattice-shaped data that can be restricted to a subset of the four grids.
pub trait ParityMask: Sized {
    /// Forces every position outside `classes` to the negative state.
    fn mask_parity_classes(&self, classes: GridSet) -> Result<Self>;
}

impl ParityMask for TargetTensor {
    fn mask_parity_classes(&self, classes: GridSet) -> Result<Self> {
        ensure_nonempty(classes)?;
        let mut out = self.clone();
        for ((r, c), y) in out.labels.indexed_iter_mut() {
            if !classes.admits(r, c) {
                *y = -1;
                for k in 0..4 {
                    out.coords[[r, c, k]] = 0.0;
                }
            }
        }
        Ok(out)
    }
}

impl ParityMask for Array2<f32> {
    fn mask_parity_classes(&self, classes: GridSet) -> Result<Self> {
        ensure_nonempty(classes)?;
        let mut out = self.clone();
        for ((r, c), p) in out.indexed_iter_mut() {
            if !classes.admits(r, c) {
                *p = 0.0;
            }
        }
        Ok(out)
    }
}

fn ensure_nonempty(classes: GridSet) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Config(
            "grid selection must contain at least one parity class".into(),
        ));
    }
    Ok(())
}

/// Cell-eligibility mask (`true` where the position belongs to `classes`).
pub fn eligibility_mask(spec: &GridSpec, classes: GridSet) -> Array2<bool> {
    Array2::from_shape_fn((spec.lattice_rows, spec.lattice_cols), |(r, c)| {
        classes.admits(r, c)
    })
}
