//! Edge detection and the four-region mask.
//!
//! [`canny`] is the classical pipeline: Gaussian blur, Sobel gradients,
//! four-bin direction quantisation, non-maximum suppression and hysteresis.
//! [`decompose_regions`] turns a 32x32 binary digit plus its edges into the
//! outside / outside-boundary / inside-boundary / inside partition.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{partition_from_labels, BinaryImage, GrayImage, Region, RegionPartition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub blur_sigma: f64,
    /// Fraction of the maximum gradient magnitude.
    pub low_threshold: f64,
    /// Fraction of the maximum gradient magnitude.
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            low_threshold: 0.1,
            high_threshold: 0.3,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Parameter(format!("blur sigma must be positive, got {}", self.blur_sigma)));
        }
        let (lo, hi) = (self.low_threshold, self.high_threshold);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Parameter(format!(
                "canny thresholds must satisfy 0 < low <= high <= 1, got low={lo} high={hi}"
            )));
        }
        Ok(())
    }

    pub fn kernel_radius(&self) -> usize {
        (3.0 * self.blur_sigma).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    CannyGuided,
    Morphological,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub edge_mode: EdgeMode,
    pub canny: CannyParams,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self {
            edge_mode: EdgeMode::CannyGuided,
            canny: CannyParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    edge: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, edge: Vec<bool>) -> Result<Self> {
        // reuse BinaryImage's shape checks
        BinaryImage::new(width, height, edge.clone())?;
        Ok(Self { width, height, edge })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            edge: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn edges(&self) -> &[bool] {
        &self.edge
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.edge[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.edge.iter().filter(|&&e| e).count()
    }

    pub fn to_binary(&self) -> BinaryImage {
        BinaryImage::new(self.width, self.height, self.edge.clone()).expect("shape checked at construction")
    }
}

/// Symmetric reflection about the border: `... c b a | a b c ...`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Intermediate Canny planes, row-major.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub blurred: Vec<f64>,
    /// Derivative along columns (x).
    pub gx: Vec<f64>,
    /// Derivative along rows (y, pointing down).
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Separable Gaussian blur followed by 3x3 Sobel, reflected borders throughout.
pub fn gradients(src: &GrayImage, sigma: f64, radius: usize) -> Gradients {
    let (w, h) = (src.width(), src.height());
    let kernel = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let px = |row: usize, col: usize| src.get(row, col) as f64;

    let mut horiz = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            horiz[row * w + col] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * px(row, reflect(col as isize + k as isize - r, w)))
                .sum();
        }
    }
    let mut blurred = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            blurred[row * w + col] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * horiz[reflect(row as isize + k as isize - r, h) * w + col])
                .sum();
        }
    }

    let at = |row: usize, col: usize, dr: isize, dc: isize| {
        blurred[reflect(row as isize + dr, h) * w + reflect(col as isize + dc, w)]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut magnitude = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let x = (at(row, col, -1, 1) + 2.0 * at(row, col, 0, 1) + at(row, col, 1, 1))
                - (at(row, col, -1, -1) + 2.0 * at(row, col, 0, -1) + at(row, col, 1, -1));
            let y = (at(row, col, 1, -1) + 2.0 * at(row, col, 1, 0) + at(row, col, 1, 1))
                - (at(row, col, -1, -1) + 2.0 * at(row, col, -1, 0) + at(row, col, -1, 1));
            let i = row * w + col;
            gx[i] = x;
            gy[i] = y;
            magnitude[i] = libm::hypot(x, y);
        }
    }
    Gradients {
        width: w,
        height: h,
        blurred,
        gx,
        gy,
        magnitude,
    }
}

/// Neighbour offsets `(dr, dc)` along the quantised gradient direction.
fn direction_offsets(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = libm::atan2(gy, gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Keeps local maxima along the gradient direction.
///
/// On a step edge the two pixels straddling the transition carry equal
/// magnitude; such ties go to the brighter (higher blurred intensity) pixel,
/// and remaining ties to the pixel further along the positive direction.
fn non_maximum_suppression(g: &Gradients) -> Vec<f64> {
    let (w, h) = (g.width, g.height);
    let max = g.magnitude.iter().cloned().fold(0.0, f64::max);
    let mag_eps = 1e-6 * max;
    let int_eps = 1e-6;
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let m = g.magnitude[i];
            if m <= mag_eps {
                continue;
            }
            let (dr, dc) = direction_offsets(g.gx[i], g.gy[i]);
            let mut keep = true;
            for (sign, forward) in [(1isize, true), (-1isize, false)] {
                let (nr, nc) = (row as isize + sign * dr, col as isize + sign * dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                let n = g.magnitude[j];
                if n > m + mag_eps {
                    keep = false;
                } else if (n - m).abs() <= mag_eps {
                    let di = g.blurred[j] - g.blurred[i];
                    if di > int_eps || (di.abs() <= int_eps && forward) {
                        keep = false;
                    }
                }
            }
            if keep {
                out[i] = m;
            }
        }
    }
    out
}

/// Double threshold with 8-connected linking from strong pixels.
fn hysteresis(thinned: &[f64], w: usize, h: usize, low: f64, high: f64) -> Vec<bool> {
    let mut edge = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thinned.iter().enumerate() {
        if m > 0.0 && m >= high && !edge[i] {
            edge[i] = true;
            queue.push_back(i);
            while let Some(k) = queue.pop_front() {
                let (r, c) = ((k / w) as isize, (k % w) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nr, nc) = (r + dr, c + dc);
                        if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                            continue;
                        }
                        let j = nr as usize * w + nc as usize;
                        if !edge[j] && thinned[j] > 0.0 && thinned[j] >= low {
                            edge[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    edge
}

/// Canny edges of a binary image rendered as 0/255 intensities.
pub fn canny(src: &BinaryImage, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let (w, h) = (src.width(), src.height());
    let g = gradients(&src.to_gray(), params.blur_sigma, params.kernel_radius());
    let max = g.magnitude.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(EdgeMap::empty(w, h));
    }
    let thinned = non_maximum_suppression(&g);
    let edge = hysteresis(&thinned, w, h, params.low_threshold * max, params.high_threshold * max);
    EdgeMap::new(w, h, edge)
}

const NEIGHBOURS_4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// True if any in-grid neighbour at the given offsets satisfies `pred`.
fn any_neighbour(
    w: usize,
    h: usize,
    row: usize,
    col: usize,
    offsets: &[(isize, isize)],
    pred: impl Fn(usize) -> bool,
) -> bool {
    offsets.iter().any(|&(dr, dc)| {
        let (r, c) = (row as isize + dr, col as isize + dc);
        r >= 0 && c >= 0 && r < h as isize && c < w as isize && pred(r as usize * w + c as usize)
    })
}

/// Splits the grid into the four regions.
///
/// * `CannyGuided`: inside-boundary = edge pixels on the foreground; outside-
///   boundary = background pixels 4-adjacent to the inside-boundary.
/// * `Morphological`: inside-boundary = foreground pixels 8-adjacent to
///   background; outside-boundary = background pixels 8-adjacent to foreground.
///
/// The remaining foreground is inside, the remaining background outside.
/// Only in-grid neighbours count; the border of the grid is not background.
pub fn decompose_regions(binary: &BinaryImage, edges: &EdgeMap, mode: EdgeMode) -> Result<RegionPartition> {
    let (w, h) = (binary.width(), binary.height());
    if edges.width() != w || edges.height() != h {
        return Err(Error::dimension(
            format!("{w}x{h} edge map"),
            format!("{}x{}", edges.width(), edges.height()),
        ));
    }
    let fg = binary.bits();
    let fg_count = binary.foreground_count();
    if fg_count == 0 {
        return Err(Error::DegenerateMask("binary image has no foreground".into()));
    }
    if fg_count == fg.len() {
        return Err(Error::DegenerateMask("binary image has no background".into()));
    }

    let mut labels = vec![Region::Outside; w * h];
    match mode {
        EdgeMode::CannyGuided => {
            let inside_boundary: Vec<bool> = (0..w * h).map(|i| fg[i] && edges.edges()[i]).collect();
            for i in 0..w * h {
                let (r, c) = (i / w, i % w);
                labels[i] = if fg[i] {
                    if inside_boundary[i] {
                        Region::InsideBoundary
                    } else {
                        Region::Inside
                    }
                } else if any_neighbour(w, h, r, c, &NEIGHBOURS_4, |j| inside_boundary[j]) {
                    Region::OutsideBoundary
                } else {
                    Region::Outside
                };
            }
        }
        EdgeMode::Morphological => {
            for i in 0..w * h {
                let (r, c) = (i / w, i % w);
                labels[i] = if fg[i] {
                    if any_neighbour(w, h, r, c, &NEIGHBOURS_8, |j| !fg[j]) {
                        Region::InsideBoundary
                    } else {
                        Region::Inside
                    }
                } else if any_neighbour(w, h, r, c, &NEIGHBOURS_8, |j| fg[j]) {
                    Region::OutsideBoundary
                } else {
                    Region::Outside
                };
            }
        }
    }
    partition_from_labels(labels, w, h)
}

/// Edges (if the mode needs them) and the partition for one 32x32 mask.
pub fn analyze(binary: &BinaryImage, params: &BoundaryParams) -> Result<(EdgeMap, RegionPartition)> {
    let edges = match params.edge_mode {
        EdgeMode::CannyGuided => canny(binary, &params.canny)?,
        EdgeMode::Morphological => EdgeMap::empty(binary.width(), binary.height()),
    };
    let partition = decompose_regions(binary, &edges, params.edge_mode)?;
    Ok((edges, partition))
}
