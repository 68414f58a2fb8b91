//! Breathing images from per-link spectral power.
//!
//! Each link weights the pixels inside an ellipse whose foci are its two
//! endpoints: pixel `k` belongs to link `l` when the sum of its distances to
//! the endpoints is at most the link length plus `lambda_e`. The weights of a
//! link are `1 / P_l` over its `P_l` pixels, so every non-empty row sums to
//! one. The image is the regularized least-squares estimate
//!
//! ```text
//! x = Pi v,   Pi = (W^T W + G^-1)^-1 W^T,   G_km = sigma^2 exp(-|p_k - p_m| / delta)
//! ```
//!
//! `Pi` is computed once per deployment by a Cholesky solve and reused for
//! every window.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{node_position, validate_nodes, LinkKey, NodeGeometry, NodeId, Point};
use crate::rate::RateEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingParams {
    pub pixel_width_m: f64,
    pub pixel_variance: f64,
    pub correlation_distance_m: f64,
    pub ellipse_m: f64,
    /// Margin added around the node bounding box when sizing the grid.
    pub padding_m: f64,
}

impl Default for ImagingParams {
    fn default() -> Self {
        Self {
            pixel_width_m: 0.2,
            pixel_variance: 2.0,
            correlation_distance_m: 2.0,
            ellipse_m: 1.0,
            padding_m: 0.5,
        }
    }
}

impl ImagingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pixel width", self.pixel_width_m),
            ("pixel variance", self.pixel_variance),
            ("correlation distance", self.correlation_distance_m),
            ("ellipse size", self.ellipse_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.padding_m >= 0.0 && self.padding_m.is_finite()) {
            return Err(Error::config(format!("invalid grid padding {}", self.padding_m)));
        }
        Ok(())
    }
}

/// Square pixels on a regular lattice, indexed row-major from the minimum
/// corner: `k = iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    origin: Point,
    pixel_width: f64,
    nx: usize,
    ny: usize,
}

impl PixelGrid {
    /// Smallest grid of `pixel_width` pixels covering the rectangle.
    pub fn new(min: Point, max: Point, pixel_width: f64) -> Result<Self> {
        if !(pixel_width > 0.0 && pixel_width.is_finite()) {
            return Err(Error::config(format!("pixel width must be positive, got {pixel_width}")));
        }
        if !(min.is_finite() && max.is_finite() && min.x <= max.x && min.y <= max.y) {
            return Err(Error::config("invalid grid rectangle"));
        }
        let cells = |span: f64| ((span / pixel_width - 1e-9).ceil() as usize).max(1);
        Ok(Self {
            origin: min,
            pixel_width,
            nx: cells(max.x - min.x),
            ny: cells(max.y - min.y),
        })
    }

    /// Grid over the node bounding box grown by `padding` on every side.
    pub fn covering(nodes: &[NodeGeometry], padding: f64, pixel_width: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("node set"));
        }
        let (mut lo, mut hi) = (nodes[0].position, nodes[0].position);
        for n in nodes {
            lo.x = lo.x.min(n.position.x);
            lo.y = lo.y.min(n.position.y);
            hi.x = hi.x.max(n.position.x);
            hi.y = hi.y.max(n.position.y);
        }
        Self::new(
            Point::new(lo.x - padding, lo.y - padding),
            Point::new(hi.x + padding, hi.y + padding),
            pixel_width,
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_width(&self) -> f64 {
        self.pixel_width
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn center(&self, k: usize) -> Point {
        let (ix, iy) = (k % self.nx, k / self.nx);
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.pixel_width,
            self.origin.y + (iy as f64 + 0.5) * self.pixel_width,
        )
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }
}

/// Sparse ellipse weight matrix, `L x P`.
///
/// Links on different channels between the same two nodes have identical
/// rows, so rows are stored once per unordered node pair ("footprint").
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n_pixels: usize,
    footprints: Vec<Vec<u32>>,
    row_footprint: Vec<usize>,
}

impl WeightMatrix {
    pub fn n_links(&self) -> usize {
        self.row_footprint.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    /// Pixel indices and the common weight of row `l`.
    pub fn row(&self, l: usize) -> (&[u32], f64) {
        let pixels = &self.footprints[self.row_footprint[l]];
        let w = if pixels.is_empty() { 0.0 } else { 1.0 / pixels.len() as f64 };
        (pixels, w)
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        let (pixels, w) = self.row(l);
        if pixels.binary_search(&(k as u32)).is_ok() {
            w
        } else {
            0.0
        }
    }

    pub fn row_sum(&self, l: usize) -> f64 {
        let (pixels, w) = self.row(l);
        pixels.iter().map(|_| w).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_links(), self.n_pixels);
        for l in 0..self.n_links() {
            let (pixels, w) = self.row(l);
            for &k in pixels {
                m[(l, k as usize)] = w;
            }
        }
        m
    }

    fn footprint_multiplicity(&self) -> Vec<usize> {
        let mut counts = vec![0; self.footprints.len()];
        for &f in &self.row_footprint {
            counts[f] += 1;
        }
        counts
    }
}

/// Builds the ellipse weight matrix for `links` over `grid`.
pub fn build_weights(
    nodes: &[NodeGeometry],
    links: &[LinkKey],
    grid: &PixelGrid,
    ellipse_m: f64,
) -> Result<WeightMatrix> {
    if !(ellipse_m > 0.0 && ellipse_m.is_finite()) {
        return Err(Error::config(format!("ellipse size must be positive, got {ellipse_m}")));
    }
    validate_nodes(nodes)?;
    let centers = grid.centers();
    let mut by_pair: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    let mut footprints = Vec::new();
    let mut row_footprint = Vec::with_capacity(links.len());
    for link in links {
        let pair = link.node_pair();
        let idx = match by_pair.get(&pair) {
            Some(&i) => i,
            None => {
                let locate = |id| {
                    node_position(nodes, id)
                        .ok_or_else(|| Error::input(format!("no coordinates for node {id}")))
                };
                let (a, b) = (locate(pair.0)?, locate(pair.1)?);
                let bound = a.distance(&b) + ellipse_m;
                let pixels: Vec<u32> = centers
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| a.distance(p) + b.distance(p) <= bound)
                    .map(|(k, _)| k as u32)
                    .collect();
                if pixels.is_empty() {
                    log::warn!("link {}-{} covers no pixel; its weight row is zero", pair.0, pair.1);
                }
                footprints.push(pixels);
                by_pair.insert(pair, footprints.len() - 1);
                footprints.len() - 1
            }
        };
        row_footprint.push(idx);
    }
    Ok(WeightMatrix {
        n_pixels: grid.len(),
        footprints,
        row_footprint,
    })
}

/// Exponentially decaying pixel covariance.
pub fn build_covariance(grid: &PixelGrid, variance: f64, correlation_distance: f64) -> Result<DMatrix<f64>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::config(format!("pixel variance must be positive, got {variance}")));
    }
    if !(correlation_distance > 0.0 && correlation_distance.is_finite()) {
        return Err(Error::config(format!(
            "correlation distance must be positive, got {correlation_distance}"
        )));
    }
    let centers = grid.centers();
    Ok(DMatrix::from_fn(centers.len(), centers.len(), |k, m| {
        variance * (-centers[k].distance(&centers[m]) / correlation_distance).exp()
    }))
}

/// The `P x L` projection, stored as one column per weight footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    columns: DMatrix<f64>,
    link_footprint: Vec<usize>,
    footprint_count: usize,
    /// `||(W^T W + G^-1) Pi - W^T||_F / ||W^T||_F` at construction.
    pub relative_residual: f64,
}

/// Residual bound accepted by [`build_projection`].
pub const PROJECTION_RESIDUAL_TOL: f64 = 1e-6;

fn diag_range(m: &DMatrix<f64>) -> String {
    let d = m.diagonal();
    format!("n = {}, diagonal in [{:.3e}, {:.3e}]", m.nrows(), d.min(), d.max())
}

/// Solves `(W^T W + G^-1) Pi = W^T`.
pub fn build_projection(weights: &WeightMatrix, covariance: &DMatrix<f64>) -> Result<Projection> {
    let p = weights.n_pixels();
    if covariance.nrows() != p || covariance.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: covariance.nrows(),
        });
    }
    let g_inv = Cholesky::new(covariance.clone())
        .ok_or_else(|| Error::Singular {
            what: "pixel covariance",
            diagnostics: diag_range(covariance),
        })?
        .inverse();

    let multiplicity = weights.footprint_multiplicity();
    let mut system = g_inv;
    let mut rhs = DMatrix::zeros(p, weights.footprints.len());
    for (f, pixels) in weights.footprints.iter().enumerate() {
        if pixels.is_empty() || multiplicity[f] == 0 {
            continue;
        }
        let w = 1.0 / pixels.len() as f64;
        let add = multiplicity[f] as f64 * w * w;
        for &a in pixels {
            rhs[(a as usize, f)] = w;
            for &b in pixels {
                system[(a as usize, b as usize)] += add;
            }
        }
    }
    let system = (&system + system.transpose()) * 0.5;

    let columns = Cholesky::new(system.clone())
        .ok_or_else(|| Error::Singular {
            what: "regularized normal equations",
            diagnostics: diag_range(&system),
        })?
        .solve(&rhs);

    let residual = &system * &columns - &rhs;
    let mut res_sq = 0.0;
    let mut rhs_sq = 0.0;
    for f in 0..rhs.ncols() {
        let m = multiplicity[f] as f64;
        res_sq += m * residual.column(f).norm_squared();
        rhs_sq += m * rhs.column(f).norm_squared();
    }
    let (res, scale) = (res_sq.sqrt(), rhs_sq.sqrt());
    if !res.is_finite() || res > PROJECTION_RESIDUAL_TOL * scale {
        return Err(Error::Singular {
            what: "regularized normal equations",
            diagnostics: format!(
                "residual {res:.3e} against |W^T| = {scale:.3e}; {}",
                diag_range(&system)
            ),
        });
    }
    Ok(Projection {
        columns,
        link_footprint: weights.row_footprint.clone(),
        footprint_count: weights.footprints.len(),
        relative_residual: if scale > 0.0 { res / scale } else { 0.0 },
    })
}

impl Projection {
    pub fn n_pixels(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_links(&self) -> usize {
        self.link_footprint.len()
    }

    /// Full `P x L` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_pixels(), self.n_links());
        for (l, &f) in self.link_footprint.iter().enumerate() {
            m.set_column(l, &self.columns.column(f));
        }
        m
    }

    /// `Pi v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_links() {
            return Err(Error::DimensionMismatch {
                expected: self.n_links(),
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("link power vector"));
        }
        let mut grouped = DVector::zeros(self.footprint_count);
        for (&f, &x) in self.link_footprint.iter().zip(v) {
            grouped[f] += x;
        }
        Ok((&self.columns * grouped).as_slice().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreathingImage {
    /// Breathing energy per pixel, row-major like the grid.
    pub values: Vec<f64>,
    pub argmax: usize,
    /// Center of the argmax pixel.
    pub location: Point,
    pub max_value: f64,
    /// The image is identically zero.
    pub degenerate: bool,
}

impl BreathingImage {
    fn from_values(values: Vec<f64>, grid: &PixelGrid) -> Self {
        let mut argmax = 0;
        for (k, &x) in values.iter().enumerate().skip(1) {
            if x > values[argmax] {
                argmax = k;
            }
        }
        let degenerate = values.iter().all(|&x| x == 0.0);
        Self {
            max_value: values[argmax],
            location: grid.center(argmax),
            argmax,
            values,
            degenerate,
        }
    }

    /// Rows of the image, one per grid row (increasing y).
    pub fn rows<'a>(&'a self, grid: &PixelGrid) -> impl Iterator<Item = &'a [f64]> {
        self.values.chunks(grid.nx())
    }
}

/// Weight model, prior and projection for one deployment.
#[derive(Debug, Clone)]
pub struct ImagingModel {
    pub params: ImagingParams,
    pub grid: PixelGrid,
    pub links: Vec<LinkKey>,
    pub weights: WeightMatrix,
    pub covariance: DMatrix<f64>,
    pub projection: Projection,
    link_index: HashMap<LinkKey, usize>,
}

impl ImagingModel {
    /// Builds the model on a grid covering the nodes.
    pub fn build(nodes: &[NodeGeometry], links: &[LinkKey], params: ImagingParams) -> Result<Self> {
        params.validate()?;
        let grid = PixelGrid::covering(nodes, params.padding_m, params.pixel_width_m)?;
        Self::build_on_grid(nodes, links, grid, params)
    }

    pub fn build_on_grid(
        nodes: &[NodeGeometry],
        links: &[LinkKey],
        grid: PixelGrid,
        params: ImagingParams,
    ) -> Result<Self> {
        params.validate()?;
        if links.is_empty() {
            return Err(Error::Empty("link set"));
        }
        let weights = build_weights(nodes, links, &grid, params.ellipse_m)?;
        let covariance = build_covariance(&grid, params.pixel_variance, params.correlation_distance_m)?;
        let projection = build_projection(&weights, &covariance)?;
        let link_index = links.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        Ok(Self {
            params,
            grid,
            links: links.to_vec(),
            weights,
            covariance,
            projection,
            link_index,
        })
    }

    /// Places an estimate's per-link powers into this model's link order.
    /// Model links missing from the estimate get zero; extra links are
    /// ignored.
    pub fn link_vector(&self, estimate: &RateEstimate) -> Vec<f64> {
        let mut v = vec![0.0; self.links.len()];
        for (link, &p) in estimate.links.iter().zip(&estimate.link_psd) {
            if let Some(&i) = self.link_index.get(link) {
                v[i] = p;
            }
        }
        v
    }

    pub fn estimate_image(&self, v: &[f64]) -> Result<BreathingImage> {
        estimate_image(&self.projection, &self.grid, v)
    }
}

/// `x = Pi v` and its argmax pixel. `v` must be non-negative.
pub fn estimate_image(projection: &Projection, grid: &PixelGrid, v: &[f64]) -> Result<BreathingImage> {
    if projection.n_pixels() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: projection.n_pixels(),
        });
    }
    if v.iter().any(|&x| x < 0.0) {
        return Err(Error::input("link power vector has a negative entry"));
    }
    let values = projection.apply(v)?;
    Ok(BreathingImage::from_values(values, grid))
}
