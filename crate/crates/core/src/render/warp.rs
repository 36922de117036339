use image::{ImageBuffer, Pixel};
use nalgebra::{DMatrix, DVector, Vector2};

use super::RenderError;
use crate::lie::AffineTransform;
use crate::scene::{Intrinsics, PointGrid};

/// Weight of the similarity term.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Control points kept per frame.
pub const MAX_CONTROL_POINTS: usize = 2000;
const UNKNOWNS: usize = 18;

/// A pixel in the original frame and where it should land in the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPair {
    pub src: Vector2<f64>,
    pub dst: Vector2<f64>,
}

/// Output positions of the 3×3 vertices of a 2×2 grid laid uniformly over
/// `[0, width - 1] × [0, height - 1]`. Vertex `(row, col)` is stored at
/// `3 * row + col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpGrid {
    pub width: usize,
    pub height: usize,
    pub vertices: [Vector2<f64>; 9],
}

impl WarpGrid {
    pub fn uniform(width: usize, height: usize) -> Self {
        let mut vertices = [Vector2::zeros(); 9];
        for (k, v) in vertices.iter_mut().enumerate() {
            *v = source_vertex(width, height, k);
        }
        Self {
            width,
            height,
            vertices,
        }
    }

    pub fn source_vertex(&self, k: usize) -> Vector2<f64> {
        source_vertex(self.width, self.height, k)
    }

    /// Output corners of cell `c` (`2 * row + col`) in the order
    /// top-left, top-right, bottom-right, bottom-left.
    pub fn cell(&self, c: usize) -> [Vector2<f64>; 4] {
        let (r, col) = (c / 2, c % 2);
        let v = |rr: usize, cc: usize| self.vertices[3 * rr + cc];
        [v(r, col), v(r, col + 1), v(r + 1, col + 1), v(r + 1, col)]
    }

    /// Every cell must have positive signed area.
    pub fn validate(&self) -> Result<(), RenderError> {
        for c in 0..4 {
            if !(polygon_area(&self.cell(c)) > 0.0) {
                return Err(RenderError::DegenerateCell(c));
            }
        }
        Ok(())
    }

    /// Output position of a source point under the bilinear cell maps.
    pub fn map(&self, src: &Vector2<f64>) -> Vector2<f64> {
        let (cell, s, t) = locate(self.width, self.height, src);
        let [a, b, c, d] = self.cell(cell);
        a * ((1.0 - s) * (1.0 - t)) + b * (s * (1.0 - t)) + c * (s * t) + d * ((1.0 - s) * t)
    }
}

fn cell_size(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

fn source_vertex(width: usize, height: usize, k: usize) -> Vector2<f64> {
    let (cw, ch) = cell_size(width, height);
    Vector2::new((k % 3) as f64 * cw, (k / 3) as f64 * ch)
}

/// Cell index and local coordinates of a source point.
fn locate(width: usize, height: usize, p: &Vector2<f64>) -> (usize, f64, f64) {
    let (cw, ch) = cell_size(width, height);
    let fx = p.x / cw;
    let fy = p.y / ch;
    let col = (fx.floor().max(0.0) as usize).min(1);
    let row = (fy.floor().max(0.0) as usize).min(1);
    (2 * row + col, fx - col as f64, fy - row as f64)
}

pub(crate) fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - a.y * b.x
        })
        .sum::<f64>()
}

/// Control pairs from back-projected points: `dst` is the projection of
/// `r * x`. Points landing behind the camera are dropped and the rest are
/// thinned uniformly to at most `max_points`.
pub fn reproject_control_points(
    points: &PointGrid,
    r: &AffineTransform,
    k: &Intrinsics,
    max_points: usize,
) -> Vec<ControlPair> {
    let valid: Vec<usize> = (0..points.points.len()).filter(|&i| points.valid[i]).collect();
    let step = valid.len().div_ceil(max_points.max(1)).max(1);
    valid
        .iter()
        .step_by(step)
        .filter_map(|&idx| {
            let (i, j) = points.pixel(idx);
            let (u, v) = k.project(&r.transform_point(&points.points[idx]))?;
            Some(ControlPair {
                src: Vector2::new(i as f64, j as f64),
                dst: Vector2::new(u, v),
            })
        })
        .collect()
}

/// Solves for the grid minimizing `E_d + alpha E_s`.
///
/// `E_d` asks the bilinear interpolation of the output vertices at each
/// control source to hit its destination. `E_s` asks every cell triangle to
/// keep the shape it has in the uniform grid up to a similarity: each vertex is
/// written in the local frame of two cell neighbours and must stay there.
pub fn cpw_solve(
    pairs: &[ControlPair],
    alpha: f64,
    width: usize,
    height: usize,
) -> Result<WarpGrid, RenderError> {
    if pairs.len() < 4 {
        return Err(RenderError::TooFewControls(pairs.len()));
    }
    let uniform = WarpGrid::uniform(width, height);
    let (max_x, max_y) = (width as f64 - 1.0, height as f64 - 1.0);
    let inside: Vec<&ControlPair> = pairs
        .iter()
        .filter(|p| p.src.x >= 0.0 && p.src.y >= 0.0 && p.src.x <= max_x && p.src.y <= max_y)
        .collect();
    if inside.len() < 4 {
        return Err(RenderError::TooFewControls(inside.len()));
    }

    let rows = 2 * inside.len() + 4 * 8 * 2;
    let mut a = DMatrix::zeros(rows, UNKNOWNS);
    let mut rhs = DVector::zeros(rows);
    let mut row = 0;
    for p in &inside {
        let (cell, s, t) = locate(width, height, &p.src);
        let (r, c) = (cell / 2, cell % 2);
        let corners = [3 * r + c, 3 * r + c + 1, 3 * (r + 1) + c + 1, 3 * (r + 1) + c];
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        for axis in 0..2 {
            for (v, wk) in corners.iter().zip(w) {
                a[(row, 2 * v + axis)] = wk;
            }
            rhs[row] = p.dst[axis];
            row += 1;
        }
    }

    let sw = alpha.sqrt();
    for cell in 0..4 {
        let (r, c) = (cell / 2, cell % 2);
        let ring = [3 * r + c, 3 * r + c + 1, 3 * (r + 1) + c + 1, 3 * (r + 1) + c];
        for i in 0..4 {
            let v1 = ring[i];
            let (na, nb) = (ring[(i + 1) % 4], ring[(i + 3) % 4]);
            for (n1, n2) in [(na, nb), (nb, na)] {
                let d = uniform.vertices[n2] - uniform.vertices[n1];
                let q = uniform.vertices[v1] - uniform.vertices[n1];
                let rot = Vector2::new(d.y, -d.x);
                let u = q.dot(&d) / d.norm_squared();
                let v = q.dot(&rot) / d.norm_squared();
                // V1 - V_n1 - u (V_n2 - V_n1) - v R (V_n2 - V_n1) = 0, R(x, y) = (y, -x)
                let x = |k: usize| 2 * k;
                let y = |k: usize| 2 * k + 1;
                a[(row, x(v1))] += sw;
                a[(row, x(n1))] += sw * (u - 1.0);
                a[(row, x(n2))] -= sw * u;
                a[(row, y(n2))] -= sw * v;
                a[(row, y(n1))] += sw * v;
                row += 1;
                a[(row, y(v1))] += sw;
                a[(row, y(n1))] += sw * (u - 1.0);
                a[(row, y(n2))] -= sw * u;
                a[(row, x(n2))] += sw * v;
                a[(row, x(n1))] -= sw * v;
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, rows);

    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < UNKNOWNS {
        return Err(RenderError::RankDeficient { rank });
    }
    let x = svd.solve(&rhs, tol).map_err(|_| RenderError::RankDeficient { rank })?;
    let mut vertices = [Vector2::zeros(); 9];
    for (k, v) in vertices.iter_mut().enumerate() {
        *v = Vector2::new(x[2 * k], x[2 * k + 1]);
    }
    Ok(WarpGrid {
        width,
        height,
        vertices,
    })
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Local coordinates `(s, t)` of `p` in the bilinear patch with corners
/// `a, b, c, d` (top-left, top-right, bottom-right, bottom-left).
fn inverse_bilinear(p: &Vector2<f64>, [a, b, c, d]: &[Vector2<f64>; 4]) -> Option<(f64, f64)> {
    let e = b - a;
    let f = d - a;
    let g = a - b + c - d;
    let h = p - a;
    let k2 = cross(&g, &f);
    let k1 = cross(&e, &f) + cross(&h, &g);
    let k0 = cross(&h, &e);
    let scale = cross(&e, &f).abs().max(f64::MIN_POSITIVE);
    let solve_s = |t: f64| {
        let den = e + g * t;
        let n2 = den.norm_squared();
        (n2 > 0.0).then(|| (h - f * t).dot(&den) / n2)
    };
    let candidates: Vec<f64> = if k2.abs() <= 1e-12 * scale {
        if k1 == 0.0 {
            return None;
        }
        vec![-k0 / k1]
    } else {
        let disc = k1 * k1 - 4.0 * k0 * k2;
        if disc < 0.0 {
            return None;
        }
        let w = disc.sqrt();
        // numerically stable pair of roots
        let q = -0.5 * (k1 + k1.signum() * w);
        let mut roots = vec![q / k2];
        if q != 0.0 {
            roots.push(k0 / q);
        }
        roots
    };
    const EPS: f64 = 1e-9;
    candidates
        .into_iter()
        .filter_map(|t| Some((solve_s(t)?, t)))
        .find(|&(s, t)| (-EPS..=1.0 + EPS).contains(&s) && (-EPS..=1.0 + EPS).contains(&t))
        .map(|(s, t)| (s.clamp(0.0, 1.0), t.clamp(0.0, 1.0)))
}

/// Resamples `image` so that each grid cell's source region lands on the
/// cell's output quad. Returns the output and a row-major coverage mask;
/// uncovered pixels are zero.
pub fn warp_frame<P>(
    image: &ImageBuffer<P, Vec<u8>>,
    grid: &WarpGrid,
) -> Result<(ImageBuffer<P, Vec<u8>>, Vec<bool>), RenderError>
where
    P: Pixel<Subpixel = u8>,
{
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w != grid.width || h != grid.height {
        return Err(RenderError::Mismatch(format!(
            "image is {w}x{h}, grid is {}x{}",
            grid.width, grid.height
        )));
    }
    grid.validate()?;
    let channels = P::CHANNEL_COUNT as usize;
    let src = image.as_raw();
    let (cw, ch) = cell_size(w, h);
    let cells: Vec<[Vector2<f64>; 4]> = (0..4).map(|c| grid.cell(c)).collect();
    let bounds: Vec<(f64, f64, f64, f64)> = cells
        .iter()
        .map(|q| {
            q.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(x0, y0, x1, y1), v| (x0.min(v.x), y0.min(v.y), x1.max(v.x), y1.max(v.y)),
            )
        })
        .collect();

    let mut out = vec![0u8; w * h * channels];
    let mut mask = vec![false; w * h];
    let mut acc = vec![0.0f64; channels];
    for j in 0..h {
        for i in 0..w {
            let p = Vector2::new(i as f64, j as f64);
            let hit = (0..4).find_map(|c| {
                let (x0, y0, x1, y1) = bounds[c];
                if p.x < x0 - 1e-9 || p.x > x1 + 1e-9 || p.y < y0 - 1e-9 || p.y > y1 + 1e-9 {
                    return None;
                }
                inverse_bilinear(&p, &cells[c]).map(|st| (c, st))
            });
            let Some((c, (s, t))) = hit else { continue };
            let sx = ((c % 2) as f64 + s) * cw;
            let sy = ((c / 2) as f64 + t) * ch;
            sample_bilinear(src, w, h, channels, sx, sy, &mut acc);
            let o = (j * w + i) * channels;
            for (k, a) in acc.iter().enumerate() {
                out[o + k] = a.round().clamp(0.0, 255.0) as u8;
            }
            mask[j * w + i] = true;
        }
    }
    let img = ImageBuffer::from_raw(w as u32, h as u32, out).expect("buffer sized from the input");
    Ok((img, mask))
}

fn sample_bilinear(src: &[u8], w: usize, h: usize, channels: usize, x: f64, y: f64, out: &mut [f64]) {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize, k: usize| f64::from(src[(yy * w + xx) * channels + k]);
    for (k, o) in out.iter_mut().enumerate() {
        *o = (1.0 - fy) * ((1.0 - fx) * at(x0, y0, k) + fx * at(x1, y0, k))
            + fy * ((1.0 - fx) * at(x0, y1, k) + fx * at(x1, y1, k));
    }
}
