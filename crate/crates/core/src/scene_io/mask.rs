//! Instance masks: 16-bit single-channel images, their PNG round trip,
//! tight region bounds, and contour extraction for 2D polygon distances.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::geometry::{polygon_sdf2d, Box2D};

use super::SceneIoError;

/// A per-pixel instance map: 0 is background, any other value is the id of
/// the instance covering that pixel. Row-major storage; pixel `(row, col)`
/// occupies the unit square `[col, col+1] x [row, row+1]` in image
/// coordinates, so its center sits at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self, SceneIoError> {
        if width == 0 || height == 0 {
            return Err(SceneIoError::BadScene(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        let want = width as usize * height as usize;
        if data.len() != want {
            return Err(SceneIoError::BadScene(format!(
                "mask holds {} pixels but {width}x{height} needs {want}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// An all-background mask.
    pub fn zeros(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![0; width as usize * height as usize])
            .expect("positive dimensions with matching length")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, row: u32, col: u32) -> u16 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub(crate) fn set(&mut self, row: u32, col: u32, id: u16) {
        self.data[row as usize * self.width as usize + col as usize] = id;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// All instance ids present (background excluded), ascending.
    pub fn instance_ids(&self) -> BTreeSet<u16> {
        self.data.iter().copied().filter(|&v| v != 0).collect()
    }

    /// Whether any pixel carries `id`.
    pub fn contains_id(&self, id: u16) -> bool {
        id != 0 && self.data.contains(&id)
    }

    /// Number of pixels carrying `id`.
    pub fn count_id(&self, id: u16) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    /// Tight axis-aligned bounds of the pixels carrying `id`, measured over
    /// pixel extents (a single lit pixel yields a 1x1 box). `None` when the
    /// id is absent.
    pub fn tight_box(&self, id: u16) -> Option<Box2D> {
        let mut r_min = u32::MAX;
        let mut r_max = 0u32;
        let mut c_min = u32::MAX;
        let mut c_max = 0u32;
        let mut seen = false;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) == id && id != 0 {
                    seen = true;
                    r_min = r_min.min(r);
                    r_max = r_max.max(r);
                    c_min = c_min.min(c);
                    c_max = c_max.max(c);
                }
            }
        }
        seen.then(|| Box2D {
            x_min: c_min as f64,
            y_min: r_min as f64,
            x_max: (c_max + 1) as f64,
            y_max: (r_max + 1) as f64,
        })
    }

    /// Write as a 16-bit single-channel PNG. The encoding is deterministic:
    /// identical masks produce identical bytes.
    pub fn write_png(&self, path: &Path) -> Result<(), SceneIoError> {
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("dimensions validated at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| SceneIoError::Image {
                action: "write mask",
                path: path.to_path_buf(),
                source,
            })
    }

    /// Read a 16-bit single-channel PNG written by [`Mask::write_png`].
    /// Other pixel formats are rejected rather than silently rescaled.
    pub fn read_png(path: &Path) -> Result<Self, SceneIoError> {
        let img = image::open(path).map_err(|source| match source {
            image::ImageError::IoError(source) => SceneIoError::Io {
                action: "read mask",
                path: path.to_path_buf(),
                source,
            },
            source => SceneIoError::Image {
                action: "decode mask",
                path: path.to_path_buf(),
                source,
            },
        })?;
        match img {
            image::DynamicImage::ImageLuma16(buf) => {
                let (w, h) = buf.dimensions();
                Mask::new(w, h, buf.into_raw())
            }
            _ => Err(SceneIoError::MaskFormat {
                path: path.to_path_buf(),
            }),
        }
    }

    /// Closed contours separating the pixels carrying `id` from everything
    /// else, in image coordinates.
    ///
    /// Marching squares over the binary membership field sampled at pixel
    /// centers, with a one-pixel background pad so regions touching the image
    /// border still close. Vertices sit on half-integer coordinates midway
    /// between neighboring centers; straight runs are merged, so an isolated
    /// rectangle comes back as its boundary with chamfered corners. Multiple
    /// loops appear when occlusion splits a region or punches a hole through
    /// it; combine them with [`contours_sdf`].
    pub fn contours(&self, id: u16) -> Vec<Vec<[f64; 2]>> {
        if id == 0 {
            return Vec::new();
        }
        let h = self.height as i64;
        let w = self.width as i64;
        let lit = |r: i64, c: i64| -> bool {
            r >= 0 && c >= 0 && r < h && c < w && self.data[(r * w + c) as usize] == id
        };

        // Directed segments between edge midpoints, the lit region kept on
        // the left. Coordinates are doubled so every midpoint is an exact
        // integer key. Cell (r, c) has pixel corners (r-1, c-1) .. (r, c);
        // its edge midpoints in doubled image coordinates are:
        //   top (2c, 2r-1), bottom (2c, 2r+1), left (2c-1, 2r), right (2c+1, 2r).
        let mut next: HashMap<(i64, i64), (i64, i64)> = HashMap::new();
        let mut starts: Vec<(i64, i64)> = Vec::new();
        for r in 0..=h {
            for c in 0..=w {
                let tl = lit(r - 1, c - 1) as usize;
                let tr = lit(r - 1, c) as usize;
                let br = lit(r, c) as usize;
                let bl = lit(r, c - 1) as usize;
                let case = tl * 8 + tr * 4 + br * 2 + bl;
                let top = (2 * c, 2 * r - 1);
                let bottom = (2 * c, 2 * r + 1);
                let left = (2 * c - 1, 2 * r);
                let right = (2 * c + 1, 2 * r);
                let segs: &[((i64, i64), (i64, i64))] = match case {
                    1 => &[(bottom, left)],
                    2 => &[(right, bottom)],
                    3 => &[(right, left)],
                    4 => &[(top, right)],
                    // Diagonal pairs are kept separated: two independent
                    // corner cuts rather than a connected saddle.
                    5 => &[(top, right), (bottom, left)],
                    6 => &[(top, bottom)],
                    7 => &[(top, left)],
                    8 => &[(left, top)],
                    9 => &[(bottom, top)],
                    10 => &[(left, top), (right, bottom)],
                    11 => &[(right, top)],
                    12 => &[(left, right)],
                    13 => &[(bottom, right)],
                    14 => &[(left, bottom)],
                    _ => &[],
                };
                for &(from, to) in segs {
                    let prev = next.insert(from, to);
                    debug_assert!(prev.is_none(), "one outgoing segment per midpoint");
                    starts.push(from);
                }
            }
        }

        // Each midpoint has exactly one incoming and one outgoing segment,
        // so following `next` always returns to the start. Loops are begun
        // in scan order to keep the output deterministic.
        let mut contours = Vec::new();
        for &start in &starts {
            if !next.contains_key(&start) {
                continue;
            }
            let mut pts = Vec::new();
            let mut cur = start;
            loop {
                let to = next.remove(&cur).expect("segments chain into closed loops");
                pts.push([cur.0 as f64 * 0.5, cur.1 as f64 * 0.5]);
                cur = to;
                if cur == start {
                    break;
                }
            }
            contours.push(simplify_collinear(pts));
        }
        contours
    }
}

/// Drop vertices that sit on the straight line between their neighbors.
/// Coordinates are half-integers, so the cross product test is exact.
fn simplify_collinear(pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let n = pts.len();
    if n < 4 {
        return pts;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let cur = pts[i];
        let nxt = pts[(i + 1) % n];
        let cross = (cur[0] - prev[0]) * (nxt[1] - cur[1]) - (cur[1] - prev[1]) * (nxt[0] - cur[0]);
        if cross != 0.0 {
            out.push(cur);
        }
    }
    if out.len() < 3 {
        pts
    } else {
        out
    }
}

/// Signed distance from `p` to a region described by a set of closed
/// contours: negative inside, positive outside, magnitude the distance to
/// the nearest contour. Containment combines the loops by the even-odd
/// rule, so holes count as outside. No contours means an empty region:
/// everything is infinitely far outside.
pub fn contours_sdf(contours: &[Vec<[f64; 2]>], p: [f64; 2]) -> f64 {
    let mut best = f64::INFINITY;
    let mut inside = false;
    for c in contours {
        if let Ok(d) = polygon_sdf2d(p, c) {
            best = best.min(d.abs());
            if d < 0.0 {
                inside = !inside;
            }
        }
    }
    if inside {
        -best
    } else {
        best
    }
}
