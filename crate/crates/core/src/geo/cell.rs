//! Hierarchical cells on the faces of a cube enclosing the sphere, with the
//! quadratic (u,v) -> (s,t) projection and face orientations of S2.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GeoError, EARTH_RADIUS_KM};

pub const MAX_LEVEL: u8 = 30;

/// A cell: cube face, depth, and one 2-bit quadrant code per level, the
/// first subdivision in the most significant position. Quadrant code is
/// `2 * (upper half in s) + (upper half in t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CellId {
    face: u8,
    level: u8,
    path: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGeometry {
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
    /// (lat, lon) of the corners in (s,t) order (lo,lo), (hi,lo), (hi,hi), (lo,hi).
    pub corners: [(f64, f64); 4],
    pub center: (f64, f64),
    pub area_km2: f64,
}

fn check_level(level: u8) -> Result<(), GeoError> {
    if level > MAX_LEVEL {
        return Err(GeoError::InvalidLevel(level));
    }
    Ok(())
}

pub(crate) fn check_coordinate(lat: f64, lon: f64) -> Result<(), GeoError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::InvalidCoordinate { lat, lon });
    }
    Ok(())
}

pub(crate) fn latlon_to_xyz(lat: f64, lon: f64) -> [f64; 3] {
    let (lat, lon) = (lat.to_radians(), lon.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

pub(crate) fn xyz_to_latlon(p: [f64; 3]) -> (f64, f64) {
    let lat = p[2].atan2((p[0] * p[0] + p[1] * p[1]).sqrt());
    let lon = p[1].atan2(p[0]);
    (lat.to_degrees(), lon.to_degrees())
}

/// Face whose axis carries the largest absolute component; ties go to the
/// lowest face index.
pub fn face_of(p: [f64; 3]) -> u8 {
    let m = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    (0..3)
        .filter(|&a| p[a].abs() == m)
        .map(|a| if p[a] >= 0.0 { a as u8 } else { a as u8 + 3 })
        .min()
        .expect("some axis attains the maximum")
}

fn face_xyz_to_uv(face: u8, p: [f64; 3]) -> (f64, f64) {
    let [x, y, z] = p;
    match face {
        0 => (y / x, z / x),
        1 => (-x / y, z / y),
        2 => (-x / z, -y / z),
        3 => (z / x, y / x),
        4 => (z / y, -x / y),
        _ => (-y / z, -x / z),
    }
}

fn face_uv_to_xyz(face: u8, u: f64, v: f64) -> [f64; 3] {
    match face {
        0 => [1.0, u, v],
        1 => [-u, 1.0, v],
        2 => [-u, -v, 1.0],
        3 => [-1.0, -v, -u],
        4 => [v, -1.0, -u],
        _ => [v, u, -1.0],
    }
}

pub fn uv_to_st(u: f64) -> f64 {
    if u >= 0.0 {
        0.5 * (1.0 + 3.0 * u).sqrt()
    } else {
        1.0 - 0.5 * (1.0 - 3.0 * u).sqrt()
    }
}

pub fn st_to_uv(s: f64) -> f64 {
    if s >= 0.5 {
        (4.0 * s * s - 1.0) / 3.0
    } else {
        (1.0 - 4.0 * (1.0 - s) * (1.0 - s)) / 3.0
    }
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

fn st_to_latlon(face: u8, s: f64, t: f64) -> (f64, f64) {
    xyz_to_latlon(normalize(face_uv_to_xyz(face, st_to_uv(s), st_to_uv(t))))
}

/// Integer (i, j) position on the face at level 30.
fn leaf_ij(s: f64, t: f64) -> (u64, u64) {
    let scale = (1u64 << MAX_LEVEL) as f64;
    let max = (1u64 << MAX_LEVEL) - 1;
    let f = |x: f64| ((x * scale).floor().max(0.0) as u64).min(max);
    (f(s), f(t))
}

pub fn latlon_to_cell(lat: f64, lon: f64, level: u8) -> Result<CellId, GeoError> {
    check_level(level)?;
    check_coordinate(lat, lon)?;
    let p = latlon_to_xyz(lat, lon);
    let face = face_of(p);
    let (u, v) = face_xyz_to_uv(face, p);
    let (i, j) = leaf_ij(uv_to_st(u), uv_to_st(v));
    Ok(CellId::from_ij(face, MAX_LEVEL, i, j).ancestor(level))
}

impl CellId {
    pub fn face_cell(face: u8) -> Result<Self, GeoError> {
        if face > 5 {
            return Err(GeoError::InvalidCell(format!("face {face}")));
        }
        Ok(Self { face, level: 0, path: 0 })
    }

    fn from_ij(face: u8, level: u8, i: u64, j: u64) -> Self {
        let mut path = 0u64;
        for b in (0..level).rev() {
            path = (path << 2) | (((i >> b) & 1) << 1) | ((j >> b) & 1);
        }
        Self { face, level, path }
    }

    /// Integer (i, j) of this cell at its own level.
    fn ij(self) -> (u64, u64) {
        let (mut i, mut j) = (0u64, 0u64);
        for b in (0..self.level).rev() {
            let q = (self.path >> (2 * b)) & 3;
            i = (i << 1) | (q >> 1);
            j = (j << 1) | (q & 1);
        }
        (i, j)
    }

    pub fn face(self) -> u8 {
        self.face
    }

    pub fn level(self) -> u8 {
        self.level
    }

    /// Quadrant codes, most significant first.
    pub fn path(self) -> Vec<u8> {
        (0..self.level)
            .rev()
            .map(|b| ((self.path >> (2 * b)) & 3) as u8)
            .collect()
    }

    /// Ancestor at `level` (itself if `level` equals its own).
    pub fn ancestor(self, level: u8) -> Self {
        assert!(level <= self.level, "ancestor level below cell level");
        Self {
            face: self.face,
            level,
            path: self.path >> (2 * (self.level - level)),
        }
    }

    pub fn parent(self) -> Result<Self, GeoError> {
        if self.level == 0 {
            return Err(GeoError::InvalidCell("a face cell has no parent".into()));
        }
        Ok(self.ancestor(self.level - 1))
    }

    pub fn children(self) -> Result<[Self; 4], GeoError> {
        if self.level == MAX_LEVEL {
            return Err(GeoError::InvalidCell("a level-30 cell has no children".into()));
        }
        Ok([0, 1, 2, 3].map(|q| Self {
            face: self.face,
            level: self.level + 1,
            path: (self.path << 2) | q,
        }))
    }

    /// True if `self` is `other` or one of its ancestors.
    pub fn contains(self, other: CellId) -> bool {
        self.face == other.face && self.level <= other.level && other.ancestor(self.level) == self
    }

    /// Bounds in (s, t): (s_lo, s_hi, t_lo, t_hi).
    pub fn st_bounds(self) -> (f64, f64, f64, f64) {
        let (i, j) = self.ij();
        let size = 1.0 / (1u64 << self.level) as f64;
        (i as f64 * size, (i + 1) as f64 * size, j as f64 * size, (j + 1) as f64 * size)
    }

    pub fn geometry(self) -> CellGeometry {
        let (s0, s1, t0, t1) = self.st_bounds();
        let corner = |s, t| st_to_latlon(self.face, s, t);
        let xyz = |s, t| normalize(face_uv_to_xyz(self.face, st_to_uv(s), st_to_uv(t)));
        let (a, b, c, d) = (xyz(s0, t0), xyz(s1, t0), xyz(s1, t1), xyz(s0, t1));
        let area = (spherical_excess(a, b, c) + spherical_excess(a, c, d)) * EARTH_RADIUS_KM * EARTH_RADIUS_KM;
        CellGeometry {
            parent: self.parent().ok(),
            children: self.children().ok(),
            corners: [corner(s0, t0), corner(s1, t0), corner(s1, t1), corner(s0, t1)],
            center: corner(0.5 * (s0 + s1), 0.5 * (t0 + t1)),
            area_km2: area,
        }
    }

    /// Token such as `2/0312`: face, then one digit per quadrant.
    pub fn token(self) -> String {
        let mut s = format!("{}/", self.face);
        s.extend(self.path().iter().map(|q| char::from(b'0' + q)));
        s
    }
}

pub fn cell_geometry(cell: CellId) -> CellGeometry {
    cell.geometry()
}

/// Spherical excess of the triangle with unit-vector vertices, in steradians.
fn spherical_excess(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    // Edge vectors keep the triple product accurate for tiny cells.
    let (u, v) = ([b[0] - a[0], b[1] - a[1], b[2] - a[2]], [c[0] - a[0], c[1] - a[1], c[2] - a[2]]);
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let triple = dot(a, cross).abs();
    2.0 * triple.atan2(1.0 + dot(a, b) + dot(b, c) + dot(c, a))
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl FromStr for CellId {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeoError::InvalidCell(format!("bad cell token `{s}`"));
        let (face, path) = s.split_once('/').ok_or_else(bad)?;
        let face: u8 = face.parse().map_err(|_| bad())?;
        if face > 5 || path.len() > MAX_LEVEL as usize {
            return Err(bad());
        }
        let mut bits = 0u64;
        for ch in path.chars() {
            let q = ch.to_digit(4).ok_or_else(bad)? as u64;
            bits = (bits << 2) | q;
        }
        Ok(Self {
            face,
            level: path.len() as u8,
            path: bits,
        })
    }
}

impl From<CellId> for String {
    fn from(c: CellId) -> String {
        c.token()
    }
}

impl TryFrom<String> for CellId {
    type Error = GeoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
