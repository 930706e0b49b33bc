//! Spherical geometry and the partitions that turn coordinates into classes.

mod cell;
mod grid;
mod kdtree;
mod kmeans;
mod polygon;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::util::{median, Provenance};

pub use cell::{cell_geometry, face_of, latlon_to_cell, st_to_uv, uv_to_st, CellGeometry, CellId, MAX_LEVEL};
pub use grid::build_adaptive_grid;
pub use kdtree::build_kdtree_partition;
pub use kmeans::build_kmeans_partition;
pub use polygon::{load_geojson_polygons, parse_geojson_polygons, point_in_polygon, Polygon};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("cell level {0} is outside 0..=30")]
    InvalidLevel(u8),
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("no training users to partition")]
    NoTrainingUsers,
    #[error("invalid partition parameter: {0}")]
    InvalidParameter(String),
    #[error("k = {k} exceeds the {distinct} distinct training coordinates")]
    TooManyClusters { k: usize, distinct: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad partition file: {0}")]
    Format(String),
}

/// Great-circle distance in km.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A training user's id and coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Located {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Self {
        Self { id: id.into(), lat, lon }
    }

    pub fn coord(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    S2Adaptive,
    Kdtree,
    Kmeans,
    Polygons,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLonBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl LatLonBox {
    pub fn around(points: &[(f64, f64)]) -> Self {
        points.iter().fold(
            Self {
                min_lat: f64::MAX,
                max_lat: f64::MIN,
                min_lon: f64::MAX,
                max_lon: f64::MIN,
            },
            |b, &(lat, lon)| Self {
                min_lat: b.min_lat.min(lat),
                max_lat: b.max_lat.max(lat),
                min_lon: b.min_lon.min(lon),
                max_lon: b.max_lon.max(lon),
            },
        )
    }

    /// Half-open on the upper edges except where they coincide with `outer`'s,
    /// so sibling boxes never share a point and the outer box is fully covered.
    pub fn contains_within(&self, lat: f64, lon: f64, outer: &LatLonBox) -> bool {
        let upper = |x: f64, hi: f64, outer_hi: f64| x < hi || (x == hi && hi == outer_hi);
        lat >= self.min_lat
            && lon >= self.min_lon
            && upper(lat, self.max_lat, outer.max_lat)
            && upper(lon, self.max_lon, outer.max_lon)
    }

    fn ring(&self) -> Vec<(f64, f64)> {
        vec![
            (self.min_lat, self.min_lon),
            (self.min_lat, self.max_lon),
            (self.max_lat, self.max_lon),
            (self.max_lat, self.min_lon),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassGeometry {
    Cell { cell: CellId },
    Box { bounds: LatLonBox },
    /// k-means center, in raw degrees.
    Center { lat: f64, lon: f64 },
    Polygon { index: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoClass {
    pub class_id: usize,
    pub geometry: ClassGeometry,
    pub members: Vec<String>,
    /// Component-wise median of member coordinates.
    pub centroid: (f64, f64),
    /// More members than the scheme's limit allowed (identical coordinates
    /// that could not be separated).
    #[serde(default)]
    pub oversized: bool,
    #[serde(default)]
    pub straddles_antimeridian: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionParams {
    S2Adaptive { l_min: u8, t_max: usize },
    Kdtree { leaf_threshold: usize, root: LatLonBox },
    Kmeans { k: usize, seed: u64, iterations: usize },
    Polygons { polygons: Vec<Polygon> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub params: PartitionParams,
    pub classes: Vec<GeoClass>,
    /// Training users outside every polygon (polygon scheme only); they
    /// belong to no class.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unassigned: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(skip)]
    cell_index: HashMap<CellId, usize>,
}

/// Component-wise median of a non-empty coordinate list.
pub fn median_centroid(points: &[(f64, f64)]) -> (f64, f64) {
    let lats: Vec<f64> = points.iter().map(|p| p.0).collect();
    let lons: Vec<f64> = points.iter().map(|p| p.1).collect();
    (
        median(&lats).expect("non-empty finite coordinates"),
        median(&lons).expect("non-empty finite coordinates"),
    )
}

fn validate_users(users: &[Located]) -> Result<(), GeoError> {
    if users.is_empty() {
        return Err(GeoError::NoTrainingUsers);
    }
    for u in users {
        cell::check_coordinate(u.lat, u.lon)?;
    }
    Ok(())
}

impl Partition {
    pub(crate) fn new(params: PartitionParams, classes: Vec<GeoClass>, unassigned: Vec<String>) -> Self {
        let mut p = Self {
            params,
            classes,
            unassigned,
            provenance: None,
            cell_index: HashMap::new(),
        };
        p.reindex();
        p
    }

    fn reindex(&mut self) {
        self.cell_index = self
            .classes
            .iter()
            .filter_map(|c| match c.geometry {
                ClassGeometry::Cell { cell } => Some((cell, c.class_id)),
                _ => None,
            })
            .collect();
    }

    pub fn scheme(&self) -> Scheme {
        match self.params {
            PartitionParams::S2Adaptive { .. } => Scheme::S2Adaptive,
            PartitionParams::Kdtree { .. } => Scheme::Kdtree,
            PartitionParams::Kmeans { .. } => Scheme::Kmeans,
            PartitionParams::Polygons { .. } => Scheme::Polygons,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn centroid(&self, class_id: usize) -> (f64, f64) {
        self.classes[class_id].centroid
    }

    /// Training user id -> class id.
    pub fn labels(&self) -> HashMap<&str, usize> {
        self.classes
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (m.as_str(), c.class_id)))
            .collect()
    }

    fn nearest_centroid(&self, lat: f64, lon: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for c in &self.classes {
            let d = haversine((lat, lon), c.centroid);
            if d < best.0 {
                best = (d, c.class_id);
            }
        }
        best.1
    }

    /// Class for an arbitrary coordinate: the containing class geometry if
    /// any, else the class with the nearest centroid.
    pub fn assign_class(&self, lat: f64, lon: f64) -> usize {
        match &self.params {
            PartitionParams::S2Adaptive { .. } => {
                if let Ok(leaf) = latlon_to_cell(lat, lon, MAX_LEVEL) {
                    for level in (0..=MAX_LEVEL).rev() {
                        if let Some(&c) = self.cell_index.get(&leaf.ancestor(level)) {
                            return c;
                        }
                    }
                }
                self.nearest_centroid(lat, lon)
            }
            PartitionParams::Kdtree { root, .. } => self
                .classes
                .iter()
                .find(|c| matches!(&c.geometry, ClassGeometry::Box { bounds } if bounds.contains_within(lat, lon, root)))
                .map(|c| c.class_id)
                .unwrap_or_else(|| self.nearest_centroid(lat, lon)),
            PartitionParams::Kmeans { .. } => {
                let centers: Vec<(f64, f64)> = self
                    .classes
                    .iter()
                    .map(|c| match c.geometry {
                        ClassGeometry::Center { lat, lon } => (lat, lon),
                        _ => c.centroid,
                    })
                    .collect();
                kmeans::nearest(&centers, (lat, lon))
            }
            PartitionParams::Polygons { polygons } => self
                .classes
                .iter()
                .find(|c| matches!(&c.geometry, ClassGeometry::Polygon { index, .. } if point_in_polygon(lat, lon, &polygons[*index])))
                .map(|c| c.class_id)
                .unwrap_or_else(|| self.nearest_centroid(lat, lon)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        let mut p: Self = serde_json::from_str(text).map_err(|e| GeoError::Format(e.to_string()))?;
        p.reindex();
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeoError> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// One feature per class: cell quads and boxes as polygons, k-means
    /// centers as points, input polygons as given. Coordinates are
    /// `[lon, lat]`.
    pub fn to_geojson(&self) -> Value {
        let ring_json = |ring: &[(f64, f64)]| {
            let mut r: Vec<Value> = ring.iter().map(|(lat, lon)| json!([lon, lat])).collect();
            r.push(r[0].clone());
            Value::Array(r)
        };
        let features: Vec<Value> = self
            .classes
            .iter()
            .map(|c| {
                let geometry = match &c.geometry {
                    ClassGeometry::Cell { cell } => {
                        json!({"type": "Polygon", "coordinates": [ring_json(&cell.geometry().corners)]})
                    }
                    ClassGeometry::Box { bounds } => json!({"type": "Polygon", "coordinates": [ring_json(&bounds.ring())]}),
                    ClassGeometry::Center { lat, lon } => json!({"type": "Point", "coordinates": [lon, lat]}),
                    ClassGeometry::Polygon { index, .. } => match &self.params {
                        PartitionParams::Polygons { polygons } => {
                            let rings: Vec<Value> = polygons[*index].rings.iter().map(|r| ring_json(r)).collect();
                            json!({"type": "Polygon", "coordinates": rings})
                        }
                        _ => Value::Null,
                    },
                };
                let mut props = json!({
                    "class_id": c.class_id,
                    "members": c.members.len(),
                    "centroid_lat": c.centroid.0,
                    "centroid_lon": c.centroid.1,
                    "oversized": c.oversized,
                    "straddles_antimeridian": c.straddles_antimeridian,
                });
                match &c.geometry {
                    ClassGeometry::Cell { cell } => props["cell"] = json!(cell.token()),
                    ClassGeometry::Polygon { name, .. } => props["name"] = json!(name),
                    _ => {}
                }
                json!({"type": "Feature", "geometry": geometry, "properties": props})
            })
            .collect();
        let mut fc = json!({"type": "FeatureCollection", "features": features});
        if let Some(p) = &self.provenance {
            fc["provenance"] = json!(p);
        }
        fc
    }

    pub fn save_geojson(&self, path: &Path) -> Result<(), GeoError> {
        let text = serde_json::to_string_pretty(&self.to_geojson()).expect("geojson serializes");
        write_file(path, text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), GeoError> {
    std::fs::write(path, bytes).map_err(|source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Classes from the polygons that contain at least one training user; the
/// first containing polygon in file order wins.
pub fn build_polygon_partition(users: &[Located], polygons: Vec<Polygon>) -> Result<Partition, GeoError> {
    validate_users(users)?;
    if polygons.is_empty() {
        return Err(GeoError::InvalidParameter("no polygons given".into()));
    }
    let mut members: Vec<Vec<&Located>> = vec![Vec::new(); polygons.len()];
    let mut unassigned = Vec::new();
    for u in users {
        match polygons.iter().position(|p| point_in_polygon(u.lat, u.lon, p)) {
            Some(i) => members[i].push(u),
            None => unassigned.push(u.id.clone()),
        }
    }
    let classes: Vec<GeoClass> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .enumerate()
        .map(|(class_id, (index, m))| {
            let coords: Vec<(f64, f64)> = m.iter().map(|u| u.coord()).collect();
            let (_, _, lo, hi) = polygons[index].bounds();
            GeoClass {
                class_id,
                geometry: ClassGeometry::Polygon {
                    index,
                    name: polygons[index].name.clone(),
                },
                members: m.iter().map(|u| u.id.clone()).collect(),
                centroid: median_centroid(&coords),
                oversized: false,
                straddles_antimeridian: hi - lo > 180.0,
            }
        })
        .collect();
    if classes.is_empty() {
        return Err(GeoError::InvalidParameter("no training user falls inside any polygon".into()));
    }
    Ok(Partition::new(PartitionParams::Polygons { polygons }, classes, unassigned))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::Located;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Clustered points: a few Gaussian-ish blobs plus uniform background.
    pub fn random_users(seed: u64, n: usize) -> Vec<Located> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..5))
            .map(|_| (rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0), rng.random_range(0.01..3.0)))
            .collect();
        (0..n)
            .map(|i| {
                let (lat, lon) = if rng.random_bool(0.8) {
                    let (la, lo, s) = blobs[rng.random_range(0..blobs.len())];
                    (
                        (la + s * (rng.random::<f64>() - 0.5)).clamp(-90.0, 90.0),
                        (lo + s * (rng.random::<f64>() - 0.5)).clamp(-180.0, 179.999),
                    )
                } else {
                    (rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0))
                };
                Located::new(format!("u{i}"), lat, lon)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine((10.0, 20.0), (10.0, 20.0)), 0.0);
        let half = std::f64::consts::PI * EARTH_RADIUS_KM;
        assert!((haversine((0.0, 0.0), (0.0, 180.0)) - half).abs() < 1e-6);
        assert!((half - 20015.09).abs() < 0.01);
    }

    /// Independent great-circle distance: angle between unit vectors.
    fn vector_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
        let (p, q) = (cell::latlon_to_xyz(a.0, a.1), cell::latlon_to_xyz(b.0, b.1));
        let cross = [
            p[1] * q[2] - p[2] * q[1],
            p[2] * q[0] - p[0] * q[2],
            p[0] * q[1] - p[1] * q[0],
        ];
        let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let cos = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        EARTH_RADIUS_KM * sin.atan2(cos)
    }

    #[test]
    fn haversine_matches_vector_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a = (rng.random_range(-90.0..90.0), rng.random_range(-180.0..180.0));
            let b = (rng.random_range(-90.0..90.0), rng.random_range(-180.0..180.0));
            let (h, v) = (haversine(a, b), vector_distance(a, b));
            assert!((h - v).abs() <= 0.005 * v.max(1e-9), "{a:?} {b:?}: {h} vs {v}");
        }
    }

    proptest! {
        #[test]
        fn haversine_metric_properties(
            a in (-90.0f64..=90.0, -180.0f64..180.0),
            b in (-90.0f64..=90.0, -180.0f64..180.0),
        ) {
            prop_assert_eq!(haversine(a, b), haversine(b, a));
            prop_assert!(haversine(a, b) >= 0.0);
            prop_assert_eq!(haversine(a, a), 0.0);
        }

        #[test]
        fn odd_centroid_is_a_member_coordinate(points in prop::collection::vec((-90.0f64..90.0, -180.0f64..180.0), 1..20)) {
            let pts = if points.len() % 2 == 0 { &points[1..] } else { &points[..] };
            let (lat, lon) = median_centroid(pts);
            prop_assert!(pts.iter().any(|p| p.0 == lat));
            prop_assert!(pts.iter().any(|p| p.1 == lon));
        }
    }

    #[test]
    fn even_centroid_averages_middle_values() {
        let c = median_centroid(&[(0.0, 10.0), (2.0, 30.0), (1.0, 20.0), (5.0, 0.0)]);
        assert_eq!(c, (1.5, 15.0));
    }

    fn regions() -> Vec<Polygon> {
        vec![
            Polygon::new("west", vec![vec![(0.0, 0.0), (0.0, 10.0), (10.0, 10.0), (10.0, 0.0)]]).unwrap(),
            Polygon::new("empty", vec![vec![(50.0, 50.0), (50.0, 60.0), (60.0, 60.0)]]).unwrap(),
            Polygon::new("east", vec![vec![(0.0, 10.0), (0.0, 20.0), (10.0, 20.0), (10.0, 10.0)]]).unwrap(),
        ]
    }

    #[test]
    fn polygon_partition() {
        let users = vec![
            Located::new("a", 5.0, 5.0),
            Located::new("b", 5.0, 15.0),
            Located::new("c", 6.0, 16.0),
            Located::new("far", -40.0, -40.0),
        ];
        let p = build_polygon_partition(&users, regions()).unwrap();
        assert_eq!(p.num_classes(), 2);
        assert_eq!(p.unassigned, ["far"]);
        let labels = p.labels();
        assert_eq!(labels["a"], 0);
        assert_eq!(labels["b"], 1);
        assert_eq!(p.assign_class(5.0, 12.0), 1);
        // On the shared edge lon = 10 the half-open rule picks the east square.
        assert_eq!(p.assign_class(5.0, 10.0), 1);
        // Inside the empty polygon: nearest centroid.
        assert_eq!(p.assign_class(55.0, 55.0), 1);
        assert_eq!(p.centroid(1), (5.5, 15.5));
    }

    #[test]
    fn partition_json_round_trip_keeps_assignment() {
        let users = testutil::random_users(4, 300);
        let p = build_adaptive_grid(&users, 4, 20).unwrap();
        let q = Partition::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        for u in &users {
            assert_eq!(q.assign_class(u.lat, u.lon), p.assign_class(u.lat, u.lon));
        }
        let g = p.to_geojson();
        assert_eq!(g["features"].as_array().unwrap().len(), p.num_classes());
        assert_eq!(g["features"][0]["geometry"]["coordinates"][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn training_users_map_to_own_class_in_every_scheme() {
        let users = testutil::random_users(21, 400);
        let parts = vec![
            build_adaptive_grid(&users, 3, 25).unwrap(),
            build_kdtree_partition(&users, 30).unwrap(),
            build_kmeans_partition(&users, 8, 2).unwrap(),
        ];
        for p in parts {
            let labels = p.labels();
            assert_eq!(labels.len(), users.len(), "{:?}", p.scheme());
            for u in &users {
                assert_eq!(p.assign_class(u.lat, u.lon), labels[u.id.as_str()], "{:?} {}", p.scheme(), u.id);
            }
        }
    }

    /// Linear scan over every class geometry, written independently of
    /// `assign_class`.
    fn brute_force(p: &Partition, lat: f64, lon: f64) -> usize {
        let nearest = || {
            (0..p.num_classes())
                .min_by(|&a, &b| haversine((lat, lon), p.centroid(a)).total_cmp(&haversine((lat, lon), p.centroid(b))))
                .unwrap()
        };
        match &p.params {
            PartitionParams::S2Adaptive { .. } => {
                let hits: Vec<usize> = p
                    .classes
                    .iter()
                    .filter(|c| match c.geometry {
                        ClassGeometry::Cell { cell } => latlon_to_cell(lat, lon, cell.level()).unwrap() == cell,
                        _ => false,
                    })
                    .map(|c| c.class_id)
                    .collect();
                assert!(hits.len() <= 1);
                hits.first().copied().unwrap_or_else(nearest)
            }
            PartitionParams::Kdtree { root, .. } => {
                let hits: Vec<usize> = p
                    .classes
                    .iter()
                    .filter(|c| match &c.geometry {
                        ClassGeometry::Box { bounds } => bounds.contains_within(lat, lon, root),
                        _ => false,
                    })
                    .map(|c| c.class_id)
                    .collect();
                assert!(hits.len() <= 1);
                hits.first().copied().unwrap_or_else(nearest)
            }
            PartitionParams::Kmeans { .. } => {
                let d = |c: &GeoClass| match c.geometry {
                    ClassGeometry::Center { lat: a, lon: b } => (a - lat).powi(2) + (b - lon).powi(2),
                    _ => unreachable!(),
                };
                p.classes.iter().min_by(|a, b| d(a).total_cmp(&d(b))).unwrap().class_id
            }
            PartitionParams::Polygons { .. } => unreachable!(),
        }
    }

    #[test]
    fn assignment_matches_linear_scan() {
        let users = testutil::random_users(33, 500);
        let parts = vec![
            build_adaptive_grid(&users, 2, 40).unwrap(),
            build_kdtree_partition(&users, 50).unwrap(),
            build_kmeans_partition(&users, 6, 9).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for p in &parts {
            for _ in 0..10_000 {
                let (lat, lon) = (rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0));
                assert_eq!(p.assign_class(lat, lon), brute_force(p, lat, lon), "{:?} at ({lat}, {lon})", p.scheme());
            }
        }
    }
}
