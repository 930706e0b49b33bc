//! Named polygons, ray-cast containment and GeoJSON input.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GeoError;

/// One or more closed rings of (lat, lon) vertices. Containment is even-odd
/// over all rings, so holes and multi-part shapes both work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub name: String,
    pub rings: Vec<Vec<(f64, f64)>>,
}

impl Polygon {
    pub fn new(name: impl Into<String>, rings: Vec<Vec<(f64, f64)>>) -> Result<Self, GeoError> {
        let name = name.into();
        if rings.is_empty() {
            return Err(GeoError::InvalidPolygon(format!("{name}: no rings")));
        }
        let mut closed = Vec::with_capacity(rings.len());
        for mut ring in rings {
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err(GeoError::InvalidPolygon(format!("{name}: ring with fewer than 3 vertices")));
            }
            if ring.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(GeoError::InvalidPolygon(format!("{name}: non-finite vertex")));
            }
            closed.push(ring);
        }
        Ok(Self { name, rings: closed })
    }

    /// (min_lat, max_lat, min_lon, max_lon).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.rings.iter().flatten().fold(
            (f64::MAX, f64::MIN, f64::MAX, f64::MIN),
            |(a, b, c, d), &(lat, lon)| (a.min(lat), b.max(lat), c.min(lon), d.max(lon)),
        )
    }
}

/// Even-odd test with a ray cast eastward in (lon, lat) space. An edge counts
/// when exactly one endpoint lies strictly above the point, which makes the
/// boundary rule half-open.
pub fn point_in_polygon(lat: f64, lon: f64, polygon: &Polygon) -> bool {
    let (x, y) = (lon, lat);
    let mut inside = false;
    for ring in &polygon.rings {
        let n = ring.len();
        for k in 0..n {
            let (ay, ax) = ring[k];
            let (by, bx) = ring[(k + 1) % n];
            if (ay > y) != (by > y) {
                let cross = ax + (y - ay) * (bx - ax) / (by - ay);
                if x < cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn ring_from_json(v: &Value) -> Option<Vec<(f64, f64)>> {
    v.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            Some((p.get(1)?.as_f64()?, p.first()?.as_f64()?))
        })
        .collect()
}

fn rings_from_geometry(g: &Value) -> Result<Vec<Vec<(f64, f64)>>, String> {
    let kind = g.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = g.get("coordinates").ok_or("geometry without coordinates")?;
    let polys: Vec<&Value> = match kind {
        "Polygon" => vec![coords],
        "MultiPolygon" => coords.as_array().ok_or("bad MultiPolygon")?.iter().collect(),
        other => return Err(format!("unsupported geometry type `{other}`")),
    };
    let mut rings = Vec::new();
    for p in polys {
        for r in p.as_array().ok_or("bad polygon coordinates")? {
            rings.push(ring_from_json(r).ok_or("bad ring coordinates")?);
        }
    }
    Ok(rings)
}

/// Polygons from a GeoJSON `FeatureCollection` (or a single `Feature`), in
/// file order. Names come from the `name` property, else the feature id,
/// else the position.
pub fn parse_geojson_polygons(text: &str) -> Result<Vec<Polygon>, GeoError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| GeoError::InvalidPolygon(format!("not JSON: {e}")))?;
    let features: Vec<&Value> = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| GeoError::InvalidPolygon("FeatureCollection without features".into()))?
            .iter()
            .collect(),
        Some("Feature") => vec![&doc],
        _ => return Err(GeoError::InvalidPolygon("expected a FeatureCollection or Feature".into())),
    };
    features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let props = f.get("properties");
            let name = props
                .and_then(|p| p.get("name").or_else(|| p.get("NAME")))
                .and_then(Value::as_str)
                .map(String::from)
                .or_else(|| f.get("id").map(|id| id.as_str().map(String::from).unwrap_or(id.to_string())))
                .unwrap_or_else(|| format!("polygon_{i}"));
            let geometry = f
                .get("geometry")
                .ok_or_else(|| GeoError::InvalidPolygon(format!("feature {i} has no geometry")))?;
            let rings = rings_from_geometry(geometry).map_err(|e| GeoError::InvalidPolygon(format!("feature {i}: {e}")))?;
            Polygon::new(name, rings)
        })
        .collect()
}

pub fn load_geojson_polygons(path: &Path) -> Result<Vec<Polygon>, GeoError> {
    let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_geojson_polygons(&text)
}
