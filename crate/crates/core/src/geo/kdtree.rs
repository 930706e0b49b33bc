//! k-d tree partition by recursive median splits.

use super::{
    median_centroid, validate_users, ClassGeometry, GeoClass, GeoError, LatLonBox, Located, Partition, PartitionParams,
};

struct Leaf {
    bounds: LatLonBox,
    members: Vec<usize>,
    oversized: bool,
}

fn coord(u: &Located, dim: usize) -> f64 {
    if dim == 0 {
        u.lat
    } else {
        u.lon
    }
}

/// Split position in `sorted` (members sorted along `dim`) closest to the
/// middle such that the values on either side differ. `None` if all equal.
fn split_index(users: &[Located], sorted: &[usize], dim: usize) -> Option<usize> {
    let n = sorted.len();
    let mid = n / 2;
    (1..n)
        .filter(|&i| coord(&users[sorted[i - 1]], dim) < coord(&users[sorted[i]], dim))
        .min_by_key(|&i| (i.abs_diff(mid), i))
}

fn recurse(users: &[Located], mut idx: Vec<usize>, bounds: LatLonBox, threshold: usize, out: &mut Vec<Leaf>) {
    if idx.len() < threshold {
        out.push(Leaf {
            bounds,
            members: idx,
            oversized: false,
        });
        return;
    }
    let extent = LatLonBox::around(&idx.iter().map(|&i| users[i].coord()).collect::<Vec<_>>());
    let lat_span = extent.max_lat - extent.min_lat;
    let lon_span = extent.max_lon - extent.min_lon;
    let order = if lon_span > lat_span { [1, 0] } else { [0, 1] };
    for dim in order {
        idx.sort_by(|&a, &b| coord(&users[a], dim).total_cmp(&coord(&users[b], dim)).then(a.cmp(&b)));
        if let Some(i) = split_index(users, &idx, dim) {
            let value = 0.5 * (coord(&users[idx[i - 1]], dim) + coord(&users[idx[i]], dim));
            let right = idx.split_off(i);
            let (mut lo, mut hi) = (bounds, bounds);
            if dim == 0 {
                lo.max_lat = value;
                hi.min_lat = value;
            } else {
                lo.max_lon = value;
                hi.min_lon = value;
            }
            recurse(users, idx, lo, threshold, out);
            recurse(users, right, hi, threshold, out);
            return;
        }
    }
    // Every member shares one coordinate: nothing left to split.
    out.push(Leaf {
        bounds,
        members: idx,
        oversized: true,
    });
}

/// Root box = bounding box of the users; split the larger side at the member
/// median (between two distinct coordinates) while a node holds at least
/// `threshold` users.
pub fn build_kdtree_partition(users: &[Located], threshold: usize) -> Result<Partition, GeoError> {
    validate_users(users)?;
    if threshold == 0 {
        return Err(GeoError::InvalidParameter("leaf threshold must be at least 1".into()));
    }
    let root = LatLonBox::around(&users.iter().map(Located::coord).collect::<Vec<_>>());
    let mut leaves = Vec::new();
    recurse(users, (0..users.len()).collect(), root, threshold, &mut leaves);
    let classes = leaves
        .into_iter()
        .enumerate()
        .map(|(class_id, leaf)| {
            let coords: Vec<(f64, f64)> = leaf.members.iter().map(|&i| users[i].coord()).collect();
            GeoClass {
                class_id,
                geometry: ClassGeometry::Box { bounds: leaf.bounds },
                members: leaf.members.iter().map(|&i| users[i].id.clone()).collect(),
                centroid: median_centroid(&coords),
                oversized: leaf.oversized,
                straddles_antimeridian: false,
            }
        })
        .collect();
    Ok(Partition::new(
        PartitionParams::Kdtree {
            leaf_threshold: threshold,
            root,
        },
        classes,
        Vec::new(),
    ))
}
