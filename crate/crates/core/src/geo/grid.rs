//! Bottom-up adaptive grid over level-30 cells.

use std::collections::BTreeMap;

use super::{
    latlon_to_cell, median_centroid, validate_users, CellId, ClassGeometry, GeoClass, GeoError, Located, Partition,
    PartitionParams, MAX_LEVEL,
};

struct Node {
    members: Vec<usize>,
    /// Some descendant already failed to merge, so this cell never can.
    blocked: bool,
}

/// Start from the occupied level-30 leaves and climb one level at a time:
/// a parent absorbs its occupied children when their combined count is
/// below `t_max`, never above level `l_min`. Children of a parent that cannot
/// merge become classes. A leaf holding more than `t_max` users is kept and
/// flagged.
pub fn build_adaptive_grid(users: &[Located], l_min: u8, t_max: usize) -> Result<Partition, GeoError> {
    validate_users(users)?;
    if l_min > MAX_LEVEL {
        return Err(GeoError::InvalidLevel(l_min));
    }
    if t_max == 0 {
        return Err(GeoError::InvalidParameter("t_max must be at least 1".into()));
    }
    let mut active: BTreeMap<CellId, Node> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        let leaf = latlon_to_cell(u.lat, u.lon, MAX_LEVEL)?;
        active
            .entry(leaf)
            .or_insert_with(|| Node {
                members: Vec::new(),
                blocked: false,
            })
            .members
            .push(i);
    }

    let mut done: Vec<(CellId, Vec<usize>)> = Vec::new();
    for level in (l_min..MAX_LEVEL).rev() {
        let mut groups: BTreeMap<CellId, Vec<(CellId, Node)>> = BTreeMap::new();
        for (cell, node) in std::mem::take(&mut active) {
            groups.entry(cell.ancestor(level)).or_default().push((cell, node));
        }
        for (parent, children) in groups {
            let total: usize = children.iter().map(|(_, n)| n.members.len()).sum();
            let blocked = children.iter().any(|(_, n)| n.blocked) || total >= t_max;
            if blocked {
                for (cell, node) in children {
                    if !node.blocked {
                        done.push((cell, node.members));
                    }
                }
                active.insert(
                    parent,
                    Node {
                        members: Vec::new(),
                        blocked: true,
                    },
                );
            } else {
                let members = children.into_iter().flat_map(|(_, n)| n.members).collect();
                active.insert(parent, Node { members, blocked: false });
            }
        }
    }
    done.extend(active.into_iter().filter(|(_, n)| !n.blocked).map(|(c, n)| (c, n.members)));
    done.sort_by_key(|(c, _)| *c);

    let classes = done
        .into_iter()
        .enumerate()
        .map(|(class_id, (cell, idx))| {
            let coords: Vec<(f64, f64)> = idx.iter().map(|&i| users[i].coord()).collect();
            let lons: Vec<f64> = cell.geometry().corners.iter().map(|c| c.1).collect();
            let span = lons.iter().cloned().fold(f64::MIN, f64::max) - lons.iter().cloned().fold(f64::MAX, f64::min);
            GeoClass {
                class_id,
                geometry: ClassGeometry::Cell { cell },
                members: idx.iter().map(|&i| users[i].id.clone()).collect(),
                centroid: median_centroid(&coords),
                oversized: idx.len() > t_max,
                straddles_antimeridian: span > 180.0,
            }
        })
        .collect();
    Ok(Partition::new(PartitionParams::S2Adaptive { l_min, t_max }, classes, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random_users;
    use super::*;
    use std::collections::BTreeSet;

    /// Top-down statement of the same rule: a cell at level >= l_min holding
    /// fewer than t_max users is a class; otherwise split into occupied
    /// children, down to level 30.
    fn oracle(users: &[Located], l_min: u8, t_max: usize) -> BTreeSet<CellId> {
        fn recurse(cell: CellId, pts: Vec<CellId>, l_min: u8, t_max: usize, out: &mut BTreeSet<CellId>) {
            if (cell.level() >= l_min && pts.len() < t_max) || cell.level() == MAX_LEVEL {
                out.insert(cell);
                return;
            }
            for child in cell.children().unwrap() {
                let inside: Vec<CellId> = pts.iter().copied().filter(|p| child.contains(*p)).collect();
                if !inside.is_empty() {
                    recurse(child, inside, l_min, t_max, out);
                }
            }
        }
        let leaves: Vec<CellId> = users.iter().map(|u| latlon_to_cell(u.lat, u.lon, 30).unwrap()).collect();
        let mut out = BTreeSet::new();
        for f in 0..6 {
            let face = CellId::face_cell(f).unwrap();
            let pts: Vec<CellId> = leaves.iter().copied().filter(|l| l.face() == f).collect();
            if !pts.is_empty() {
                recurse(face, pts, l_min, t_max, &mut out);
            }
        }
        out
    }

    fn cells(p: &Partition) -> BTreeSet<CellId> {
        p.classes
            .iter()
            .map(|c| match c.geometry {
                ClassGeometry::Cell { cell } => cell,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn tight_cluster_climbs_to_l_min() {
        let users: Vec<Located> = (0..10)
            .map(|i| Located::new(format!("u{i}"), 40.0 + 1e-4 * i as f64, -74.0))
            .collect();
        let p = build_adaptive_grid(&users, 5, 20).unwrap();
        assert_eq!(p.num_classes(), 1);
        let c = &p.classes[0];
        assert_eq!(c.members.len(), 10);
        assert!(matches!(c.geometry, ClassGeometry::Cell { cell } if cell.level() == 5));
    }

    #[test]
    fn antipodes_with_t_max_one_never_merge() {
        let users = vec![Located::new("a", 10.0, 20.0), Located::new("b", -10.0, -160.0)];
        let p = build_adaptive_grid(&users, 0, 1).unwrap();
        assert_eq!(p.num_classes(), 2);
        assert!(p.classes.iter().all(|c| matches!(c.geometry, ClassGeometry::Cell { cell } if cell.level() == 30)));
        assert!(p.classes.iter().all(|c| !c.oversized));
    }

    #[test]
    fn crowded_leaf_is_flagged() {
        let mut users: Vec<Located> = (0..5).map(|i| Located::new(format!("d{i}"), 1.0, 1.0)).collect();
        users.push(Located::new("x", 50.0, 50.0));
        let p = build_adaptive_grid(&users, 3, 3).unwrap();
        let crowded: Vec<&GeoClass> = p.classes.iter().filter(|c| c.oversized).collect();
        assert_eq!(crowded.len(), 1);
        assert_eq!(crowded[0].members.len(), 5);
        assert_eq!(cells(&p), oracle(&users, 3, 3));
    }

    #[test]
    fn errors() {
        assert!(matches!(build_adaptive_grid(&[], 3, 3), Err(GeoError::NoTrainingUsers)));
        let u = [Located::new("a", 0.0, 0.0)];
        assert!(build_adaptive_grid(&u, 31, 3).is_err());
        assert!(build_adaptive_grid(&u, 3, 0).is_err());
    }

    #[test]
    fn invariants_on_random_sets() {
        for seed in 0..30 {
            let users = random_users(seed, 200 + 10 * seed as usize);
            let (l_min, t_max) = ((seed % 8) as u8, 5 + (seed as usize * 7) % 60);
            let p = build_adaptive_grid(&users, l_min, t_max).unwrap();
            let got = cells(&p);
            assert_eq!(got, oracle(&users, l_min, t_max), "seed {seed}");
            for a in &got {
                for b in &got {
                    assert!(a == b || !a.contains(*b), "{a} contains {b}");
                }
            }
            let total: usize = p.classes.iter().map(|c| c.members.len()).sum();
            assert_eq!(total, users.len());
        }
    }

    #[test]
    fn class_count_grows_with_l_min() {
        let users = random_users(77, 600);
        let counts: Vec<usize> = (0..=12).map(|l| build_adaptive_grid(&users, l, 40).unwrap().num_classes()).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }
}
