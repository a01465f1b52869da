//! Exact integer polygon predicates on the voxel-corner lattice.

type P = [i64; 2];

/// Twice the signed area (shoelace).
pub fn polygon_area2(v: &[P]) -> i64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

fn orient(a: P, b: P, c: P) -> i64 {
    ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).signum()
}

fn on_segment(a: P, b: P, p: P) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection, including touching and collinear overlap.
fn segments_touch(a: P, b: P, c: P, d: P) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    (o1 == 0 && on_segment(a, b, c))
        || (o2 == 0 && on_segment(a, b, d))
        || (o3 == 0 && on_segment(c, d, a))
        || (o4 == 0 && on_segment(c, d, b))
}

/// True when the closed polygon has ≥3 distinct vertices, non-zero area, and
/// no two edges meet except consecutive edges at their shared vertex.
pub fn is_simple_polygon(v: &[P]) -> bool {
    let n = v.len();
    if n < 3 || polygon_area2(v) == 0 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if v[i] == v[j] {
                return false;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in i + 1..n {
            let (c, d) = (v[j], v[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Consecutive edges share one vertex; they must not fold back onto each other.
                let (shared, other_a, other_b) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(other_a, shared, other_b) == 0 {
                    let dir1 = [other_a[0] - shared[0], other_a[1] - shared[1]];
                    let dir2 = [other_b[0] - shared[0], other_b[1] - shared[1]];
                    if dir1[0] * dir2[0] + dir1[1] * dir2[1] > 0 {
                        return false;
                    }
                }
            } else if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd test of voxel center `(y + 0.5, x + 0.5)`; exact because centers
/// never share a row with lattice vertices in doubled coordinates.
pub(crate) fn voxel_center_inside(v: &[P], y: i64, x: i64) -> bool {
    let (py, px) = (2 * y + 1, 2 * x + 1);
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (ay, ax, by, bx) = (2 * a[0], 2 * a[1], 2 * b[0], 2 * b[1]);
        if (ay > py) != (by > py) {
            // px < ax + (py - ay) * (bx - ax) / (by - ay)
            let lhs = (px - ax) * (by - ay);
            let rhs = (py - ay) * (bx - ax);
            if (by - ay > 0 && lhs < rhs) || (by - ay < 0 && lhs > rhs) {
                inside = !inside;
            }
        }
    }
    inside
}
