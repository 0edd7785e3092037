//! Structure targets (pairwise distances, pseudo-dihedral differences) and
//! the sinusoidal positional encoding.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::trajectory::{dist, TrajectoryFrame};

/// Cross products below this norm make a dihedral undefined.
const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StructureTargets {
    /// n × n residue-center distances.
    pub pairdist: Array2<f64>,
    /// Per-residue pseudo-dihedrals φ_0 … φ_(n−4).
    pub dihedrals: Vec<f64>,
    /// n' × n' with entry (a, b) = wrap(φ_a − φ_b).
    pub dihedral_diff: Array2<f64>,
    /// Dihedrals that were undefined (collinear) and set to 0.
    pub collinear: usize,
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Torsion angle of four points in (−π, π]; `None` when three consecutive
/// points are collinear.
pub fn dihedral(p: [&[f64; 3]; 4]) -> Option<f64> {
    let b1 = sub(p[1], p[0]);
    let b2 = sub(p[2], p[1]);
    let b3 = sub(p[3], p[2]);
    let n1 = cross(&b1, &b2);
    let n2 = cross(&b2, &b3);
    let nb2 = dot(&b2, &b2).sqrt();
    if dot(&n1, &n1).sqrt() < COLLINEAR_EPS || dot(&n2, &n2).sqrt() < COLLINEAR_EPS || nb2 < COLLINEAR_EPS {
        return None;
    }
    let y = nb2 * dot(&b1, &n2);
    let x = dot(&n1, &n2);
    Some(wrap_angle(y.atan2(x)))
}

pub fn structure_targets(frame: &TrajectoryFrame) -> Result<StructureTargets> {
    let n = frame.n();
    if n < 4 {
        return Err(Error::arg("structure targets need at least 4 residues"));
    }
    let c = &frame.coords;
    let pairdist = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { dist(&c[i], &c[j]) });
    let mut collinear = 0;
    let dihedrals: Vec<f64> = (0..n - 3)
        .map(|i| {
            dihedral([&c[i], &c[i + 1], &c[i + 2], &c[i + 3]]).unwrap_or_else(|| {
                collinear += 1;
                0.0
            })
        })
        .collect();
    let m = dihedrals.len();
    let dihedral_diff = Array2::from_shape_fn((m, m), |(a, b)| if a == b { 0.0 } else { wrap_angle(dihedrals[a] - dihedrals[b]) });
    Ok(StructureTargets { pairdist, dihedrals, dihedral_diff, collinear })
}

/// Row-major strict upper triangle.
pub fn upper_triangle(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(m[[i, j]]);
        }
    }
    out
}

/// Rebuild an n × n matrix from its strict upper triangle; the lower
/// triangle is `sign ·` the mirrored entry and the diagonal is zero.
pub fn from_upper_triangle(values: &[f64], n: usize, sign: f64) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            m[[i, j]] = values[k];
            m[[j, i]] = sign * values[k];
            k += 1;
        }
    }
    m
}

/// n × 2d matrix; column pair `p` (0-based) holds sin and cos of
/// `i / 10000^(2(p+1)/d)` in its even and odd column.
pub fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 2 * d), |(i, c)| {
        let p = c / 2;
        let arg = i as f64 / 10000f64.powf(2.0 * (p + 1) as f64 / d as f64);
        if c % 2 == 0 {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AminoAcid;

    fn frame(coords: Vec<[f64; 3]>) -> TrajectoryFrame {
        let seq = vec![AminoAcid::from_index(0).unwrap(); coords.len()];
        TrajectoryFrame { t: 0, coords, sequence: seq }
    }

    #[test]
    fn planar_zigzag_is_trans() {
        let phi = dihedral([&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[2.0, 1.0, 0.0]]).unwrap();
        assert!((phi - PI).abs() < 1e-12);
        let cis = dihedral([&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap();
        assert!(cis.abs() < 1e-12);
        // right-handed quarter turn
        let q = dihedral([&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]).unwrap();
        assert!((q.abs() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn targets_on_collinear_and_zigzag() {
        let t = structure_targets(&frame(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])).unwrap();
        assert_eq!(t.collinear, 1);
        assert_eq!(t.dihedrals, vec![0.0]);
        let expect = ndarray::array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        assert_eq!(t.pairdist.slice(ndarray::s![..3, ..3]), expect);

        let t = structure_targets(&frame(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [2.0, 1.0, 0.3],
            [2.5, 2.0, -0.4],
            [3.5, 2.2, 0.8],
        ]))
        .unwrap();
        assert_eq!(t.collinear, 0);
        let m = t.dihedral_diff.nrows();
        assert_eq!(m, 3);
        for a in 0..m {
            assert_eq!(t.dihedral_diff[[a, a]], 0.0);
            for b in 0..m {
                let v = t.dihedral_diff[[a, b]];
                assert!(v > -PI && v <= PI);
                assert!((wrap_angle(v + t.dihedral_diff[[b, a]])).abs() < 1e-12);
            }
        }
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(t.pairdist[[i, j]], t.pairdist[[j, i]]);
            }
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn upper_triangle_round_trip() {
        let m = ndarray::array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        let u = upper_triangle(&m);
        assert_eq!(u, vec![1.0, 2.0, 3.0]);
        assert_eq!(from_upper_triangle(&u, 3, 1.0), m);
    }

    #[test]
    fn positional_encoding_values() {
        let r = positional_encoding(5, 3);
        assert_eq!(r.dim(), (5, 6));
        for c in 0..6 {
            assert_eq!(r[[0, c]], if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(r.iter().all(|v| (-1.0..=1.0).contains(v)));
        let r = positional_encoding(2, 1);
        let arg = 1.0 / 10000f64.powf(2.0);
        assert_eq!(r[[1, 0]], arg.sin());
        assert_eq!(r[[1, 1]], arg.cos());
    }
}
