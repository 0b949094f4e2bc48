//! Procedural test surfaces: icospheres, flat grids, tori and strips.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{norm, Mesh, Point3};

fn unit(p: Point3) -> Point3 {
    let n = norm(p);
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Subdivided icosahedron projected to a sphere; level `l` has
/// `10·4^l + 2` vertices (level 4: 2562).
pub fn icosphere(level: usize, radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(unit)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (verts[a], verts[b]);
                verts.push(unit([
                    0.5 * (pa[0] + pb[0]),
                    0.5 * (pa[1] + pb[1]),
                    0.5 * (pa[2] + pb[2]),
                ]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts
        .into_iter()
        .map(|p| [p[0] * radius, p[1] * radius, p[2] * radius])
        .collect();
    Mesh::new(verts, faces).expect("icosphere is a valid mesh")
}

/// Unit square `[0,1]²` sampled on an `nx × ny` vertex lattice.
pub fn grid(nx: usize, ny: usize) -> Mesh {
    assert!(nx >= 2 && ny >= 2);
    let mut verts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            verts.push([
                i as f64 / (nx - 1) as f64,
                j as f64 / (ny - 1) as f64,
                0.0,
            ]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    Mesh::new(verts, faces).expect("grid is a valid mesh")
}

fn torus_faces(nu: usize, nv: usize) -> Vec<[usize; 3]> {
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i, j + 1);
            let d = idx(i + 1, j + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    faces
}

fn torus_with(nu: usize, nv: usize, radii: impl Fn(f64, f64) -> (f64, f64)) -> Mesh {
    let mut verts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let (big, small) = radii(u, v);
            verts.push([
                (big + small * v.cos()) * u.cos(),
                (big + small * v.cos()) * u.sin(),
                small * v.sin(),
            ]);
        }
    }
    Mesh::new(verts, torus_faces(nu, nv)).expect("torus is a valid mesh")
}

/// Torus with `nu × nv` vertices and seeded low-frequency bumps on both
/// radii; generic seeds give no intrinsic symmetry.
pub fn bumpy_torus(nu: usize, nv: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(1..=3) as f64,
                rng.gen_range(0..=2) as f64,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.04..0.09),
            )
        })
        .collect();
    torus_with(nu, nv, |u, v| {
        let bump: f64 = terms
            .iter()
            .map(|&(ku, kv, phase, amp)| amp * (ku * u + kv * v + phase).sin())
            .sum();
        (2.0 + 0.35 * (u + 0.3).cos(), 0.7 * (1.0 + bump))
    })
}

/// Torus bumped only by even functions of the angle `u`, so the reflection
/// `y ↦ -y` is an exact isometry. Returns the mesh and the vertex pairing.
pub fn mirrored_torus(nu: usize, nv: usize) -> (Mesh, Vec<usize>) {
    let mesh = torus_with(nu, nv, |u, v| {
        let bump = 0.08 * (2.0 * u).cos() + 0.06 * u.cos() * v.sin();
        (2.0 + 0.4 * u.cos(), 0.7 * (1.0 + bump))
    });
    let pairing = (0..nu)
        .flat_map(|i| (0..nv).map(move |j| ((nu - i) % nu) * nv + j))
        .collect();
    (mesh, pairing)
}

/// Strip of `n` unit-length bottom edges along the x axis; bottom vertex `i`
/// has index `i`, top vertices follow.
pub fn strip(n: usize, height: f64) -> Mesh {
    let mut verts: Vec<Point3> = (0..=n).map(|i| [i as f64, 0.0, 0.0]).collect();
    verts.extend((0..n).map(|i| [i as f64 + 0.5, height, 0.0]));
    let mut faces = Vec::new();
    for i in 0..n {
        let top = n + 1 + i;
        faces.push([i, i + 1, top]);
        if i + 1 < n {
            faces.push([i + 1, top + 1, top]);
        }
    }
    Mesh::new(verts, faces).expect("strip is a valid mesh")
}

/// Displace every vertex radially by `1 + amplitude · f(x)`, where `f` is a
/// seeded smooth field (a few random plane waves) scaled to `max |f| = 1`.
/// Connectivity, and hence the identity correspondence, is preserved.
pub fn radial_noise(mesh: &Mesh, amplitude: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(Point3, f64, f64)> = (0..8)
        .map(|_| {
            let dir = unit([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            let freq = rng.gen_range(1.0..3.0);
            (
                [dir[0] * freq, dir[1] * freq, dir[2] * freq],
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let field: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| {
            waves
                .iter()
                .map(|(k, ph, a)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
                .sum()
        })
        .collect();
    let peak = field.iter().fold(0.0f64, |m, f| m.max(f.abs())).max(1e-300);
    let verts = mesh
        .vertices()
        .iter()
        .zip(&field)
        .map(|(p, f)| {
            let s = 1.0 + amplitude * f / peak;
            [p[0] * s, p[1] * s, p[2] * s]
        })
        .collect();
    mesh.with_vertices(verts).expect("radial noise keeps the mesh valid")
}

/// Fisher-Yates permutation of `0..n` from a seed.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_counts() {
        assert_eq!(icosphere(0, 1.0).num_vertices(), 12);
        assert_eq!(icosphere(4, 1.0).num_vertices(), 2562);
        assert_eq!(grid(64, 64).num_vertices(), 4096);
        assert_eq!(bumpy_torus(40, 25, 1).num_vertices(), 1000);
        assert_eq!(strip(5, 1.0).num_vertices(), 11);
    }

    #[test]
    fn icosphere_area_approaches_sphere() {
        let area = icosphere(4, 1.0).total_area();
        assert!((area - 4.0 * PI).abs() / (4.0 * PI) < 0.01);
    }

    #[test]
    fn mirrored_torus_pairing_is_isometric() {
        let (mesh, pairing) = mirrored_torus(20, 10);
        for (i, &j) in pairing.iter().enumerate() {
            let (a, b) = (mesh.vertices()[i], mesh.vertices()[j]);
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[1] + b[1]).abs() < 1e-12);
            assert!((a[2] - b[2]).abs() < 1e-12);
            assert_eq!(pairing[j], i);
        }
    }
}
