//! Nested mesh hierarchies, vertex patches and the RT0 inclusion between levels.

use crate::linalg::SparseMatrix;
use crate::mesh::{uniform_refine, RefinementMap, TriangleMesh};

#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    meshes: Vec<TriangleMesh>,
    maps: Vec<RefinementMap>,
    roots: Vec<Vec<usize>>,
}

/// Builds `levels` meshes by repeated red refinement of `coarse`. Level 0 is
/// the coarsest mesh.
pub fn build_hierarchy(coarse: TriangleMesh, levels: usize) -> MeshHierarchy {
    assert!(levels >= 1, "a hierarchy needs at least one level");
    let mut roots = vec![(0..coarse.num_triangles()).collect::<Vec<_>>()];
    let mut meshes = vec![coarse];
    let mut maps = Vec::with_capacity(levels - 1);
    for _ in 1..levels {
        let (fine, map) = uniform_refine(meshes.last().unwrap());
        let prev = roots.last().unwrap();
        let fine_roots = map.parent_triangles().iter().map(|&p| prev[p]).collect();
        roots.push(fine_roots);
        meshes.push(fine);
        maps.push(map);
    }
    MeshHierarchy {
        meshes,
        maps,
        roots,
    }
}

impl MeshHierarchy {
    pub fn num_levels(&self) -> usize {
        self.meshes.len()
    }

    pub fn mesh(&self, level: usize) -> &TriangleMesh {
        &self.meshes[level]
    }

    pub fn finest(&self) -> &TriangleMesh {
        self.meshes.last().unwrap()
    }

    pub fn meshes(&self) -> &[TriangleMesh] {
        &self.meshes
    }

    /// Refinement from `level` to `level + 1`.
    pub fn refinement(&self, level: usize) -> &RefinementMap {
        &self.maps[level]
    }

    /// Coarsest-level ancestor of every triangle on `level`.
    pub fn roots(&self, level: usize) -> &[usize] {
        &self.roots[level]
    }

    pub fn mesh_size(&self, level: usize) -> f64 {
        self.meshes[level].mesh_size()
    }
}

/// Edges and triangles around one interior vertex together with the
/// divergence-free direction supported there.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchIndexSet {
    pub level: usize,
    pub vertex: usize,
    /// Incident edges, counterclockwise around the vertex.
    pub edge_ids: Vec<usize>,
    pub triangle_ids: Vec<usize>,
    /// Fluxes of the curl of the hat function at `vertex` through `edge_ids`:
    /// +1 when the vertex is the edge head, −1 when it is the tail.
    pub kernel_vector: Vec<f64>,
}

impl PatchIndexSet {
    pub fn len(&self) -> usize {
        self.edge_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_ids.is_empty()
    }

    /// Kernel vector scattered into a global flux vector.
    pub fn kernel_flux(&self, num_edges: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_edges];
        for (&e, &c) in self.edge_ids.iter().zip(&self.kernel_vector) {
            out[e] = c;
        }
        out
    }
}

/// One patch per interior vertex of `mesh`, in increasing vertex order.
pub fn mesh_patches(mesh: &TriangleMesh, level: usize) -> Vec<PatchIndexSet> {
    let vertex_edges = mesh.vertex_edges();
    let vertex_tris = mesh.vertex_triangles();
    let angle = |v: usize, p: [f64; 2]| {
        let o = mesh.vertices()[v];
        (p[1] - o[1]).atan2(p[0] - o[0])
    };
    mesh.interior_vertices()
        .into_iter()
        .map(|v| {
            let mut edge_ids = vertex_edges[v].clone();
            edge_ids.sort_by(|&a, &b| {
                angle(v, mesh.edge_midpoint(a)).total_cmp(&angle(v, mesh.edge_midpoint(b)))
            });
            let mut triangle_ids = vertex_tris[v].clone();
            triangle_ids.sort_by(|&a, &b| {
                angle(v, mesh.centroid(a)).total_cmp(&angle(v, mesh.centroid(b)))
            });
            let kernel_vector = edge_ids
                .iter()
                .map(|&e| if mesh.edges()[e][1] == v { 1.0 } else { -1.0 })
                .collect();
            PatchIndexSet {
                level,
                vertex: v,
                edge_ids,
                triangle_ids,
                kernel_vector,
            }
        })
        .collect()
}

pub fn vertex_patches(hier: &MeshHierarchy, level: usize) -> Vec<PatchIndexSet> {
    mesh_patches(hier.mesh(level), level)
}

/// Natural inclusion of level-k RT0 fluxes into level k+1 (fine edges × coarse edges).
#[derive(Debug, Clone)]
pub struct Prolongation {
    pub matrix: SparseMatrix,
}

impl Prolongation {
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        self.matrix.spmv(coarse).expect("coarse flux length")
    }

    pub fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.matrix.spmv_transpose(fine).expect("fine flux length")
    }
}

pub fn build_prolongation(hier: &MeshHierarchy, level: usize) -> Prolongation {
    let coarse = hier.mesh(level);
    let fine = hier.mesh(level + 1);
    let map = hier.refinement(level);
    let mut trip = Vec::with_capacity(2 * coarse.num_edges() + 9 * coarse.num_triangles());
    for (e, kids) in map.child_edges.iter().enumerate() {
        trip.push((kids[0], e, 0.5));
        trip.push((kids[1], e, 0.5));
    }
    for t in 0..coarse.num_triangles() {
        let pts = coarse.triangle_points(t);
        let area = coarse.area(t);
        let ids = coarse.triangle_edges(t);
        let signs = coarse.triangle_signs(t);
        for &fe in &map.interior_edges[t] {
            let mid = fine.edge_midpoint(fe);
            let n = fine.edge_normal(fe);
            let len = fine.edge_length(fe);
            // the normal component of an affine field is linear along the
            // segment, so the midpoint rule is exact
            for j in 0..3 {
                let s = signs[j] / (2.0 * area);
                let phi = [s * (mid[0] - pts[j][0]), s * (mid[1] - pts[j][1])];
                trip.push((fe, ids[j], len * (phi[0] * n[0] + phi[1] * n[1])));
            }
        }
    }
    Prolongation {
        matrix: SparseMatrix::from_triplets(fine.num_edges(), coarse.num_edges(), &trip),
    }
}

/// r_coarse = Pᵀ r_fine.
pub fn restrict_residual(p: &Prolongation, r_fine: &[f64]) -> crate::Result<Vec<f64>> {
    p.matrix.spmv_transpose(r_fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_div, assemble_mass, rt0_value, CoefficientTensor};
    use crate::linalg::{dot, DenseMatrix};
    use crate::mesh::{build_square_mesh, distort_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flux(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn level_counts_and_sizes() {
        let h = build_hierarchy(build_square_mesh(4), 1);
        assert_eq!(h.num_levels(), 1);
        assert_eq!(h.finest().num_triangles(), 32);
        let h = build_hierarchy(build_square_mesh(4), 4);
        assert_eq!(h.finest().num_triangles(), 2048);
        for k in 0..3 {
            assert!((h.mesh_size(k) / h.mesh_size(k + 1) - 2.0).abs() < 1e-12);
        }
        for k in 0..4 {
            for (t, &r) in h.roots(k).iter().enumerate() {
                let c = h.mesh(k).centroid(t);
                assert!(h.mesh(0).barycentric(r, c).iter().all(|&b| b > 0.0));
            }
        }
    }

    #[test]
    fn structured_patch_shape() {
        let mesh = build_square_mesh(4);
        let patches = mesh_patches(&mesh, 0);
        assert_eq!(patches.len(), 9);
        for p in &patches {
            assert_eq!(p.edge_ids.len(), 6);
            assert_eq!(p.triangle_ids.len(), 6);
            assert!(p.kernel_vector.iter().all(|c| c.abs() == 1.0));
        }
    }

    #[test]
    fn kernel_vectors_are_divergence_free() {
        for mesh in [
            build_square_mesh(4),
            distort_mesh(&build_square_mesh(4), 0.4, 3).unwrap(),
        ] {
            let b = assemble_div(&mesh);
            for p in mesh_patches(&mesh, 0) {
                let bc = b.spmv(&p.kernel_flux(mesh.num_edges())).unwrap();
                assert!(bc.iter().all(|&v| v == 0.0));
            }
        }
    }

    /// Rank of B on free DOFs by dense elimination; kernel dimension must equal
    /// the number of interior vertices.
    #[test]
    fn patch_count_equals_kernel_dimension() {
        let mesh = build_square_mesh(8);
        let b = assemble_div(&mesh);
        let free: Vec<usize> = (0..mesh.num_edges())
            .filter(|&e| !mesh.is_boundary_edge(e))
            .collect();
        let rows: Vec<usize> = (0..mesh.num_triangles()).collect();
        let mut d: DenseMatrix = b.submatrix(&rows, &free);
        let (nr, nc) = (d.nrows(), d.ncols());
        let mut rank = 0;
        for c in 0..nc {
            let Some(p) = (rank..nr).find(|&r| d[(r, c)].abs() > 1e-9) else {
                continue;
            };
            for j in 0..nc {
                let tmp = d[(rank, j)];
                d[(rank, j)] = d[(p, j)];
                d[(p, j)] = tmp;
            }
            for r in 0..nr {
                if r != rank && d[(r, c)] != 0.0 {
                    let f = d[(r, c)] / d[(rank, c)];
                    for j in 0..nc {
                        d[(r, j)] -= f * d[(rank, j)];
                    }
                }
            }
            rank += 1;
        }
        assert_eq!(free.len(), 176);
        assert_eq!(rank, 127);
        assert_eq!(mesh_patches(&mesh, 0).len(), 176 - 127);
    }

    #[test]
    fn child_edges_carry_half() {
        let h = build_hierarchy(build_square_mesh(2), 2);
        let p = build_prolongation(&h, 0);
        for (e, kids) in h.refinement(0).child_edges.iter().enumerate() {
            assert_eq!(p.matrix.get(kids[0], e), 0.5);
            assert_eq!(p.matrix.get(kids[1], e), 0.5);
        }
    }

    #[test]
    fn prolongation_embeds_fields_exactly() {
        let coarse = distort_mesh(&build_square_mesh(4), 0.3, 11).unwrap();
        let h = build_hierarchy(coarse, 2);
        let p = build_prolongation(&h, 0);
        let (cm, fm) = (h.mesh(0), h.mesh(1));
        let parents = h.refinement(0).parent_triangles();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let uc = random_flux(cm.num_edges(), &mut rng);
            let uf = p.apply(&uc);
            for _ in 0..10 {
                let t = rng.gen_range(0..fm.num_triangles());
                let mut w = [
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                ];
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                let pts = fm.triangle_points(t);
                let x = [
                    w[0] * pts[0][0] + w[1] * pts[1][0] + w[2] * pts[2][0],
                    w[0] * pts[0][1] + w[1] * pts[1][1] + w[2] * pts[2][1],
                ];
                let vf = rt0_value(fm, &uf, t, x);
                let vc = rt0_value(cm, &uc, parents[t], x);
                assert!((vf[0] - vc[0]).abs() < 1e-12 && (vf[1] - vc[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_and_galerkin_identities() {
        let coarse = distort_mesh(&build_square_mesh(4), 0.3, 2).unwrap();
        let h = build_hierarchy(coarse, 2);
        let p = build_prolongation(&h, 0);
        let k = CoefficientTensor::Scalar(0.5);
        let mc = assemble_mass(h.mesh(0), &k).unwrap();
        let mf = assemble_mass(h.mesh(1), &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let uc = random_flux(mc.nrows(), &mut rng);
        let uf = p.apply(&uc);
        let ec = dot(&uc, &mc.spmv(&uc).unwrap());
        let ef = dot(&uf, &mf.spmv(&uf).unwrap());
        assert!((ec - ef).abs() <= 1e-12 * ec);
        let galerkin = p
            .matrix
            .transpose()
            .matmul(&mf)
            .unwrap()
            .matmul(&p.matrix)
            .unwrap();
        let lhs = galerkin.spmv(&uc).unwrap();
        let rhs = mc.spmv(&uc).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn restriction_is_adjoint() {
        let h = build_hierarchy(build_square_mesh(3), 2);
        let p = build_prolongation(&h, 0);
        assert!(restrict_residual(&p, &vec![0.0; h.mesh(1).num_edges()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let uc = random_flux(h.mesh(0).num_edges(), &mut rng);
        let rf = random_flux(h.mesh(1).num_edges(), &mut rng);
        let lhs = dot(&p.apply(&uc), &rf);
        let rhs = dot(&uc, &restrict_residual(&p, &rf).unwrap());
        assert!((lhs - rhs).abs() < 1e-14 * (1.0 + lhs.abs()) * 10.0);
    }

    #[test]
    fn coarse_kernels_stay_divergence_free() {
        let h = build_hierarchy(distort_mesh(&build_square_mesh(4), 0.4, 6).unwrap(), 2);
        let p = build_prolongation(&h, 0);
        let bf = assemble_div(h.mesh(1));
        for patch in vertex_patches(&h, 0) {
            let fine = p.apply(&patch.kernel_flux(h.mesh(0).num_edges()));
            assert!(bf.spmv(&fine).unwrap().iter().all(|v| v.abs() < 1e-13));
        }
        // divergence of a prolongated flux is split evenly among the children
        let bc = assemble_div(h.mesh(0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let uc = random_flux(h.mesh(0).num_edges(), &mut rng);
        let dc = bc.spmv(&uc).unwrap();
        let df = bf.spmv(&p.apply(&uc)).unwrap();
        for (t, kids) in h.refinement(0).child_triangles.iter().enumerate() {
            for &c in kids {
                assert!((df[c] - dc[t] / 4.0).abs() < 1e-13);
            }
        }
    }
}
